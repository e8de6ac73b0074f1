#pragma once

#include <atomic>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stal3d/detector.hpp"

namespace stal3d {

/// Scored proposals for one target scene.
struct PseudoLabelSet {
  std::string scene_id;
  std::vector<Box3D> boxes;
};

/// Keeps boxes with score >= phi, preserving order.
std::vector<Box3D> filter_by_score(const std::vector<Box3D>& boxes, double phi);

/// Runs inference and keeps detections scoring at least phi.
PseudoLabelSet generate(const Detector& detector, const ParameterSet& params,
                        const PointCloud& points, const std::string& scene_id, double phi,
                        PredictOptions options = {});

struct BankEntry {
  std::vector<Box3D> boxes;  // training labels
  std::deque<Box3D> buffer;  // unmatched boxes, oldest first
};

struct IntegrateStats {
  long kept = 0;       // memory boxes that won against their match
  long replaced = 0;   // matches won by the current proposal
  long superseded = 0; // memory boxes that matched a proposal and lost
  long added = 0;      // current proposals matched by no memory box
  long buffered = 0;   // bank boxes moved to the buffer
  long recovered = 0;  // buffer boxes promoted back into the bank
  long evicted = 0;    // buffer boxes dropped by the capacity limit
  long bank_size = 0;  // boxes in the bank afterwards

  /// Fraction of bank slots that changed: (replaced + added + buffered) / slots.
  double churn() const;
  IntegrateStats& operator+=(const IntegrateStats& o);
};

/// Per-scene pseudo-label memory. A memory box (bank entries first, then the
/// buffer) is matched to the current proposal with the highest 3D IoU, lowest
/// index on ties, when that IoU reaches `match_iou`. Each matched proposal
/// keeps the highest-scored box of its group; ties favour memory, then the
/// lower memory index. Unmatched bank boxes go to the buffer, unmatched buffer
/// boxes stay, unmatched proposals enter the bank directly.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t buffer_capacity = 64, double match_iou = 0.1);
  MemoryBank(const MemoryBank& o);
  MemoryBank& operator=(const MemoryBank& o);

  IntegrateStats integrate(const PseudoLabelSet& current);

  /// Bank boxes of a scene; unknown ids give an empty set and bump warnings().
  std::vector<Box3D> snapshot(const std::string& scene_id) const;
  const BankEntry* entry(const std::string& scene_id) const;
  const std::map<std::string, BankEntry>& entries() const { return entries_; }

  int round() const { return round_; }
  void advance_round() { ++round_; }
  long warnings() const { return warnings_.load(); }
  std::size_t buffer_capacity() const { return capacity_; }
  double match_iou() const { return match_iou_; }

  nlohmann::json to_json() const;
  static MemoryBank from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  double match_iou_;
  int round_ = 0;
  std::map<std::string, BankEntry> entries_;
  mutable std::atomic<long> warnings_{0};
};

}  // namespace stal3d
