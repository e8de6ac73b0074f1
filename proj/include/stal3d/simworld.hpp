#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "stal3d/scene.hpp"

namespace stal3d {

struct Gaussian {
  double mean = 1.0;
  double stddev = 0.0;
};

struct ClassSpec {
  std::string name;
  Gaussian l, w, h;
  double weight = 1.0;  // relative frequency
};

/// Generative parameters of one synthetic domain.
struct DomainSpec {
  std::string name = "default";
  std::vector<ClassSpec> classes;
  int min_objects = 3;
  int max_objects = 8;
  /// Expected object points = density * visible shell area / distance^2.
  double density = 400.0;
  double clutter_rate = 0.3;  // ground points per m^2
  double dropout = 0.0;       // per-point drop probability (rain proxy)
  double spurious_rate = 0.0; // airborne noise points per m^2 (rain proxy)
  double range = 8.0;         // scenes cover [-range, range]^2
  double min_distance = 2.0;  // objects keep this BEV distance from the sensor
  std::uint64_t seed_namespace = 0;

  void validate() const;

  /// Three classes with car / pedestrian / cyclist size priors.
  static DomainSpec baseline();
};

/// Named domain shifts: "control", "size_shift", "density_shift", "rain",
/// "size_density". Returns {source, target}.
std::pair<DomainSpec, DomainSpec> preset_pair(const std::string& name);

struct SceneDiagnostics {
  int requested_objects = 0;
  int placed_objects = 0;
  int dropped_labels = 0;  // labels whose shell received no points
};

Scene sample_scene(const DomainSpec& spec, std::uint64_t seed, std::uint64_t index,
                   SceneDiagnostics* diag = nullptr);

/// Expected points on an object at BEV distance `distance`.
double expected_object_points(const DomainSpec& spec, double l, double w, double h, double distance);

class Dataset;

/// Read-only ground-truth view for evaluation. Every access is counted so
/// training code can be checked for label leakage.
class EvalHandle {
 public:
  const std::vector<Box3D>& ground_truth(std::size_t i) const;
  std::size_t size() const;

 private:
  friend class Dataset;
  explicit EvalHandle(const Dataset* d) : data_(d) {}
  const Dataset* data_;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(DomainSpec spec, std::uint64_t seed, std::vector<Scene> scenes,
          std::vector<std::string> splits, bool labels_hidden);

  static Dataset generate(const DomainSpec& spec, std::uint64_t seed, std::size_t n_train,
                          std::size_t n_val, unsigned threads = 0);

  std::size_t size() const { return scenes_.size(); }
  const DomainSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& id(std::size_t i) const { return scenes_.at(i).id; }
  const PointCloud& points(std::size_t i) const { return scenes_.at(i).points; }
  const std::string& split(std::size_t i) const { return splits_.at(i); }
  std::vector<std::size_t> indices(const std::string& split) const;

  /// Labels usable for training; throws std::logic_error when hidden.
  const std::vector<Box3D>& training_labels(std::size_t i) const;
  bool labels_hidden() const { return labels_hidden_; }
  void hide_labels() { labels_hidden_ = true; }

  EvalHandle eval_handle() const { return EvalHandle(this); }
  long gt_reads() const { return gt_reads_->load(); }

  void save(const std::filesystem::path& dir) const;
  static Dataset load(const std::filesystem::path& dir);

 private:
  friend class EvalHandle;
  DomainSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<Scene> scenes_;
  std::vector<std::string> splits_;
  bool labels_hidden_ = false;
  std::shared_ptr<std::atomic<long>> gt_reads_ = std::make_shared<std::atomic<long>>(0);
};

struct DomainPair {
  Dataset source;
  Dataset target;  // labels hidden; ground truth only through eval_handle()
};

struct PairSizes {
  std::size_t source_train = 500, source_val = 100;
  std::size_t target_train = 500, target_val = 100;
};

DomainPair make_domain_pair(const DomainSpec& source, const DomainSpec& target,
                            const PairSizes& sizes, std::uint64_t source_seed,
                            std::uint64_t target_seed, unsigned threads = 0);

}  // namespace stal3d
