#include "stal3d/pseudolabel.hpp"

#include "stal3d/errors.hpp"
#include "stal3d/io.hpp"

namespace stal3d {

std::vector<Box3D> filter_by_score(const std::vector<Box3D>& boxes, double phi) {
  std::vector<Box3D> out;
  for (const Box3D& b : boxes) {
    if (b.score.value_or(0.0) >= phi) out.push_back(b);
  }
  return out;
}

PseudoLabelSet generate(const Detector& detector, const ParameterSet& params,
                        const PointCloud& points, const std::string& scene_id, double phi,
                        PredictOptions options) {
  options.score_thresh = phi;
  return {scene_id, filter_by_score(detector.predict(points, params, options), phi)};
}

double IntegrateStats::churn() const {
  const long slots = bank_size + buffered;
  return slots == 0 ? 0.0 : static_cast<double>(replaced + added + buffered) / static_cast<double>(slots);
}

IntegrateStats& IntegrateStats::operator+=(const IntegrateStats& o) {
  kept += o.kept;
  replaced += o.replaced;
  superseded += o.superseded;
  added += o.added;
  buffered += o.buffered;
  recovered += o.recovered;
  evicted += o.evicted;
  bank_size += o.bank_size;
  return *this;
}

MemoryBank::MemoryBank(std::size_t buffer_capacity, double match_iou)
    : capacity_(buffer_capacity), match_iou_(match_iou) {}

MemoryBank::MemoryBank(const MemoryBank& o)
    : capacity_(o.capacity_),
      match_iou_(o.match_iou_),
      round_(o.round_),
      entries_(o.entries_),
      warnings_(o.warnings_.load()) {}

MemoryBank& MemoryBank::operator=(const MemoryBank& o) {
  capacity_ = o.capacity_;
  match_iou_ = o.match_iou_;
  round_ = o.round_;
  entries_ = o.entries_;
  warnings_ = o.warnings_.load();
  return *this;
}

IntegrateStats MemoryBank::integrate(const PseudoLabelSet& current) {
  for (const Box3D& b : current.boxes) {
    if (!b.score) throw std::invalid_argument("MemoryBank: pseudo labels need scores");
  }
  IntegrateStats stats;
  auto it = entries_.find(current.scene_id);
  if (it == entries_.end()) {
    entries_[current.scene_id].boxes = current.boxes;
    stats.added = static_cast<long>(current.boxes.size());
    stats.bank_size = stats.added;
    return stats;
  }
  BankEntry& entry = it->second;
  const std::size_t n_bank = entry.boxes.size();
  std::vector<Box3D> memory = entry.boxes;
  memory.insert(memory.end(), entry.buffer.begin(), entry.buffer.end());
  const std::size_t n_mem = memory.size();
  const std::size_t n_cur = current.boxes.size();

  const auto A = iou_matrix(memory, current.boxes);
  std::vector<int> match(n_mem, -1);
  for (std::size_t e = 0; e < n_mem; ++e) {
    if (n_cur == 0) break;
    Eigen::Index f = 0;
    A.row(static_cast<Eigen::Index>(e)).maxCoeff(&f);  // first maximum on ties
    if (A(static_cast<Eigen::Index>(e), f) >= match_iou_) match[e] = static_cast<int>(f);
  }

  // Winner per proposal: -1 the proposal itself, otherwise a memory index.
  std::vector<int> winner(n_cur, -1);
  std::vector<bool> claimed(n_cur, false);
  for (std::size_t e = 0; e < n_mem; ++e) {
    if (match[e] < 0) continue;
    const auto f = static_cast<std::size_t>(match[e]);
    const double s_mem = *memory[e].score;
    if (!claimed[f]) {
      claimed[f] = true;
      winner[f] = s_mem >= *current.boxes[f].score ? static_cast<int>(e) : -1;
    } else if (winner[f] < 0) {
      if (s_mem >= *current.boxes[f].score) winner[f] = static_cast<int>(e);  // ties favour memory
    } else if (s_mem > *memory[static_cast<std::size_t>(winner[f])].score) {
      winner[f] = static_cast<int>(e);  // ties keep the lower memory index
    }
  }

  BankEntry next;
  for (std::size_t f = 0; f < n_cur; ++f) {
    if (!claimed[f]) {
      next.boxes.push_back(current.boxes[f]);
      ++stats.added;
    } else if (winner[f] < 0) {
      next.boxes.push_back(current.boxes[f]);
      ++stats.replaced;
    } else {
      next.boxes.push_back(memory[static_cast<std::size_t>(winner[f])]);
      if (static_cast<std::size_t>(winner[f]) < n_bank) {
        ++stats.kept;
      } else {
        ++stats.recovered;
      }
    }
  }
  for (std::size_t e = 0; e < n_mem; ++e) {
    if (match[e] >= 0) {
      const auto f = static_cast<std::size_t>(match[e]);
      if (winner[f] != static_cast<int>(e)) ++stats.superseded;
      continue;
    }
    if (e < n_bank) ++stats.buffered;
  }
  // Surviving buffer boxes stay ahead of this round's newcomers.
  std::deque<Box3D> queue;
  for (std::size_t e = n_bank; e < n_mem; ++e) {
    if (match[e] < 0) queue.push_back(memory[e]);
  }
  for (std::size_t e = 0; e < n_bank; ++e) {
    if (match[e] < 0) queue.push_back(memory[e]);
  }
  while (queue.size() > capacity_) {
    queue.pop_front();
    ++stats.evicted;
  }
  next.buffer = std::move(queue);
  stats.bank_size = static_cast<long>(next.boxes.size());
  entry = std::move(next);
  return stats;
}

std::vector<Box3D> MemoryBank::snapshot(const std::string& scene_id) const {
  auto it = entries_.find(scene_id);
  if (it == entries_.end()) {
    ++warnings_;
    return {};
  }
  return it->second.boxes;
}

const BankEntry* MemoryBank::entry(const std::string& scene_id) const {
  auto it = entries_.find(scene_id);
  return it == entries_.end() ? nullptr : &it->second;
}

nlohmann::json MemoryBank::to_json() const {
  nlohmann::json scenes = nlohmann::json::object();
  for (const auto& [id, e] : entries_) {
    scenes[id] = {{"boxes", boxes_to_json(e.boxes)},
                  {"buffer", boxes_to_json({e.buffer.begin(), e.buffer.end()})}};
  }
  return {{"round", round_},
          {"buffer_capacity", capacity_},
          {"match_iou", match_iou_},
          {"scenes", scenes}};
}

MemoryBank MemoryBank::from_json(const nlohmann::json& j) {
  try {
    MemoryBank bank(j.at("buffer_capacity").get<std::size_t>(), j.at("match_iou").get<double>());
    bank.round_ = j.at("round").get<int>();
    for (const auto& [id, e] : j.at("scenes").items()) {
      BankEntry entry;
      entry.boxes = boxes_from_json(e.at("boxes"));
      for (const Box3D& b : boxes_from_json(e.at("buffer"))) entry.buffer.push_back(b);
      bank.entries_[id] = std::move(entry);
    }
    return bank;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("memory bank: ") + ex.what());
  }
}

void MemoryBank::save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

MemoryBank MemoryBank::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

}  // namespace stal3d
