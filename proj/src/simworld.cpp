#include "stal3d/simworld.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "stal3d/errors.hpp"
#include "stal3d/io.hpp"
#include "stal3d/parallel.hpp"
#include "stal3d/rng.hpp"

namespace stal3d {

void DomainSpec::validate() const {
  if (classes.empty()) throw ConfigError("DomainSpec '" + name + "': no classes");
  for (const ClassSpec& c : classes) {
    for (const Gaussian& g : {c.l, c.w, c.h}) {
      if (!(g.mean > 0) || !(g.stddev >= 0) || !(g.mean > 3 * g.stddev)) {
        throw ConfigError("DomainSpec '" + name + "': class '" + c.name +
                          "' needs mean > 3 * std > = 0");
      }
    }
    if (!(c.weight >= 0)) throw ConfigError("DomainSpec: negative class weight");
  }
  if (min_objects < 0 || max_objects < min_objects) {
    throw ConfigError("DomainSpec: invalid objects-per-scene range");
  }
  for (double r : {density, clutter_rate, spurious_rate, min_distance}) {
    if (!(r >= 0)) throw ConfigError("DomainSpec: rates must be non-negative");
  }
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("DomainSpec: dropout must lie in [0, 1)");
  if (!(range > 0)) throw ConfigError("DomainSpec: range must be positive");
}

DomainSpec DomainSpec::baseline() {
  DomainSpec s;
  s.name = "baseline";
  s.classes = {
      {"car", {4.2, 0.25}, {1.8, 0.1}, {1.6, 0.1}, 0.6},
      {"pedestrian", {0.8, 0.1}, {0.6, 0.06}, {1.7, 0.1}, 0.2},
      {"cyclist", {1.8, 0.15}, {0.6, 0.06}, {1.7, 0.1}, 0.2},
  };
  return s;
}

std::pair<DomainSpec, DomainSpec> preset_pair(const std::string& name) {
  DomainSpec source = DomainSpec::baseline();
  source.name = name + "_source";
  DomainSpec target = source;
  target.name = name + "_target";
  target.seed_namespace = 1;
  auto grow = [](ClassSpec& c, double fl, double fw, double fh) {
    c.l.mean *= fl;
    c.l.stddev *= fl;
    c.w.mean *= fw;
    c.w.stddev *= fw;
    c.h.mean *= fh;
    c.h.stddev *= fh;
  };
  if (name == "control") {
    target.seed_namespace = source.seed_namespace;
  } else if (name == "size_shift") {
    grow(target.classes[0], 1.2, 1.1, 1.1);
  } else if (name == "density_shift") {
    target.density = source.density * 0.5;
  } else if (name == "rain") {
    target.dropout = 0.3;
    target.spurious_rate = 0.4;
  } else if (name == "size_density") {
    grow(target.classes[0], 1.2, 1.1, 1.1);
    target.density = source.density * 0.5;
  } else {
    throw ConfigError("unknown domain preset '" + name + "'");
  }
  return {source, target};
}

double expected_object_points(const DomainSpec& spec, double l, double w, double h, double distance) {
  const double area = l * w + 2 * l * h + 2 * w * h;  // top + four sides
  const double d = std::max(distance, 1.0);
  return spec.density * area / (d * d);
}

namespace {

double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

double sample_positive(std::mt19937_64& rng, const Gaussian& g) {
  std::normal_distribution<double> dist(g.mean, g.stddev);
  for (int i = 0; i < 1000; ++i) {
    const double v = g.stddev > 0 ? dist(rng) : g.mean;
    if (v > 0) return v;
  }
  return g.mean;
}

bool footprints_clear(const Box3D& b, const std::vector<Box3D>& placed) {
  constexpr double kMargin = 0.3;
  Box3D grown = b;
  grown.l += kMargin;
  grown.w += kMargin;
  for (const Box3D& o : placed) {
    if (bev_intersection_area(grown, o) > 0) return false;
  }
  return true;
}

void sample_shell(const Box3D& box, long count, std::mt19937_64& rng, std::vector<Eigen::Vector3d>& out) {
  const double l = box.l, w = box.w, h = box.h;
  const double areas[5] = {l * w, w * h, w * h, l * h, l * h};
  std::discrete_distribution<int> face(std::begin(areas), std::end(areas));
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (long i = 0; i < count; ++i) {
    Eigen::Vector3d q;
    switch (face(rng)) {
      case 0: q = {u(rng) * l, u(rng) * w, h / 2}; break;
      case 1: q = {l / 2, u(rng) * w, u(rng) * h}; break;
      case 2: q = {-l / 2, u(rng) * w, u(rng) * h}; break;
      case 3: q = {u(rng) * l, w / 2, u(rng) * h}; break;
      default: q = {u(rng) * l, -w / 2, u(rng) * h}; break;
    }
    out.push_back(box.to_world(q));
  }
}

}  // namespace

Scene sample_scene(const DomainSpec& spec, std::uint64_t seed, std::uint64_t index,
                   SceneDiagnostics* diag) {
  spec.validate();
  const std::uint64_t ns = spec.seed_namespace;
  std::mt19937_64 place(derive_seed(seed, {ns, index, stream(Stream::Placement)}));
  std::mt19937_64 surface(derive_seed(seed, {ns, index, stream(Stream::Surface)}));
  std::mt19937_64 clutter(derive_seed(seed, {ns, index, stream(Stream::Clutter)}));
  std::mt19937_64 noise(derive_seed(seed, {ns, index, stream(Stream::Noise)}));

  SceneDiagnostics local;
  std::uniform_int_distribution<int> n_obj(spec.min_objects, spec.max_objects);
  local.requested_objects = n_obj(place);

  std::vector<double> weights;
  for (const ClassSpec& c : spec.classes) weights.push_back(c.weight);
  std::discrete_distribution<int> pick_class(weights.begin(), weights.end());
  std::uniform_real_distribution<double> yaw_dist(-std::numbers::pi, std::numbers::pi);

  std::vector<Box3D> boxes;
  for (int k = 0; k < local.requested_objects; ++k) {
    const int c = pick_class(place);
    const ClassSpec& cs = spec.classes[static_cast<std::size_t>(c)];
    const double l = sample_positive(place, cs.l);
    const double w = sample_positive(place, cs.w);
    const double h = sample_positive(place, cs.h);
    const double margin = std::hypot(l, w) / 2;
    std::uniform_real_distribution<double> pos(-spec.range + margin, spec.range - margin);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double x = pos(place), y = pos(place), yaw = yaw_dist(place);
      if (std::hypot(x, y) < spec.min_distance) continue;
      Box3D b = Box3D::make(x, y, h / 2, l, w, h, yaw, c);
      if (!footprints_clear(b, boxes)) continue;
      boxes.push_back(b);
      break;
    }
  }
  local.placed_objects = static_cast<int>(boxes.size());

  std::vector<Eigen::Vector3d> pts;
  for (const Box3D& b : boxes) {
    const double lambda = expected_object_points(spec, b.l, b.w, b.h, std::hypot(b.cx, b.cy));
    const long n = lambda > 0 ? std::poisson_distribution<long>(lambda)(surface) : 0;
    sample_shell(b, n, surface, pts);
  }
  const double area = 4 * spec.range * spec.range;
  std::uniform_real_distribution<double> xy(-spec.range, spec.range);
  if (spec.clutter_rate > 0) {
    const long n = std::poisson_distribution<long>(spec.clutter_rate * area)(clutter);
    std::uniform_real_distribution<double> z(0.0, 0.3);
    for (long i = 0; i < n; ++i) pts.emplace_back(xy(clutter), xy(clutter), z(clutter));
  }

  std::vector<Eigen::Vector3d> kept;
  kept.reserve(pts.size());
  if (spec.dropout > 0) {
    std::bernoulli_distribution drop(spec.dropout);
    for (const auto& p : pts) {
      if (!drop(noise)) kept.push_back(p);
    }
  } else {
    kept = std::move(pts);
  }
  if (spec.spurious_rate > 0) {
    const long n = std::poisson_distribution<long>(spec.spurious_rate * area)(noise);
    std::uniform_real_distribution<double> z(0.0, 3.0);
    for (long i = 0; i < n; ++i) kept.emplace_back(xy(noise), xy(noise), z(noise));
  }

  Scene scene;
  scene.id = spec.name + "_" + std::to_string(index);
  scene.points.resize(3, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (int a = 0; a < 3; ++a) scene.points(a, static_cast<Eigen::Index>(i)) = quantize(kept[i][a]);
  }
  for (const Box3D& b : boxes) {
    bool any = false;
    for (Eigen::Index i = 0; i < scene.points.cols() && !any; ++i) {
      any = b.contains(scene.points.col(i));
    }
    if (any) {
      scene.labels.push_back(b);
    } else {
      ++local.dropped_labels;
    }
  }
  if (diag) *diag = local;
  return scene;
}

// ---------------------------------------------------------------------------

const std::vector<Box3D>& EvalHandle::ground_truth(std::size_t i) const {
  ++*data_->gt_reads_;
  return data_->scenes_.at(i).labels;
}

std::size_t EvalHandle::size() const { return data_->size(); }

Dataset::Dataset(DomainSpec spec, std::uint64_t seed, std::vector<Scene> scenes,
                 std::vector<std::string> splits, bool labels_hidden)
    : spec_(std::move(spec)),
      seed_(seed),
      scenes_(std::move(scenes)),
      splits_(std::move(splits)),
      labels_hidden_(labels_hidden) {
  if (splits_.size() != scenes_.size()) throw std::invalid_argument("Dataset: one split tag per scene");
}

Dataset Dataset::generate(const DomainSpec& spec, std::uint64_t seed, std::size_t n_train,
                          std::size_t n_val, unsigned threads) {
  spec.validate();
  const std::size_t n = n_train + n_val;
  std::vector<Scene> scenes(n);
  parallel_for(n, [&](std::size_t i) { scenes[i] = sample_scene(spec, seed, i); }, threads);
  std::vector<std::string> splits(n, "train");
  for (std::size_t i = n_train; i < n; ++i) splits[i] = "val";
  return Dataset(spec, seed, std::move(scenes), std::move(splits), false);
}

std::vector<std::size_t> Dataset::indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i) {
    if (splits_[i] == split) out.push_back(i);
  }
  return out;
}

const std::vector<Box3D>& Dataset::training_labels(std::size_t i) const {
  if (labels_hidden_) {
    throw std::logic_error("Dataset '" + spec_.name + "': labels are withheld from training");
  }
  return scenes_.at(i).labels;
}

void Dataset::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["domain"] = spec_;
  meta["seed"] = seed_;
  meta["labels_hidden"] = labels_hidden_;
  meta["splits"] = splits_;
  std::vector<std::string> ids;
  for (const Scene& s : scenes_) ids.push_back(s.id);
  meta["ids"] = ids;
  write_json_file(dir / "spec.json", meta);
  for (std::size_t i = 0; i < scenes_.size(); ++i) {
    const std::string stem = scene_file_stem(i);
    write_points_bin(dir / (stem + ".bin"), scenes_[i].points);
    write_json_file(dir / (stem + ".labels.json"), boxes_to_json(scenes_[i].labels));
  }
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  const nlohmann::json meta = read_json_file(dir / "spec.json");
  try {
    DomainSpec spec = meta.at("domain").get<DomainSpec>();
    const auto splits = meta.at("splits").get<std::vector<std::string>>();
    const auto ids = meta.at("ids").get<std::vector<std::string>>();
    if (ids.size() != splits.size()) throw ConfigError("dataset: ids/splits length mismatch");
    std::vector<Scene> scenes(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::string stem = scene_file_stem(i);
      scenes[i].id = ids[i];
      scenes[i].points = read_points_bin(dir / (stem + ".bin"));
      scenes[i].labels = boxes_from_json(read_json_file(dir / (stem + ".labels.json")));
    }
    return Dataset(std::move(spec), meta.at("seed").get<std::uint64_t>(), std::move(scenes), splits,
                   meta.at("labels_hidden").get<bool>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset " + dir.string() + ": " + e.what());
  }
}

DomainPair make_domain_pair(const DomainSpec& source, const DomainSpec& target,
                            const PairSizes& sizes, std::uint64_t source_seed,
                            std::uint64_t target_seed, unsigned threads) {
  DomainPair pair;
  pair.source = Dataset::generate(source, source_seed, sizes.source_train, sizes.source_val, threads);
  pair.target = Dataset::generate(target, target_seed, sizes.target_train, sizes.target_val, threads);
  pair.target.hide_labels();
  return pair;
}

}  // namespace stal3d
