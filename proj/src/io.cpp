#include "stal3d/io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stal3d/errors.hpp"

namespace stal3d {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void to_json(nlohmann::json& j, const Box3D& b) {
  j = nlohmann::json{{"cx", b.cx}, {"cy", b.cy}, {"cz", b.cz}, {"l", b.l},
                     {"w", b.w},   {"h", b.h},   {"yaw", b.yaw}, {"class_id", b.class_id}};
  j["score"] = b.score ? nlohmann::json(*b.score) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, Box3D& b) {
  try {
    b = Box3D::make(j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("cz").get<double>(),
                    j.at("l").get<double>(), j.at("w").get<double>(), j.at("h").get<double>(),
                    j.at("yaw").get<double>(), j.at("class_id").get<int>());
    if (j.contains("score") && !j.at("score").is_null()) b = b.with_score(j.at("score").get<double>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid box: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const Gaussian& g) { j = {{"mean", g.mean}, {"std", g.stddev}}; }

void from_json(const nlohmann::json& j, Gaussian& g) {
  g.mean = j.at("mean").get<double>();
  g.stddev = j.value("std", 0.0);
}

void to_json(nlohmann::json& j, const ClassSpec& c) {
  j = {{"name", c.name}, {"l", c.l}, {"w", c.w}, {"h", c.h}, {"weight", c.weight}};
}

void from_json(const nlohmann::json& j, ClassSpec& c) {
  c.name = j.at("name").get<std::string>();
  c.l = j.at("l").get<Gaussian>();
  c.w = j.at("w").get<Gaussian>();
  c.h = j.at("h").get<Gaussian>();
  c.weight = j.value("weight", 1.0);
}

void to_json(nlohmann::json& j, const DomainSpec& s) {
  j = {{"name", s.name},
       {"classes", s.classes},
       {"min_objects", s.min_objects},
       {"max_objects", s.max_objects},
       {"density", s.density},
       {"clutter_rate", s.clutter_rate},
       {"dropout", s.dropout},
       {"spurious_rate", s.spurious_rate},
       {"range", s.range},
       {"min_distance", s.min_distance},
       {"seed_namespace", s.seed_namespace}};
}

void from_json(const nlohmann::json& j, DomainSpec& s) {
  DomainSpec d = DomainSpec::baseline();
  s.name = j.value("name", d.name);
  s.classes = j.contains("classes") ? j.at("classes").get<std::vector<ClassSpec>>() : d.classes;
  s.min_objects = j.value("min_objects", d.min_objects);
  s.max_objects = j.value("max_objects", d.max_objects);
  s.density = j.value("density", d.density);
  s.clutter_rate = j.value("clutter_rate", d.clutter_rate);
  s.dropout = j.value("dropout", d.dropout);
  s.spurious_rate = j.value("spurious_rate", d.spurious_rate);
  s.range = j.value("range", d.range);
  s.min_distance = j.value("min_distance", d.min_distance);
  s.seed_namespace = j.value("seed_namespace", d.seed_namespace);
}

nlohmann::json boxes_to_json(const std::vector<Box3D>& boxes) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Box3D& b : boxes) arr.push_back(b);
  return arr;
}

std::vector<Box3D> boxes_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("expected a JSON array of boxes");
  std::vector<Box3D> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(e.get<Box3D>());
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string box_csv_row(const Box3D& b) {
  std::ostringstream os;
  os << format_double(b.cx) << ',' << format_double(b.cy) << ',' << format_double(b.cz) << ','
     << format_double(b.l) << ',' << format_double(b.w) << ',' << format_double(b.h) << ','
     << format_double(b.yaw) << ',' << b.class_id << ',';
  if (b.score) os << format_double(*b.score);
  return os.str();
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_points_bin(const std::filesystem::path& path, const PointCloud& points) {
  std::vector<float> buf(static_cast<std::size_t>(points.size()));
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    for (int a = 0; a < 3; ++a) buf[static_cast<std::size_t>(i * 3 + a)] = static_cast<float>(points(a, i));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

PointCloud read_points_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  const auto bytes = std::filesystem::file_size(path);
  if (bytes % (3 * sizeof(float)) != 0) throw ConfigError(path.string() + ": truncated point file");
  std::vector<float> buf(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  PointCloud pts(3, static_cast<Eigen::Index>(buf.size() / 3));
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    for (int a = 0; a < 3; ++a) pts(a, i) = buf[static_cast<std::size_t>(i * 3 + a)];
  }
  return pts;
}

std::string scene_file_stem(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

}  // namespace stal3d
