#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stal3d/scene.hpp"
#include "stal3d/simworld.hpp"

namespace stal3d {

void to_json(nlohmann::json& j, const Box3D& b);
void from_json(const nlohmann::json& j, Box3D& b);
void to_json(nlohmann::json& j, const Gaussian& g);
void from_json(const nlohmann::json& j, Gaussian& g);
void to_json(nlohmann::json& j, const ClassSpec& c);
void from_json(const nlohmann::json& j, ClassSpec& c);
void to_json(nlohmann::json& j, const DomainSpec& s);
void from_json(const nlohmann::json& j, DomainSpec& s);

nlohmann::json boxes_to_json(const std::vector<Box3D>& boxes);
std::vector<Box3D> boxes_from_json(const nlohmann::json& j);

/// CSV header and row in the column order cx,cy,cz,l,w,h,yaw,class_id,score.
inline constexpr const char* kBoxCsvHeader = "cx,cy,cz,l,w,h,yaw,class_id,score";
std::string box_csv_row(const Box3D& b);

/// Parses a JSON file; malformed or missing files raise ConfigError.
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes pretty-printed JSON with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Little-endian float32 xyz triplets.
void write_points_bin(const std::filesystem::path& path, const PointCloud& points);
PointCloud read_points_bin(const std::filesystem::path& path);

/// Zero-padded six-digit scene file name without extension.
std::string scene_file_stem(std::size_t index);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace stal3d
