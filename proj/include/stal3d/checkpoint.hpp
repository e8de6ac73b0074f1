#pragma once

#include <filesystem>

#include <json.hpp>

#include "stal3d/optim.hpp"

namespace stal3d {

/// File layout: the 8-byte magic "STAL3DCK", a little-endian uint64 header
/// length, a JSON header (names, shapes, optimizer metadata, user metadata),
/// then float64 payloads: every parameter in order, followed by the Adam first
/// and second moments when present.
struct Checkpoint {
  ParameterSet params;
  long adam_steps = 0;
  std::vector<ag::Array> adam_m, adam_v;  // empty when no optimizer state was saved
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const Adam* optimizer = nullptr,
                     const nlohmann::json& meta = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `params`; names and shapes must agree.
void assign_params(ParameterSet& params, const ParameterSet& from);

/// Deep copy with fresh leaf tensors.
ParameterSet clone_params(const ParameterSet& params);

}  // namespace stal3d
