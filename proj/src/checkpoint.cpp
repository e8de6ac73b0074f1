#include "stal3d/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "stal3d/errors.hpp"

namespace stal3d {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'L', '3', 'D', 'C', 'K'};

void write_array(std::ofstream& out, const ag::Array& a) {
  out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
}

ag::Array read_array(std::ifstream& in, ag::Index n, const std::string& what) {
  ag::Array a(n);
  in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ConfigError("checkpoint truncated while reading " + what);
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const Adam* optimizer, const nlohmann::json& meta) {
  static_assert(std::endian::native == std::endian::little);
  nlohmann::json header;
  header["format"] = 1;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params) tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  header["tensors"] = tensors;
  const bool with_opt = optimizer && !optimizer->first_moments().empty();
  header["optimizer"] = with_opt ? nlohmann::json{{"type", "adam"},
                                                  {"steps", optimizer->steps()},
                                                  {"lr", optimizer->config().lr},
                                                  {"beta1", optimizer->config().beta1},
                                                  {"beta2", optimizer->config().beta2},
                                                  {"eps", optimizer->config().eps}}
                                 : nlohmann::json(nullptr);
  header["meta"] = meta;
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) write_array(out, p.tensor.value());
  if (with_opt) {
    if (optimizer->first_moments().size() != params.size()) {
      throw std::logic_error("save_checkpoint: optimizer state does not match parameters");
    }
    for (const auto& m : optimizer->first_moments()) write_array(out, m);
    for (const auto& v : optimizer->second_moments()) write_array(out, v);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ConfigError(path.string() + " is not a checkpoint");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ConfigError(path.string() + ": truncated header");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    for (const auto& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<ag::Shape>();
      const std::string name = t.at("name").get<std::string>();
      ck.params.push_back({name, ag::Tensor::parameter(shape, read_array(in, ag::numel(shape), name))});
    }
    const auto& opt = header.at("optimizer");
    if (!opt.is_null()) {
      ck.adam_steps = opt.at("steps").get<long>();
      for (const auto& p : ck.params) ck.adam_m.push_back(read_array(in, p.tensor.size(), p.name + " m"));
      for (const auto& p : ck.params) ck.adam_v.push_back(read_array(in, p.tensor.size(), p.name + " v"));
    }
    ck.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ck;
}

void assign_params(ParameterSet& params, const ParameterSet& from) {
  if (params.size() != from.size()) {
    throw ConfigError("parameter count mismatch: " + std::to_string(params.size()) + " vs " +
                      std::to_string(from.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != from[i].name || params[i].tensor.shape() != from[i].tensor.shape()) {
      throw ConfigError("parameter mismatch at " + params[i].name + " " +
                        ag::to_string(params[i].tensor.shape()) + " vs " + from[i].name + " " +
                        ag::to_string(from[i].tensor.shape()));
    }
    params[i].tensor.mutable_value() = from[i].tensor.value();
  }
}

ParameterSet clone_params(const ParameterSet& params) {
  ParameterSet out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, ag::Tensor::parameter(p.tensor.shape(), p.tensor.value())});
  return out;
}

}  // namespace stal3d
