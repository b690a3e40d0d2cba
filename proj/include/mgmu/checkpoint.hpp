// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Parameter checkpoints: one TNSR file per named tensor plus manifest.json.
 */
#pragma once

#include <mgmu/config.hpp>
#include <mgmu/tnsr_io.hpp>

namespace mgmu {

namespace fs = std::filesystem;

inline void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/**
 * Writes every parameter as `<name>.tnsr` and a manifest holding `info`
 * extended with parameter_order and parameter_count.
 */
inline void save_checkpoint(const fs::path& dir, const ModelParams& params, json info) {
  fs::create_directories(dir);
  json order = json::array();
  for (const auto& [name, t] : params.entries()) {
    write_tnsr(dir / (name + ".tnsr"), t);
    order.push_back(name);
  }
  info["parameter_order"] = std::move(order);
  info["parameter_count"] = params.total_parameter_count();
  write_json(dir / "manifest.json", info);
}

inline json read_checkpoint_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw std::runtime_error("no checkpoint at " + dir.string() + " (missing manifest.json)");
  return read_json(path);
}

/// Fills `params` from `dir`; names, order and shapes must match.
inline void load_checkpoint(const fs::path& dir, ModelParams& params) {
  const json manifest = read_checkpoint_manifest(dir);
  const auto order = manifest.at("parameter_order").get<std::vector<std::string>>();
  if (order != params.names()) {
    throw FormatError("checkpoint " + dir.string() + ": parameter layout differs from the configured model");
  }
  for (auto& [name, t] : params.entries()) {
    const Tensor stored = read_tnsr(dir / (name + ".tnsr"));
    if (stored.shape() != t.shape()) {
      throw DimensionError("checkpoint parameter '" + name + "': stored " + shape_str(stored.shape()) +
                           ", model expects " + shape_str(t.shape()));
    }
    std::copy(stored.values().begin(), stored.values().end(), t.mutable_values().begin());
  }
}

}  // namespace mgmu
