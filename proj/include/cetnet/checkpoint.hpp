#pragma once

// Versioned binary model checkpoints. Layout:
//   magic "CETM" | u32 version | u32 config byte length | config block |
//   tensor records until end of file.
// Config block (version 1, 68 bytes): eight u64 fields (input_dim, model_dim,
// num_layers, num_decoders, num_classes, heads, r, window) plus a u32 cross
// mode. Each tensor record: u32 name length, name bytes, u32 rank, one u64
// per dimension, then row-major little-endian f64 data. Round trips are
// bit-exact.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cetnet/binary.hpp"
#include "cetnet/model.hpp"
#include "cetnet/tensor.hpp"

namespace cetnet {

inline constexpr char kCheckpointMagic[5] = "CETM";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kCheckpointConfigBytes = 68;

inline void save_checkpoint(const CetModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(detail::msg("cannot open '", path, "' for writing"));
  detail::ByteWriter w(out);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(kCheckpointConfigBytes);
  const ModelConfig& cfg = model.config();
  w.u64(cfg.input_dim);
  w.u64(cfg.model_dim);
  w.u64(cfg.num_layers);
  w.u64(cfg.num_decoders);
  w.u64(cfg.num_classes);
  w.u64(cfg.heads);
  w.u64(cfg.r);
  w.u64(cfg.window);
  w.u32(static_cast<std::uint32_t>(cfg.cross_mode));
  for (const auto& [name, t] : model.parameters()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) w.u64(t.dim(d));
    const double* data = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) w.f64(data[i]);
  }
  out.flush();
  if (!out) throw DataError(detail::msg("failed while writing '", path, "'"));
}

inline CetModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(detail::msg("cannot open '", path, "' for reading"));
  detail::ByteReader r(in, path);

  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion)
    r.fail(detail::msg("unsupported checkpoint version ", version, " (expected ",
                       kCheckpointVersion, ")"));
  const std::uint32_t config_bytes = r.u32("config block length");
  if (config_bytes != kCheckpointConfigBytes)
    r.fail(detail::msg("config block length ", config_bytes, " does not match version ",
                       kCheckpointVersion, " layout (", kCheckpointConfigBytes, " bytes)"));

  ModelConfig cfg;
  cfg.input_dim = r.u64("input_dim");
  cfg.model_dim = r.u64("model_dim");
  cfg.num_layers = r.u64("num_layers");
  cfg.num_decoders = r.u64("num_decoders");
  cfg.num_classes = r.u64("num_classes");
  cfg.heads = r.u64("heads");
  cfg.r = r.u64("r");
  cfg.window = r.u64("window");
  const std::uint32_t mode = r.u32("cross_mode");
  if (mode > static_cast<std::uint32_t>(CrossMode::behind_only))
    r.fail(detail::msg("invalid cross_mode value ", mode));
  cfg.cross_mode = static_cast<CrossMode>(mode);

  CetModel model(cfg, 0);
  std::map<std::string, Tensor*> by_name;
  for (auto& [name, t] : model.parameters()) by_name[name] = &t;

  std::map<std::string, bool> seen;
  while (!r.at_eof()) {
    const std::size_t record_at = r.offset();
    const std::uint32_t name_len = r.u32("parameter name length");
    if (name_len == 0 || name_len > 4096)
      throw FormatError(detail::msg(path, ": implausible parameter name length ", name_len,
                                    " at byte ", record_at));
    const std::string name = r.str(name_len, "parameter name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8)
      throw FormatError(detail::msg(path, ": implausible tensor rank ", rank,
                                    " for parameter '", name, "' at byte ", record_at));
    std::vector<std::size_t> dims;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64("tensor dimension");
      if (dim == 0 || dim > (std::uint64_t{1} << 32) || total > (std::size_t{1} << 40) / dim)
        throw FormatError(detail::msg(path, ": implausible dimensions for parameter '", name,
                                      "' at byte ", record_at));
      dims.push_back(static_cast<std::size_t>(dim));
      total *= static_cast<std::size_t>(dim);
    }

    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError(detail::msg(path, ": unknown parameter '", name, "' at byte ",
                                    record_at));
    if (seen[name])
      throw FormatError(detail::msg(path, ": duplicate parameter '", name, "' at byte ",
                                    record_at));
    Tensor& target = *it->second;
    if (target.shape() != dims)
      throw FormatError(detail::msg(path, ": parameter '", name, "' has shape ",
                                    detail::shape_str(dims), " but the model expects ",
                                    detail::shape_str(target.shape()), " (record at byte ",
                                    record_at, ")"));
    double* dst = target.mutable_data();
    for (std::size_t i = 0; i < total; ++i) dst[i] = r.f64("tensor data");
    seen[name] = true;
  }

  if (seen.size() != by_name.size()) {
    for (const auto& [name, t] : model.parameters())
      if (!seen.count(name))
        throw FormatError(detail::msg(path, ": checkpoint is missing parameter '", name,
                                      "' (has ", seen.size(), " of ", by_name.size(), ")"));
  }
  return model;
}

}  // namespace cetnet
