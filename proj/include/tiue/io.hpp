// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tiue/params.hpp"
#include "tiue/schedule.hpp"
#include "tiue/unet.hpp"

namespace tiue {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  UNetConfig model;
  ScheduleParams schedule;
  std::optional<SamplerPlan> plan;
  std::int64_t iterations = 0;
  std::string config_hash;
  /// Plain names hold EMA weights when true.
  bool ema = true;
  /// Present when lora.* tensors are stored.
  int lora_rank = 0;
  double lora_alpha = 0.0;
  std::string kind;  // "teacher" or "student"
};

struct Checkpoint {
  ParamStore<float> tensors;
  CheckpointMeta meta;
};

/// Layout: "TIUE", u32 version, u64 header length, JSON header, f32 payload in table order.
/// All integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& tensors, const CheckpointMeta& meta);
/// Verifies magic, version, table offsets and total length before reading any tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Same checks on an in-memory file image.
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_checkpoint(const ParamStore<float>& tensors, const CheckpointMeta& meta);

/// Tensors without a namespace prefix (the served weights).
ParamStore<float> served_weights(const ParamStore<float>& all);
/// Tensors under `prefix`, with the prefix removed when `strip` is set.
ParamStore<float> with_prefix(const ParamStore<float>& all, const std::string& prefix, bool strip);

/// Binary P6 PPM from a (3, H, W) image in [-1, 1].
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
/// (3, H, W) image with pixels mapped back to [-1, 1].
Tensor<float> read_ppm(const std::filesystem::path& path);
/// Every *.ppm file in `dir`, sorted by name, stacked to (n, 3, H, W).
Tensor<float> read_ppm_dir(const std::filesystem::path& dir);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace tiue
