#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hern/model.hpp"

namespace hern {

/// Adam moments, one tensor per parameter, plus the update counter.
struct AdamState {
  ModelParams<float> m;
  ModelParams<float> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelParams<float>& params);
  bool operator==(const AdamState&) const = default;
};

/// Complete training state. (stage_index, epoch_index) is the cursor of the
/// next epoch to run; a finished schedule has stage_index == stage count.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig config;
  ModelParams<float> params;
  AdamState optimizer;
  int stage_index = 0;
  int epoch_index = 0;
  std::uint32_t format_version = kFormatVersion;

  static Checkpoint fresh(const ModelConfig& config, std::uint64_t init_seed);
  bool operator==(const Checkpoint&) const = default;
};

/// Binary layout:
///
///     "HERN" | u32 version | u32 n | n bytes of JSON header
///     u32 tensor count | tensors...
///
/// Each tensor is u32 name length, UTF-8 name, u8 dtype (1 = f32), u32 rank,
/// rank x u32 dims, then little-endian f32 values. Tensor names are
/// "param/<path>", "adam.m/<path>", "adam.v/<path>".
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws IoError on a bad magic, version, truncation or malformed header,
/// and ShapeError when tensors disagree with the embedded config (or with
/// `expected` when given), naming the first offending tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace hern
