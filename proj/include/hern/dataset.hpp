#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hern/cfa.hpp"
#include <json.hpp>

namespace hern {

/// Synthetic paired dataset parameters. `height` and `width` are RGB sides.
struct SyntheticSpec {
  int count = 8;
  int height = 32;
  int width = 32;
  int scale = 1;
  ChannelGains gains{2.0f, 1.0f, 1.6f};
  float noise_sigma = 0.002f;
  std::uint64_t seed = 0;

  /// Throws ConfigError on non-positive counts, sides not divisible by
  /// 4 x scale, scales other than 1 or 2, gains <= 0 or sigma < 0.
  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

nlohmann::json to_json(const SyntheticSpec& spec);
/// Unknown keys are rejected with ConfigError; missing keys keep defaults.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

/// Smooth procedural scene (gradients, sinusoids and soft-edged discs) with
/// values in [0.05, 0.95]. Deterministic in `seed`.
RgbImage procedural_rgb(std::size_t height, std::size_t width, std::uint64_t seed);

/// Sample id for index i: zero-padded to four digits.
std::string sample_id(std::size_t index);

/// Samples exactly as make_dataset writes them, before 8-bit quantisation.
std::vector<PairedSample> synthesize_dataset(const SyntheticSpec& spec);

/// Writes <root>/raw/<id>.png (grayscale mosaic), <root>/rgb/<id>.png and
/// <root>/manifest.json listing ids, gains, sigma and seed.
void make_dataset(const SyntheticSpec& spec, const std::filesystem::path& root);

struct Dataset {
  std::vector<std::string> ids;
  std::vector<PairedSample> samples;
};

/// Loads every raw/rgb pair with matching stems, in id order. The output
/// scale is inferred from the first pair and every pair is validated.
/// Throws IoError when the layout is missing or a stem has no partner.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace hern
