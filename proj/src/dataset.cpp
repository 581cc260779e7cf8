#include "hern/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "hern/image_io.hpp"
#include "hern/seeding.hpp"

namespace hern {
namespace {

namespace fs = std::filesystem;

const std::set<std::string>& spec_keys() {
  static const std::set<std::string> keys{"count", "height", "width", "scale",
                                          "gains", "noise_sigma", "seed"};
  return keys;
}

std::map<std::string, fs::path> pngs_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset: missing directory '" + dir.string() + "'");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") {
      out.emplace(e.path().stem().string(), e.path());
    }
  }
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (count < 1) throw ConfigError("data: count must be >= 1");
  if (scale != 1 && scale != 2) throw ConfigError("data: scale must be 1 or 2");
  const int divisor = 4 * scale;
  if (height < divisor || width < divisor || height % divisor != 0 || width % divisor != 0) {
    throw ConfigError("data: height and width must be positive multiples of " +
                      std::to_string(divisor));
  }
  for (float g : gains) {
    if (!(g > 0.0f) || !std::isfinite(g)) throw ConfigError("data: gains must be positive");
  }
  if (!(noise_sigma >= 0.0f) || !std::isfinite(noise_sigma)) {
    throw ConfigError("data: noise_sigma must be >= 0");
  }
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"count", s.count},
          {"height", s.height},
          {"width", s.width},
          {"scale", s.scale},
          {"gains", s.gains},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("data: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!spec_keys().count(key)) throw ConfigError("data: unknown key '" + key + "'");
  }
  SyntheticSpec s;
  try {
    if (j.contains("count")) s.count = j.at("count").get<int>();
    if (j.contains("height")) s.height = j.at("height").get<int>();
    if (j.contains("width")) s.width = j.at("width").get<int>();
    if (j.contains("scale")) s.scale = j.at("scale").get<int>();
    if (j.contains("gains")) s.gains = j.at("gains").get<ChannelGains>();
    if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<float>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  s.validate();
  return s;
}

RgbImage procedural_rgb(std::size_t height, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double side = static_cast<double>(std::max(height, width));

  struct Wave {
    double fy, fx, phase;
    std::array<double, 3> amp;
  };
  struct Disc {
    double cy, cx, r;
    std::array<double, 3> colour;
  };
  std::array<double, 3> base{}, gy{}, gx{};
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.25 + 0.5 * u(rng);
    gy[c] = 0.3 * (u(rng) - 0.5);
    gx[c] = 0.3 * (u(rng) - 0.5);
  }
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    const double period = side * (0.35 + 0.65 * u(rng));
    const double angle = 2.0 * std::numbers::pi * u(rng);
    w.fy = 2.0 * std::numbers::pi * std::sin(angle) / period;
    w.fx = 2.0 * std::numbers::pi * std::cos(angle) / period;
    w.phase = 2.0 * std::numbers::pi * u(rng);
    for (auto& a : w.amp) a = 0.08 * (u(rng) - 0.5);
  }
  std::vector<Disc> discs(2);
  for (auto& d : discs) {
    d.cy = u(rng) * static_cast<double>(height);
    d.cx = u(rng) * static_cast<double>(width);
    d.r = side * (0.1 + 0.2 * u(rng));
    for (auto& c : d.colour) c = 0.1 + 0.8 * u(rng);
  }

  Tensor<float> t = Tensor<float>::image(height, width, 3);
  for (std::size_t y = 0; y < height; ++y) {
    const double ny = static_cast<double>(y) / side - 0.5;
    for (std::size_t x = 0; x < width; ++x) {
      const double nx = static_cast<double>(x) / side - 0.5;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c] + gy[c] * ny + gx[c] * nx;
        for (const auto& w : waves) {
          v += w.amp[c] * std::sin(w.fy * static_cast<double>(y) + w.fx * static_cast<double>(x) +
                                   w.phase);
        }
        for (const auto& d : discs) {
          const double dist = std::hypot(static_cast<double>(y) - d.cy, static_cast<double>(x) - d.cx);
          const double inside = 1.0 / (1.0 + std::exp((dist - d.r) / 1.5));
          v += inside * (d.colour[c] - v);
        }
        t.at(y, x, c) = static_cast<float>(std::clamp(v, 0.05, 0.95));
      }
    }
  }
  return RgbImage(std::move(t));
}

std::string sample_id(std::size_t index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

std::vector<PairedSample> synthesize_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const std::uint64_t base = named_seed(spec.seed, "dataset");
  std::vector<PairedSample> out;
  for (std::size_t i = 0; i < static_cast<std::size_t>(spec.count); ++i) {
    const RgbImage rgb = procedural_rgb(static_cast<std::size_t>(spec.height),
                                        static_cast<std::size_t>(spec.width),
                                        derive_seed(base, {i, 0}));
    out.push_back(synthesize_raw(rgb, spec.gains, spec.noise_sigma, derive_seed(base, {i, 1}),
                                 spec.scale));
  }
  return out;
}

void make_dataset(const SyntheticSpec& spec, const fs::path& root) {
  const auto samples = synthesize_dataset(spec);
  nlohmann::json manifest = to_json(spec);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ids.push_back(sample_id(i));
    write_raw_png(samples[i].raw, root / "raw" / (ids.back() + ".png"));
    write_rgb_png(samples[i].rgb, root / "rgb" / (ids.back() + ".png"));
  }
  manifest["ids"] = ids;
  std::ofstream out(root / "manifest.json");
  if (!out) throw IoError("cannot write '" + (root / "manifest.json").string() + "'");
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& root) {
  const auto raws = pngs_by_stem(root / "raw");
  const auto rgbs = pngs_by_stem(root / "rgb");
  for (const auto& [stem, _] : raws) {
    if (!rgbs.count(stem)) throw IoError("dataset: raw/" + stem + ".png has no rgb partner");
  }
  for (const auto& [stem, _] : rgbs) {
    if (!raws.count(stem)) throw IoError("dataset: rgb/" + stem + ".png has no raw partner");
  }
  if (raws.empty()) throw IoError("dataset: no samples under '" + root.string() + "'");
  Dataset d;
  for (const auto& [stem, raw_path] : raws) {
    RawPatch raw = read_raw_png(raw_path);
    RgbImage rgb = read_rgb_png(rgbs.at(stem));
    const int scale = rgb.height() == 2 * raw.height() ? 2 : 1;
    PairedSample s{std::move(raw), std::move(rgb), scale};
    try {
      s.validate();
    } catch (const Error& e) {
      throw IoError("dataset: sample '" + stem + "': " + e.what());
    }
    if (!d.samples.empty() && d.samples.front().scale != s.scale) {
      throw IoError("dataset: sample '" + stem + "' has a different output scale");
    }
    d.ids.push_back(stem);
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace hern
