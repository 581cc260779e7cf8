#include "hern/memory.hpp"

#include <algorithm>

namespace hern {
namespace {

class ArchBuilder {
 public:
  explicit ArchBuilder(std::string name) { spec_.name = std::move(name); }

  ArchBuilder& conv(const std::string& path, int cin, int cout, int k, int stride = 1,
                    LayerInput input = LayerInput::kPrevious, int fixed_side = 0) {
    spec_.layers.push_back({path, LayerKind::kConv, stride, cin, cout, k, input, fixed_side});
    return *this;
  }
  ArchBuilder& deconv(const std::string& path, int cin, int cout) {
    spec_.layers.push_back({path, LayerKind::kDeconv, 2, cin, cout, 3});
    return *this;
  }
  ArchBuilder& unary(const std::string& path, LayerKind kind, int channels) {
    spec_.layers.push_back({path, kind, 1, channels, channels, 1});
    return *this;
  }
  ArchBuilder& concat(const std::string& path, int cin, int cout) {
    spec_.layers.push_back({path, LayerKind::kConcat, 1, cin, cout, 1});
    return *this;
  }
  ArchBuilder& attention(const std::string& path, int channels, int reduction) {
    ArchLayer l{path, LayerKind::kChannelAttention, 1, channels, channels, 1};
    l.reduction = reduction;
    spec_.layers.push_back(l);
    return *this;
  }
  ArchSpec build() { return std::move(spec_); }

 private:
  ArchSpec spec_;
};

std::string idx(const char* stem, int i) { return stem + std::to_string(i); }

}  // namespace

void ArchSpec::validate() const {
  for (const auto& l : layers) {
    if (l.stride != 1 && l.stride != 2) {
      throw ConfigError("arch '" + name + "': layer " + l.path + " has stride " +
                        std::to_string(l.stride));
    }
    if (l.in_channels < 1 || l.out_channels < 1) {
      throw ConfigError("arch '" + name + "': layer " + l.path + " has no channels");
    }
    if (l.input == LayerInput::kFixed && l.fixed_side < 1) {
      throw ConfigError("arch '" + name + "': layer " + l.path + " needs a fixed side");
    }
  }
}

int ArchSpec::required_divisor() const {
  // Largest cumulative downsampling of any branch that starts at the input.
  int factor = 1, worst = 1;
  bool from_patch = true;
  for (const auto& l : layers) {
    if (l.input == LayerInput::kPatch) {
      factor = 1;
      from_patch = true;
    } else if (l.input == LayerInput::kFixed) {
      from_patch = false;
    }
    if (l.kind == LayerKind::kConv && l.stride == 2) factor *= 2;
    if (l.kind == LayerKind::kDeconv) factor = std::max(1, factor / 2);
    if (from_patch) worst = std::max(worst, factor);
  }
  return worst;
}

ArchSpec hern_arch(const ModelConfig& c) {
  c.validate();
  const int g = c.global_width, l = c.local_width, n = c.encoder_dim;
  ArchBuilder b("hern");
  b.conv("head.conv", 4, g, 3, 1, LayerInput::kPatch);

  for (int i = 0; i < 2; ++i) {
    const std::string s = "global." + idx("down", i);
    b.conv(s + ".conv", g, g, 3, 2).unary(s + ".prelu", LayerKind::kActivation, g);
  }
  for (int gi = 0; gi < c.G; ++gi) {
    const std::string group = "global." + idx("group", gi);
    for (int bi = 0; bi < c.B; ++bi) {
      const std::string block = group + "." + idx("block", bi);
      b.conv(block + ".conv1", g, g, 3)
          .unary(block + ".prelu", LayerKind::kActivation, g)
          .conv(block + ".conv2", g, g, 3)
          .unary(block + ".add", LayerKind::kAdd, g);
    }
    b.conv(group + ".conv", g, g, 3).unary(group + ".add", LayerKind::kAdd, g);
  }
  b.conv("global.trunk.conv", g, g, 3).unary("global.trunk.add", LayerKind::kAdd, g);
  for (int i = 0; i < 2; ++i) {
    const std::string s = "global." + idx("up", i);
    b.deconv(s + ".deconv", g, g).unary(s + ".prelu", LayerKind::kActivation, g);
  }

  b.conv("local.entry", g, l, 1, 1, LayerInput::kPatch);
  for (int m = 0; m < c.M; ++m) {
    const std::string block = "local." + idx("msrb", m);
    b.conv(block + ".p1.conv", l, l, 3)
        .unary(block + ".p1.prelu", LayerKind::kActivation, l)
        .conv(block + ".q1.conv", l, l, 5)
        .unary(block + ".q1.prelu", LayerKind::kActivation, l)
        .concat(block + ".p1q1", l, 2 * l)
        .conv(block + ".p2.conv", 2 * l, l, 3)
        .unary(block + ".p2.prelu", LayerKind::kActivation, l)
        .concat(block + ".q1p1", l, 2 * l)
        .conv(block + ".q2.conv", 2 * l, l, 5)
        .unary(block + ".q2.prelu", LayerKind::kActivation, l)
        .concat(block + ".p2q2", l, 2 * l)
        .conv(block + ".fuse", 2 * l, l, 1)
        .unary(block + ".add", LayerKind::kAdd, l);
  }

  b.concat("fusion.concat", g + l, g + l).conv("fusion.conv", g + l, g, 3);

  for (int i = 0; i < c.P; ++i) {
    const std::string s = "encoder." + idx("level", i);
    b.conv(s + ".conv", i == 0 ? 4 : n, n, 3, 2, i == 0 ? LayerInput::kFixed : LayerInput::kPrevious,
           c.fixed_res)
        .unary(s + ".prelu", LayerKind::kActivation, n);
  }
  b.unary("encoder.pool", LayerKind::kPool, n);

  ArchSpec spec = b.build();
  spec.layers.push_back(
      {"fusion.broadcast_add", LayerKind::kBroadcastAdd, 1, g, g, 1, LayerInput::kPatch});
  if (c.output_scale == 2) {
    spec.layers.push_back({"tail.up.deconv", LayerKind::kDeconv, 2, g, g, 3});
    spec.layers.push_back({"tail.up.prelu", LayerKind::kActivation, 1, g, g, 1});
  }
  spec.layers.push_back({"tail.conv", LayerKind::kConv, 1, g, 3, 3});
  return spec;
}

ArchSpec rcan_like_arch(int groups, int blocks, int width, int reduction) {
  ArchBuilder b("rcan_like");
  b.conv("head.conv", 4, width, 3, 1, LayerInput::kPatch);
  for (int gi = 0; gi < groups; ++gi) {
    const std::string group = "body." + idx("group", gi);
    for (int bi = 0; bi < blocks; ++bi) {
      const std::string block = group + "." + idx("block", bi);
      b.conv(block + ".conv1", width, width, 3)
          .unary(block + ".relu", LayerKind::kActivation, width)
          .conv(block + ".conv2", width, width, 3)
          .attention(block + ".attention", width, reduction)
          .unary(block + ".add", LayerKind::kAdd, width);
    }
    b.conv(group + ".conv", width, width, 3).unary(group + ".add", LayerKind::kAdd, width);
  }
  b.conv("body.conv", width, width, 3).unary("body.add", LayerKind::kAdd, width);
  b.conv("tail.conv", width, 3, 3);
  return b.build();
}

MemoryEstimate estimate_memory(const ArchSpec& spec, int patch_side, int batch,
                               bool include_grad) {
  spec.validate();
  const int divisor = spec.required_divisor();
  if (patch_side < 1 || patch_side % divisor != 0) {
    throw ParameterError("estimate_memory: side " + std::to_string(patch_side) +
                         " must be a positive multiple of " + std::to_string(divisor));
  }
  if (batch < 1) throw ParameterError("estimate_memory: batch must be >= 1");

  MemoryEstimate est;
  est.includes_gradients = include_grad;
  const std::uint64_t per_element = static_cast<std::uint64_t>(est.bytes_per_element) *
                                    (include_grad ? 2u : 1u);
  std::uint64_t side = static_cast<std::uint64_t>(patch_side);
  for (const auto& l : spec.layers) {
    if (l.input == LayerInput::kPatch) side = static_cast<std::uint64_t>(patch_side);
    if (l.input == LayerInput::kFixed) side = static_cast<std::uint64_t>(l.fixed_side);
    if (l.kind == LayerKind::kConv && l.stride == 2) side /= 2;
    if (l.kind == LayerKind::kDeconv) side *= 2;

    const auto c = static_cast<std::uint64_t>(l.out_channels);
    std::uint64_t elements = 0;
    switch (l.kind) {
      case LayerKind::kPool:
        elements = c;
        break;
      case LayerKind::kChannelAttention:
        elements = 2 * c + c / static_cast<std::uint64_t>(std::max(1, l.reduction)) + side * side * c;
        break;
      default:
        elements = side * side * c;
        break;
    }
    elements *= static_cast<std::uint64_t>(batch);
    est.per_layer.push_back({l.path, elements, elements * per_element});
    est.total_bytes += elements * per_element;
  }
  return est;
}

int max_feasible_patch(const ArchSpec& spec, std::uint64_t budget_bytes, int batch,
                       bool include_grad) {
  const int d = spec.required_divisor();
  auto fits = [&](int side) {
    return estimate_memory(spec, side, batch, include_grad).total_bytes <= budget_bytes;
  };
  if (!fits(d)) {
    throw ParameterError("max_feasible_patch: budget of " + std::to_string(budget_bytes) +
                         " bytes is below the smallest valid side " + std::to_string(d));
  }
  // Exponential search for an infeasible upper bound, then bisection over
  // multiples of d.
  long lo = 1, hi = 2;
  while (fits(static_cast<int>(hi * d))) {
    lo = hi;
    hi *= 2;
    if (hi * d > (1L << 24)) throw ParameterError("max_feasible_patch: budget is unbounded");
  }
  while (hi - lo > 1) {
    const long mid = lo + (hi - lo) / 2;
    (fits(static_cast<int>(mid * d)) ? lo : hi) = mid;
  }
  return static_cast<int>(lo * d);
}

}  // namespace hern
