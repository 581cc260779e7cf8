#include "hern/model.hpp"

#include <cmath>
#include <random>
#include <set>

#include "hern/image_ops.hpp"

namespace hern {
namespace {

std::string idx(const char* stem, int i) { return stem + std::to_string(i); }

void add_conv(ModelParams<float>& p, const std::string& prefix, std::size_t k, std::size_t cin,
              std::size_t cout) {
  p.add(prefix + ".w", Tensor<float>({k, k, cin, cout}));
  p.add(prefix + ".b", Tensor<float>({cout}));
}

void add_prelu(ModelParams<float>& p, const std::string& prefix, std::size_t channels) {
  p.add(prefix + ".prelu", Tensor<float>({channels}));
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {"G",           "B",           "M",
                                             "P",           "global_width", "local_width",
                                             "encoder_dim", "fixed_res",   "output_scale",
                                             "prelu_init"};
  return keys;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (G < 1 || B < 1 || M < 1 || P < 1) fail("G, B, M and P must all be >= 1");
  if (global_width < 1 || local_width < 1 || encoder_dim < 1) fail("widths must be >= 1");
  if (encoder_dim != global_width) {
    fail("encoder_dim (" + std::to_string(encoder_dim) + ") must equal global_width (" +
         std::to_string(global_width) + ")");
  }
  if (P > 20 || fixed_res < 1 || fixed_res % (1 << P) != 0) {
    fail("fixed_res " + std::to_string(fixed_res) + " must be a positive multiple of 2^P = " +
         std::to_string(1 << std::min(P, 20)));
  }
  if (output_scale != 1 && output_scale != 2) fail("output_scale must be 1 or 2");
  if (!std::isfinite(prelu_init)) fail("prelu_init must be finite");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.G = 2;
  c.B = 2;
  c.M = 2;
  c.P = 2;
  c.global_width = 8;
  c.local_width = 8;
  c.encoder_dim = 8;
  c.fixed_res = 8;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"G", c.G},
                        {"B", c.B},
                        {"M", c.M},
                        {"P", c.P},
                        {"global_width", c.global_width},
                        {"local_width", c.local_width},
                        {"encoder_dim", c.encoder_dim},
                        {"fixed_res", c.fixed_res},
                        {"output_scale", c.output_scale},
                        {"prelu_init", c.prelu_init}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!config_keys().count(key)) throw ConfigError("model config: unknown key '" + key + "'");
  }
  for (const auto& key : config_keys()) {
    if (!j.contains(key)) throw ConfigError("model config: missing key '" + key + "'");
  }
  ModelConfig c;
  try {
    c.G = j.at("G").get<int>();
    c.B = j.at("B").get<int>();
    c.M = j.at("M").get<int>();
    c.P = j.at("P").get<int>();
    c.global_width = j.at("global_width").get<int>();
    c.local_width = j.at("local_width").get<int>();
    c.encoder_dim = j.at("encoder_dim").get<int>();
    c.fixed_res = j.at("fixed_res").get<int>();
    c.output_scale = j.at("output_scale").get<int>();
    c.prelu_init = j.at("prelu_init").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelParams<float> param_shapes(const ModelConfig& config) {
  config.validate();
  const auto cg = static_cast<std::size_t>(config.global_width);
  const auto cl = static_cast<std::size_t>(config.local_width);
  const auto n = static_cast<std::size_t>(config.encoder_dim);
  ModelParams<float> p;

  add_conv(p, "head.conv", 3, 4, cg);

  for (int i = 0; i < 2; ++i) {
    add_conv(p, "global." + idx("down", i) + ".conv", 3, cg, cg);
    add_prelu(p, "global." + idx("down", i), cg);
  }
  for (int g = 0; g < config.G; ++g) {
    const std::string group = "global." + idx("group", g);
    for (int b = 0; b < config.B; ++b) {
      const std::string block = group + "." + idx("block", b);
      add_conv(p, block + ".conv1", 3, cg, cg);
      add_prelu(p, block, cg);
      add_conv(p, block + ".conv2", 3, cg, cg);
    }
    add_conv(p, group + ".conv", 3, cg, cg);
  }
  add_conv(p, "global.trunk.conv", 3, cg, cg);
  for (int i = 0; i < 2; ++i) {
    add_conv(p, "global." + idx("up", i) + ".deconv", 3, cg, cg);
    add_prelu(p, "global." + idx("up", i), cg);
  }

  add_conv(p, "local.entry", 1, cg, cl);
  for (int m = 0; m < config.M; ++m) {
    const std::string block = "local." + idx("msrb", m);
    add_conv(p, block + ".p1.conv", 3, cl, cl);
    add_prelu(p, block + ".p1", cl);
    add_conv(p, block + ".q1.conv", 5, cl, cl);
    add_prelu(p, block + ".q1", cl);
    add_conv(p, block + ".p2.conv", 3, 2 * cl, cl);
    add_prelu(p, block + ".p2", cl);
    add_conv(p, block + ".q2.conv", 5, 2 * cl, cl);
    add_prelu(p, block + ".q2", cl);
    add_conv(p, block + ".fuse", 1, 2 * cl, cl);
  }

  for (int i = 0; i < config.P; ++i) {
    add_conv(p, "encoder." + idx("level", i) + ".conv", 3, i == 0 ? 4 : n, n);
    add_prelu(p, "encoder." + idx("level", i), n);
  }

  add_conv(p, "fusion.conv", 3, cg + cl, cg);
  if (config.output_scale == 2) {
    add_conv(p, "tail.up.deconv", 3, cg, cg);
    add_prelu(p, "tail.up", cg);
  }
  add_conv(p, "tail.conv", 3, cg, 3);
  return p;
}

ModelParams<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<float> p = param_shapes(config);
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : p) {
    if (ends_with(name, ".prelu")) {
      t.fill(static_cast<float>(config.prelu_init));
    } else if (ends_with(name, ".w")) {
      const double fan_in = static_cast<double>(t.dim(0) * t.dim(1) * t.dim(2));
      const double bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values()) v = static_cast<float>(dist(rng));
    }
  }
  return p;
}

template <typename T>
void check_params(const ModelParams<T>& params, const ModelConfig& config) {
  const ModelParams<float> expected = param_shapes(config);
  for (const auto& [name, t] : expected) {
    if (!params.contains(name)) throw ShapeError("parameter '" + name + "' is missing");
    const auto& got = params.at(name);
    if (got.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_string(got.shape()) +
                       ", config expects " + shape_string(t.shape()));
    }
  }
  for (const auto& [name, _] : params) {
    if (!expected.contains(name)) {
      throw ShapeError("parameter '" + name + "' is not part of this configuration");
    }
  }
}

namespace layers {

template <typename T>
Var conv(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix,
         std::size_t stride) {
  Var w = tape.parameter(p, prefix + ".w");
  Var b = tape.parameter(p, prefix + ".b");
  const std::size_t k = tape.value(w).dim(0);
  return ops::conv2d(tape, x, w, b, stride, k / 2);
}

template <typename T>
Var prelu(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix) {
  return ops::prelu(tape, x, tape.parameter(p, prefix + ".prelu"));
}

// 3x3, stride 2, padding 1, output padding 1: exactly doubles each side.
template <typename T>
Var upsample(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix) {
  Var w = tape.parameter(p, prefix + ".deconv.w");
  Var b = tape.parameter(p, prefix + ".deconv.b");
  return prelu(tape, ops::conv_transpose2d(tape, x, w, b, 2, 1, 1), p, prefix);
}

template <typename T>
Var rir_block(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix) {
  Var h = conv(tape, x, p, prefix + ".conv1");
  h = prelu(tape, h, p, prefix);
  h = conv(tape, h, p, prefix + ".conv2");
  return ops::add(tape, x, h);
}

template <typename T>
Var residual_group(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix,
                   int blocks) {
  Var h = x;
  for (int b = 0; b < blocks; ++b) h = rir_block(tape, h, p, prefix + "." + idx("block", b));
  h = conv(tape, h, p, prefix + ".conv");
  return ops::add(tape, x, h);
}

template <typename T>
Var global_path(Tape<T>& tape, Var x, const ModelParams<T>& p, const ModelConfig& config,
                Var* trunk) {
  const Tensor<T>& in = tape.value(x);
  if (in.rank() != 3 || in.height() % 4 != 0 || in.width() % 4 != 0) {
    throw DimensionError("global_path: spatial size " + shape_string(in.shape()) +
                         " must be divisible by 4; reflect-pad the input (see infer_padded)");
  }
  Var h = x;
  for (int i = 0; i < 2; ++i) {
    const std::string stage = "global." + idx("down", i);
    h = prelu(tape, conv(tape, h, p, stage + ".conv", 2), p, stage);
  }
  const Var encoded = h;
  for (int g = 0; g < config.G; ++g) {
    h = residual_group(tape, h, p, "global." + idx("group", g), config.B);
  }
  h = conv(tape, h, p, "global.trunk.conv");
  h = ops::add(tape, encoded, h);
  if (trunk) *trunk = h;
  for (int i = 0; i < 2; ++i) h = upsample(tape, h, p, "global." + idx("up", i));
  return h;
}

template <typename T>
Var msrb(Tape<T>& tape, Var x, const ModelParams<T>& p, const std::string& prefix) {
  auto branch = [&](Var in, const char* name) {
    const std::string stage = prefix + "." + name;
    return prelu(tape, conv(tape, in, p, stage + ".conv"), p, stage);
  };
  const Var p1 = branch(x, "p1");
  const Var q1 = branch(x, "q1");
  const Var p2 = branch(ops::concat(tape, p1, q1), "p2");
  const Var q2 = branch(ops::concat(tape, q1, p1), "q2");
  const Var fused = conv(tape, ops::concat(tape, p2, q2), p, prefix + ".fuse");
  return ops::add(tape, x, fused);
}

template <typename T>
Var local_path(Tape<T>& tape, Var x, const ModelParams<T>& p, const ModelConfig& config) {
  Var h = conv(tape, x, p, "local.entry");
  for (int m = 0; m < config.M; ++m) h = msrb(tape, h, p, "local." + idx("msrb", m));
  return h;
}

template <typename T>
Var pyramid_encoder(Tape<T>& tape, const Tensor<T>& raw, const ModelParams<T>& p,
                    const ModelConfig& config) {
  if (raw.rank() != 3 || raw.height() == 0 || raw.width() == 0) {
    throw ShapeError("pyramid_encoder: degenerate input " + shape_string(raw.shape()));
  }
  const auto side = static_cast<std::size_t>(config.fixed_res);
  Var h = tape.constant(resize_bilinear(raw, side, side));
  for (int i = 0; i < config.P; ++i) {
    const std::string stage = "encoder." + idx("level", i);
    h = prelu(tape, conv(tape, h, p, stage + ".conv", 2), p, stage);
  }
  return ops::mean_pool(tape, h);
}

template <typename T>
Var hern_forward(Tape<T>& tape, Var raw, const ModelParams<T>& p, const ModelConfig& config) {
  const Tensor<T>& in = tape.value(raw);
  require_image(in, 4, "hern_forward");
  if (in.height() % 4 != 0 || in.width() % 4 != 0 || in.height() == 0 || in.width() == 0) {
    throw DimensionError("hern_forward: input " + shape_string(in.shape()) +
                         " must have sides divisible by 4; use infer_padded to reflect-pad");
  }
  const Var features = conv(tape, raw, p, "head.conv");
  const Var global = global_path(tape, features, p, config);
  const Var local = local_path(tape, features, p, config);
  Var h = conv(tape, ops::concat(tape, global, local), p, "fusion.conv");
  h = ops::broadcast_add(tape, h, pyramid_encoder(tape, in, p, config));
  if (config.output_scale == 2) h = upsample(tape, h, p, "tail.up");
  return conv(tape, h, p, "tail.conv");
}

}  // namespace layers

namespace {

template <typename T, typename F>
Tensor<T> evaluate(const Tensor<T>& x, F&& build) {
  Tape<T> tape(false);
  Var out = build(tape, tape.constant(x));
  return tape.value(out);
}

}  // namespace

template <typename T>
Tensor<T> rir_block(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix) {
  return evaluate(x, [&](Tape<T>& t, Var v) { return layers::rir_block(t, v, p, prefix); });
}

template <typename T>
Tensor<T> residual_group(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix,
                         int blocks) {
  return evaluate(x, [&](Tape<T>& t, Var v) {
    return layers::residual_group(t, v, p, prefix, blocks);
  });
}

template <typename T>
Tensor<T> global_path(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& config) {
  return evaluate(x, [&](Tape<T>& t, Var v) { return layers::global_path(t, v, p, config); });
}

template <typename T>
Tensor<T> msrb(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix) {
  return evaluate(x, [&](Tape<T>& t, Var v) { return layers::msrb(t, v, p, prefix); });
}

template <typename T>
Tensor<T> local_path(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& config) {
  return evaluate(x, [&](Tape<T>& t, Var v) { return layers::local_path(t, v, p, config); });
}

template <typename T>
Tensor<T> pyramid_encoder(const Tensor<T>& raw, const ModelParams<T>& p,
                          const ModelConfig& config) {
  Tape<T> tape(false);
  const Tensor<T>& pooled = tape.value(layers::pyramid_encoder(tape, raw, p, config));
  return Tensor<T>({pooled.size()}, pooled.storage());
}

template <typename T>
Tensor<T> hern_forward(const Tensor<T>& raw, const ModelParams<T>& p, const ModelConfig& config) {
  return evaluate(raw, [&](Tape<T>& t, Var v) { return layers::hern_forward(t, v, p, config); });
}

RgbImage hern_forward(const RawPatch& raw, const ModelParams<float>& p, const ModelConfig& config) {
  return RgbImage(hern_forward(raw.data(), p, config));
}

RgbImage infer_padded(const RawPatch& raw, const ModelParams<float>& p,
                      const ModelConfig& config) {
  const std::size_t h = raw.height(), w = raw.width();
  if (h < 4 || w < 4) {
    throw DimensionError("infer_padded: input " + shape_string(raw.data().shape()) +
                         " must be at least 4x4");
  }
  const std::size_t pad_h = (4 - h % 4) % 4, pad_w = (4 - w % 4) % 4;
  if (pad_h == 0 && pad_w == 0) return hern_forward(raw, p, config);
  const Tensor<float> out = hern_forward(reflect_pad(raw.data(), pad_h, pad_w), p, config);
  const auto s = static_cast<std::size_t>(config.output_scale);
  return RgbImage(crop_image(out, 0, 0, s * h, s * w));
}

#define HERN_INSTANTIATE_MODEL(T)                                                             \
  template void check_params<T>(const ModelParams<T>&, const ModelConfig&);                   \
  template Var layers::conv<T>(Tape<T>&, Var, const ModelParams<T>&, const std::string&,      \
                               std::size_t);                                                  \
  template Var layers::rir_block<T>(Tape<T>&, Var, const ModelParams<T>&, const std::string&); \
  template Var layers::residual_group<T>(Tape<T>&, Var, const ModelParams<T>&,                \
                                         const std::string&, int);                            \
  template Var layers::global_path<T>(Tape<T>&, Var, const ModelParams<T>&,                   \
                                      const ModelConfig&, Var*);                              \
  template Var layers::msrb<T>(Tape<T>&, Var, const ModelParams<T>&, const std::string&);     \
  template Var layers::local_path<T>(Tape<T>&, Var, const ModelParams<T>&, const ModelConfig&); \
  template Var layers::pyramid_encoder<T>(Tape<T>&, const Tensor<T>&, const ModelParams<T>&,  \
                                          const ModelConfig&);                                \
  template Var layers::hern_forward<T>(Tape<T>&, Var, const ModelParams<T>&,                  \
                                       const ModelConfig&);                                   \
  template Tensor<T> rir_block<T>(const Tensor<T>&, const ModelParams<T>&, const std::string&); \
  template Tensor<T> residual_group<T>(const Tensor<T>&, const ModelParams<T>&,               \
                                       const std::string&, int);                              \
  template Tensor<T> global_path<T>(const Tensor<T>&, const ModelParams<T>&,                  \
                                    const ModelConfig&);                                      \
  template Tensor<T> msrb<T>(const Tensor<T>&, const ModelParams<T>&, const std::string&);    \
  template Tensor<T> local_path<T>(const Tensor<T>&, const ModelParams<T>&, const ModelConfig&); \
  template Tensor<T> pyramid_encoder<T>(const Tensor<T>&, const ModelParams<T>&,              \
                                        const ModelConfig&);                                  \
  template Tensor<T> hern_forward<T>(const Tensor<T>&, const ModelParams<T>&, const ModelConfig&);

HERN_INSTANTIATE_MODEL(float)
HERN_INSTANTIATE_MODEL(double)
#undef HERN_INSTANTIATE_MODEL

}  // namespace hern
