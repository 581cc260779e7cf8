#include <gtest/gtest.h>

#include <cmath>

#include "gradient_check.hpp"
#include "hern/image_ops.hpp"
#include "hern/model.hpp"
#include "test_support.hpp"

namespace hern {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

template <typename T>
void randomize(ModelParams<T>& p, std::uint64_t seed, double scale = 0.3) {
  for (auto& [name, t] : p) {
    t = random_tensor<T>(t.shape(), seed++, -scale, scale);
    if (name.ends_with(".prelu")) {
      for (auto& v : t.values()) v = static_cast<T>(0.25 + v * 0.5);
    }
  }
}

template <typename T>
void zero_matching(ModelParams<T>& p, std::string_view needle) {
  for (auto& [name, t] : p) {
    if (name.find(needle) != std::string::npos && !name.ends_with(".prelu")) t.fill(T{0});
  }
}

std::size_t conv_count(std::size_t k, std::size_t cin, std::size_t cout) {
  return k * k * cin * cout + cout;
}

// Closed-form parameter count, layer by layer.
std::size_t analytic_param_count(const ModelConfig& c) {
  const std::size_t g = c.global_width, l = c.local_width, n = c.encoder_dim;
  std::size_t total = conv_count(3, 4, g);
  total += 2 * (conv_count(3, g, g) + g);                                     // down
  total += c.G * (c.B * (2 * conv_count(3, g, g) + g) + conv_count(3, g, g));  // groups
  total += conv_count(3, g, g);                                               // trunk
  total += 2 * (conv_count(3, g, g) + g);                                     // up
  total += conv_count(1, g, l);                                               // entry
  total += c.M * (conv_count(3, l, l) + conv_count(5, l, l) + conv_count(3, 2 * l, l) +
                  conv_count(5, 2 * l, l) + conv_count(1, 2 * l, l) + 4 * l);
  total += conv_count(3, 4, n) + n + (c.P - 1) * (conv_count(3, n, n) + n);
  total += conv_count(3, g + l, g);
  if (c.output_scale == 2) total += conv_count(3, g, g) + g;
  total += conv_count(3, g, 3);
  return total;
}

// out[co] = b[co] + sum_ci w[centre, ci, co] * x[ci]: a k x k same-padded
// conv evaluated on a 1x1 input only sees the centre tap.
std::vector<double> centre_tap(const Tensor<double>& w, const Tensor<double>& b,
                               const std::vector<double>& x) {
  const std::size_t k = w.dim(0), cin = w.dim(2), cout = w.dim(3);
  const std::size_t c = k / 2;
  std::vector<double> out(cout);
  for (std::size_t co = 0; co < cout; ++co) {
    double s = b[co];
    for (std::size_t ci = 0; ci < cin; ++ci) s += w[((c * k + c) * cin + ci) * cout + co] * x[ci];
    out[co] = s;
  }
  return out;
}

std::vector<double> prelu_vec(std::vector<double> v, const Tensor<double>& a) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] > 0 ? v[i] : a[i] * v[i];
  return v;
}

std::vector<double> cat(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

ModelConfig small_config() {
  ModelConfig c = ModelConfig::tiny();
  c.global_width = 6;
  c.encoder_dim = 6;
  c.local_width = 5;
  return c;
}

TEST(ModelConfig, DefaultsMatchFullSizeNetwork) {
  const ModelConfig c;
  EXPECT_EQ(c.G, 16);
  EXPECT_EQ(c.B, 10);
  EXPECT_EQ(c.global_width, 128);
  EXPECT_EQ(c.M, 8);
  EXPECT_EQ(c.local_width, 64);
  EXPECT_EQ(c.P, 6);
  EXPECT_EQ(c.fixed_res, 192);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, ValidationRejectsBadValues) {
  auto bad = [](auto mutate) {
    ModelConfig c = ModelConfig::tiny();
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](ModelConfig& c) { c.G = 0; });
  bad([](ModelConfig& c) { c.local_width = 0; });
  bad([](ModelConfig& c) { c.fixed_res = 10; });
  bad([](ModelConfig& c) { c.output_scale = 3; });
  bad([](ModelConfig& c) { c.encoder_dim = 7; });
}

TEST(ModelConfig, JsonRoundTripAndStrictKeys) {
  ModelConfig c = small_config();
  c.output_scale = 2;
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
  auto j = to_json(c);
  j["extra"] = 1;
  EXPECT_THROW(model_config_from_json(j), ConfigError);
  j = to_json(c);
  j.erase("prelu_init");
  EXPECT_THROW(model_config_from_json(j), ConfigError);
}

TEST(InitParams, DeterministicPerSeed) {
  const auto c = ModelConfig::tiny();
  EXPECT_EQ(init_params(c, 7), init_params(c, 7));
  EXPECT_NE(init_params(c, 7), init_params(c, 8));
}

TEST(InitParams, BiasesZeroAndSlopesAtInit) {
  const auto p = init_params(ModelConfig::tiny(), 3);
  for (const auto& [name, t] : p) {
    if (name.ends_with(".b")) {
      for (float v : t.values()) EXPECT_EQ(v, 0.0f) << name;
    }
    if (name.ends_with(".prelu")) {
      for (float v : t.values()) EXPECT_EQ(v, 0.25f) << name;
    }
  }
}

TEST(InitParams, CountMatchesClosedForm) {
  for (ModelConfig c : {ModelConfig{}, ModelConfig::tiny(), small_config()}) {
    EXPECT_EQ(param_shapes(c).element_count(), analytic_param_count(c));
    c.output_scale = 2;
    EXPECT_EQ(param_shapes(c).element_count(), analytic_param_count(c));
  }
  // Default network: frozen value of the closed form above.
  EXPECT_EQ(param_shapes(ModelConfig{}).element_count(), 54'740'803u);
}

TEST(InitParams, KernelShapesScaleWithWidth) {
  ModelConfig a = ModelConfig::tiny();
  ModelConfig b = a;
  b.global_width = b.encoder_dim = 16;
  const auto pa = param_shapes(a), pb = param_shapes(b);
  EXPECT_EQ(pa.at("global.group0.block0.conv1.w").shape(), (Shape{3, 3, 8, 8}));
  EXPECT_EQ(pb.at("global.group0.block0.conv1.w").shape(), (Shape{3, 3, 16, 16}));
  EXPECT_EQ(pb.at("head.conv.w").shape(), (Shape{3, 3, 4, 16}));
  EXPECT_EQ(pb.at("local.entry.w").shape(), (Shape{1, 1, 16, 8}));
}

TEST(CheckParams, NamesFirstOffendingTensor) {
  const auto p = init_params(ModelConfig::tiny(), 1);
  ModelConfig other = ModelConfig::tiny();
  other.local_width = 4;
  try {
    check_params(p, other);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("fusion.conv.w"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(check_params(p, ModelConfig::tiny()));
}

TEST(RirBlock, ZeroWeightsAreIdentity) {
  auto p = param_shapes(ModelConfig::tiny()).cast<double>();
  randomize(p, 1);
  zero_matching(p, "global.group0.block0.conv");
  const auto x = random_tensor<double>({5, 7, 8}, 2);
  EXPECT_EQ(rir_block(x, p, "global.group0.block0"), x);
}

TEST(RirBlock, OnePixelMatchesHandUnrolledConvolution) {
  auto p = param_shapes(ModelConfig::tiny()).cast<double>();
  randomize(p, 3);
  const std::string pre = "global.group1.block1";
  const auto x = random_tensor<double>({1, 1, 8}, 4);
  const std::vector<double> xs(x.values().begin(), x.values().end());
  auto h = prelu_vec(centre_tap(p.at(pre + ".conv1.w"), p.at(pre + ".conv1.b"), xs),
                     p.at(pre + ".prelu"));
  h = centre_tap(p.at(pre + ".conv2.w"), p.at(pre + ".conv2.b"), h);
  const auto y = rir_block(x, p, pre);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y[c], xs[c] + h[c], 1e-12);
}

TEST(RirBlock, PreservesShapeAndRejectsChannelMismatch) {
  const auto p = init_params(ModelConfig::tiny(), 5);
  for (auto [h, w] : {std::pair{1, 1}, {3, 9}, {12, 4}}) {
    const auto x = random_tensor<float>({std::size_t(h), std::size_t(w), 8}, 6);
    EXPECT_EQ(rir_block(x, p, "global.group0.block0").shape(), x.shape());
  }
  EXPECT_THROW(rir_block(Tensor<float>({4, 4, 5}), p, "global.group0.block0"), ShapeError);
}

TEST(ResidualGroup, ZeroWeightsAreIdentity) {
  auto p = param_shapes(ModelConfig::tiny()).cast<double>();
  randomize(p, 7);
  zero_matching(p, "global.group1.");
  const auto x = random_tensor<double>({4, 6, 8}, 8);
  EXPECT_EQ(residual_group(x, p, "global.group1", 2), x);
}

TEST(ResidualGroup, SingleBlockEqualsManualComposition) {
  auto p = param_shapes(ModelConfig::tiny()).cast<double>();
  randomize(p, 9);
  const auto x = random_tensor<double>({4, 4, 8}, 10);
  const auto inner = rir_block(x, p, "global.group0.block0");
  Tape<double> tape(false);
  const Var conv = layers::conv(tape, tape.constant(inner), p, "global.group0.conv");
  const auto manual = tape.value(ops::add(tape, tape.constant(x), conv));
  EXPECT_LT(max_abs_diff(residual_group(x, p, "global.group0", 1), manual), 1e-14);
}

TEST(ResidualGroup, JacobianIsIdentityAtZeroWeights) {
  auto p = param_shapes(ModelConfig::tiny()).cast<double>();
  randomize(p, 11);
  zero_matching(p, "global.group0.");
  auto x = random_tensor<double>({3, 3, 8}, 12);
  // Finite differences of every output element w.r.t. every input element.
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + 1e-5;
    const auto up = residual_group(x, p, "global.group0", 2);
    x[i] = saved - 1e-5;
    const auto down = residual_group(x, p, "global.group0", 2);
    x[i] = saved;
    for (std::size_t o = 0; o < x.size(); ++o) {
      EXPECT_NEAR((up[o] - down[o]) / 2e-5, o == i ? 1.0 : 0.0, 1e-9);
    }
  }
}

TEST(GlobalPath, TrunkRunsAtQuarterResolution) {
  const auto c = ModelConfig::tiny();
  const auto p = init_params(c, 13);
  for (std::size_t side : {8u, 20u}) {
    Tape<float> tape(false);
    Var trunk;
    const Var out = layers::global_path(
        tape, tape.constant(random_tensor<float>({side, side, 8}, 14)), p, c, &trunk);
    EXPECT_EQ(tape.value(trunk).shape(), (Shape{side / 4, side / 4, 8}));
    EXPECT_EQ(tape.value(out).shape(), (Shape{side, side, 8}));
    EXPECT_EQ(tape.value(trunk).size() * 16, tape.value(out).size());
  }
}

TEST(GlobalPath, AcceptsLargestReportedSide) {
  // 312 is the largest side the full network fits at on one GPU; with a
  // narrow global path the same geometry applies: trunk 78 x 78.
  ModelConfig c = ModelConfig::tiny();
  c.G = c.B = 1;
  c.global_width = c.encoder_dim = 2;
  const auto p = init_params(c, 15);
  Tape<float> tape(false);
  Var trunk;
  layers::global_path(tape, tape.constant(Tensor<float>({312, 312, 2})), p, c, &trunk);
  EXPECT_EQ(tape.value(trunk).shape(), (Shape{78, 78, 2}));
}

TEST(GlobalPath, RejectsNonDivisibleInputWithHint) {
  const auto c = ModelConfig::tiny();
  const auto p = init_params(c, 16);
  try {
    global_path(Tensor<float>({6, 8, 8}), p, c);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(Msrb, ZeroWeightsAreIdentity) {
  auto p = param_shapes(ModelConfig::tiny()).cast<double>();
  randomize(p, 17);
  zero_matching(p, "local.msrb1.");
  const auto x = random_tensor<double>({5, 3, 8}, 18);
  EXPECT_EQ(msrb(x, p, "local.msrb1"), x);
}

TEST(Msrb, OnePixelMatchesHandUnrolledExchange) {
  auto p = param_shapes(small_config()).cast<double>();
  randomize(p, 19);
  const std::string pre = "local.msrb0";
  const auto x = random_tensor<double>({1, 1, 5}, 20);
  const std::vector<double> xs(x.values().begin(), x.values().end());
  auto stage = [&](const std::string& s, const std::vector<double>& in) {
    return prelu_vec(centre_tap(p.at(pre + "." + s + ".conv.w"), p.at(pre + "." + s + ".conv.b"), in),
                     p.at(pre + "." + s + ".prelu"));
  };
  const auto p1 = stage("p1", xs);
  const auto q1 = stage("q1", xs);
  const auto p2 = stage("p2", cat(p1, q1));
  const auto q2 = stage("q2", cat(q1, p1));
  const auto fused = centre_tap(p.at(pre + ".fuse.w"), p.at(pre + ".fuse.b"), cat(p2, q2));
  const auto y = msrb(x, p, pre);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(y[c], xs[c] + fused[c], 1e-12);
}

TEST(Msrb, PreservesShapeAndRejectsChannelMismatch) {
  const auto p = init_params(ModelConfig::tiny(), 21);
  for (auto [h, w] : {std::pair{1, 1}, {2, 7}, {9, 9}}) {
    const auto x = random_tensor<float>({std::size_t(h), std::size_t(w), 8}, 22);
    EXPECT_EQ(msrb(x, p, "local.msrb0").shape(), x.shape());
  }
  EXPECT_THROW(msrb(Tensor<float>({4, 4, 3}), p, "local.msrb0"), ShapeError);
}

TEST(LocalPath, SingleBlockEqualsEntryThenMsrb) {
  ModelConfig c = ModelConfig::tiny();
  c.M = 1;
  const auto p = init_params(c, 23);
  const auto x = random_tensor<float>({4, 8, 8}, 24);
  Tape<float> tape(false);
  const auto entry = tape.value(layers::conv(tape, tape.constant(x), p, "local.entry"));
  EXPECT_EQ(local_path(x, p, c), msrb(entry, p, "local.msrb0"));
}

TEST(LocalPath, ZeroBlocksLeaveEntryOutput) {
  const auto c = ModelConfig::tiny();
  auto p = init_params(c, 25);
  zero_matching(p, "local.msrb");
  const auto x = random_tensor<float>({4, 4, 8}, 26);
  Tape<float> tape(false);
  const auto entry = tape.value(layers::conv(tape, tape.constant(x), p, "local.entry"));
  EXPECT_EQ(local_path(x, p, c), entry);
}

TEST(LocalPath, GradientsMatchFiniteDifferences) {
  const auto c = ModelConfig::tiny();
  auto p = init_params(c, 27).cast<double>();
  randomize(p, 28);
  const auto x = random_tensor<double>({4, 4, 8}, 29);
  const auto target = random_tensor<double>({4, 4, 8}, 30);
  // Only local-path tensors take part in this loss.
  ModelParams<double> local;
  for (const auto& [name, t] : p) {
    if (name.starts_with("local.")) local.add(name, t);
  }
  const auto report = testing::check_param_gradients(
      local,
      [&](Tape<double>& t, const ModelParams<double>& params) {
        return ops::l1_loss(t, layers::local_path(t, t.constant(x), params, c), target);
      },
      1e-5, 1e-4);
  EXPECT_GT(report.checked, 0u);
  for (const auto& f : report.failures) {
    ADD_FAILURE() << f.param << "[" << f.index << "] analytic " << f.analytic << " numeric "
                  << f.numeric;
  }
}

TEST(PyramidEncoder, ZeroWeightsGiveZeroVector) {
  const auto c = ModelConfig::tiny();
  const auto p = param_shapes(c);
  const auto v = pyramid_encoder(Tensor<float>({16, 16, 4}, 0.5f), p, c);
  for (float x : v.values()) EXPECT_EQ(x, 0.0f);
}

TEST(PyramidEncoder, LengthIndependentOfInputResolution) {
  ModelConfig c = ModelConfig::tiny();
  c.P = 6;
  c.fixed_res = 192;
  const auto p = init_params(c, 31);
  for (std::size_t side : {64u, 192u, 448u}) {
    const auto v = pyramid_encoder(random_tensor<float>({side, side, 4}, 32, 0, 1), p, c);
    EXPECT_EQ(v.shape(), (Shape{8}));
  }
}

TEST(PyramidEncoder, SingleLevelMatchesHandPooling) {
  ModelConfig c = ModelConfig::tiny();
  c.P = 1;
  c.fixed_res = 4;
  auto p = param_shapes(c).cast<double>();
  // Identity-like kernel: centre tap copies input channel i to output i.
  auto& w = p.at("encoder.level0.conv.w");
  for (std::size_t i = 0; i < 4; ++i) w[((1 * 3 + 1) * 4 + i) * 8 + i] = 1.0;
  p.at("encoder.level0.prelu").fill(0.5);
  const auto x = random_tensor<double>({4, 4, 4}, 33);  // already at fixed_res
  // Stride 2 on 4x4 samples positions (0,0), (0,2), (2,0), (2,2) -> 2x2.
  const auto v = pyramid_encoder(x, p, c);
  for (std::size_t ch = 0; ch < 8; ++ch) {
    double expect = 0.0;
    if (ch < 4) {
      for (std::size_t y : {0u, 2u}) {
        for (std::size_t xx : {0u, 2u}) {
          const double s = x.at(y, xx, ch);
          expect += s > 0 ? s : 0.5 * s;
        }
      }
      expect /= 4.0;
    }
    EXPECT_NEAR(v[ch], expect, 1e-12) << ch;
  }
}

TEST(PyramidEncoder, InvariantToExactlyInvertibleUpsampling) {
  const auto c = ModelConfig::tiny();
  auto p = init_params(c, 34).cast<double>();
  const auto direct = random_tensor<double>({8, 8, 4}, 35, 0, 1);
  Tensor<double> up({16, 16, 4});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t ch = 0; ch < 4; ++ch) up.at(y, x, ch) = direct.at(y / 2, x / 2, ch);
  EXPECT_LT(max_abs_diff(pyramid_encoder(direct, p, c), pyramid_encoder(up, p, c)), 1e-6);
}

TEST(PyramidEncoder, RejectsEmptyInput) {
  const auto c = ModelConfig::tiny();
  EXPECT_THROW(pyramid_encoder(Tensor<float>({0, 4, 4}), param_shapes(c), c), ShapeError);
}

TEST(HernForward, OutputShapeContract) {
  for (int s : {1, 2}) {
    ModelConfig c = ModelConfig::tiny();
    c.output_scale = s;
    const auto p = init_params(c, 36);
    for (auto [h, w] : {std::pair{4, 4}, {8, 12}, {16, 4}}) {
      const auto raw = random_tensor<float>({std::size_t(h), std::size_t(w), 4}, 37, 0, 1);
      EXPECT_EQ(hern_forward(raw, p, c).shape(), (Shape{std::size_t(s * h), std::size_t(s * w), 3}));
    }
  }
}

TEST(HernForward, ZeroInputWithZeroBiasesGivesZeroOutput) {
  for (int s : {1, 2}) {
    ModelConfig c = ModelConfig::tiny();
    c.output_scale = s;
    const auto out = hern_forward(Tensor<float>({8, 8, 4}), init_params(c, 38), c);
    for (float v : out.values()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(HernForward, RejectsNonDivisibleSides) {
  const auto c = ModelConfig::tiny();
  const auto p = init_params(c, 39);
  EXPECT_THROW(hern_forward(Tensor<float>({6, 8, 4}), p, c), DimensionError);
  EXPECT_THROW(hern_forward(Tensor<float>({8, 8, 3}), p, c), ShapeError);
}

TEST(HernForward, SameParamsRunAtEveryStageResolution) {
  const auto c = ModelConfig::tiny();
  const auto p = init_params(c, 40);
  const auto before = p;
  for (std::size_t side : {16u, 32u, 72u}) {
    EXPECT_EQ(hern_forward(random_tensor<float>({side, side, 4}, 41, 0, 1), p, c).shape(),
              (Shape{side, side, 3}));
  }
  EXPECT_EQ(p, before);
}

TEST(HernForward, SampledGradientsMatchFiniteDifferences) {
  // Every 7th element of every tensor; the exhaustive check is part of the
  // acceptance suite.
  const auto c = ModelConfig::tiny();
  auto p = init_params(c, 42).cast<double>();
  randomize(p, 43, 0.2);
  const auto raw = random_tensor<double>({8, 8, 4}, 44, 0, 1);
  const auto target = random_tensor<double>({8, 8, 3}, 45, 0, 1);
  const auto report = testing::check_param_gradients(
      p,
      [&](Tape<double>& t, const ModelParams<double>& params) {
        return ops::l1_loss(t, layers::hern_forward(t, t.constant(raw), params, c), target);
      },
      1e-5, 1e-4, 7);
  for (const auto& f : report.failures) {
    ADD_FAILURE() << f.param << "[" << f.index << "] analytic " << f.analytic << " numeric "
                  << f.numeric;
  }
}

TEST(InferPadded, DivisibleInputMatchesDirectForward) {
  const auto c = ModelConfig::tiny();
  const auto p = init_params(c, 46);
  const RawPatch raw(random_tensor<float>({8, 12, 4}, 47, 0, 1));
  EXPECT_EQ(infer_padded(raw, p, c), hern_forward(raw, p, c));
}

TEST(InferPadded, CropsToOriginalSize) {
  for (int s : {1, 2}) {
    ModelConfig c = ModelConfig::tiny();
    c.output_scale = s;
    const auto p = init_params(c, 48);
    const auto out = infer_padded(RawPatch(random_tensor<float>({5, 7, 4}, 49, 0, 1)), p, c);
    EXPECT_EQ(out.data().shape(), (Shape{std::size_t(5 * s), std::size_t(7 * s), 3}));
  }
}

TEST(InferPadded, PaddedOddInputIsFinite) {
  const auto c = ModelConfig::tiny();
  const auto p = init_params(c, 50);
  const auto out = infer_padded(RawPatch(random_tensor<float>({13, 15, 4}, 51, 0, 1)), p, c);
  EXPECT_EQ(out.data().shape(), (Shape{13, 15, 3}));
  for (float v : out.data().values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(infer_padded(RawPatch(Tensor<float>({3, 8, 4})), p, c), DimensionError);
}

}  // namespace
}  // namespace hern
