// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_check.hpp"
#include "hern/checkpoint.hpp"
#include "hern/dataset.hpp"
#include "hern/ensemble.hpp"
#include "hern/memory.hpp"
#include "hern/metrics.hpp"
#include "hern/model.hpp"
#include "hern/run_config.hpp"
#include "hern/trainer.hpp"
#include "test_support.hpp"

namespace hern {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;
using testing::slurp;
using testing::TempDir;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

template <typename T>
void zero_matching(ModelParams<T>& p, std::string_view needle) {
  for (auto& [name, t] : p) {
    if (name.find(needle) != std::string::npos && !name.ends_with(".prelu")) t.fill(T{0});
  }
}

template <typename T>
ModelParams<T> random_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams<T> p = init_params(c, seed).template cast<T>();
  for (auto& [name, t] : p) {
    if (name.ends_with(".b")) t = random_tensor<T>(t.shape(), seed++, -0.1, 0.1);
    if (name.ends_with(".prelu")) t = random_tensor<T>(t.shape(), seed++, 0.1, 0.4);
  }
  return p;
}

// Per-pixel 4 -> 3 channel mix; flip-equivariant by construction.
RgbImage channel_mix(const RawPatch& raw) {
  const auto& x = raw.data();
  Tensor<float> out = Tensor<float>::image(x.height(), x.width(), 3);
  for (std::size_t y = 0; y < x.height(); ++y) {
    for (std::size_t c = 0; c < x.width(); ++c) {
      out.at(y, c, 0) = 0.7f * x.at(y, c, 0) - 0.1f * x.at(y, c, 3);
      out.at(y, c, 1) = 0.5f * (x.at(y, c, 1) + x.at(y, c, 3));
      out.at(y, c, 2) = 0.9f * x.at(y, c, 2) + 0.05f;
    }
  }
  return RgbImage(std::move(out));
}

double full_image_l1(const Checkpoint& state, std::span<const PairedSample> data) {
  double total = 0.0;
  for (const auto& s : data) {
    const std::vector<RgbImage> pred{infer_padded(s.raw, state.params, state.config)};
    const std::vector<RgbImage> target{s.rgb};
    total += l1_loss(pred, target);
  }
  return total / static_cast<double>(data.size());
}

Outcome gradient_correctness() {
  const auto start = Clock::now();
  const ModelConfig c = ModelConfig::tiny();
  const auto p = random_params<double>(c, 101);
  const auto raw = random_tensor<double>({8, 8, 4}, 102, 0, 1);
  const auto target = random_tensor<double>({8, 8, 3}, 103, 0, 1);
  const auto report = testing::check_param_gradients(
      p,
      [&](Tape<double>& t, const ModelParams<double>& params) {
        return ops::l1_loss(t, layers::hern_forward(t, t.constant(raw), params, c), target);
      },
      1e-5, 1e-4);
  const double secs = seconds_since(start);
  std::ostringstream d;
  d << report.checked << " of " << p.element_count() << " parameters, worst rel err "
    << fmt("%.2e", report.worst_rel_error) << ", " << report.failures.size() << " over 1e-4, "
    << fmt("%.1f", secs) << " s";
  if (!report.failures.empty()) {
    const auto& f = report.failures.front();
    d << "; first " << f.param << "[" << f.index << "]";
  }
  return {report.failures.empty() && report.checked == p.element_count() && secs < 60.0,
          d.str()};
}

Outcome residual_identities() {
  const ModelConfig c = ModelConfig::tiny();
  bool ok = true;
  std::vector<std::string> checked;
  auto expect = [&](bool cond, const std::string& what) {
    ok = ok && cond;
    checked.push_back(what + (cond ? "" : " FAILED"));
  };

  auto p = random_params<double>(c, 201);
  zero_matching(p, "global.group0.block1.conv");
  const auto x = random_tensor<double>({6, 10, 8}, 202);
  expect(rir_block(x, p, "global.group0.block1") == x, "rir_block");

  zero_matching(p, "global.group1.");
  expect(residual_group(x, p, "global.group1", c.B) == x, "residual_group");

  zero_matching(p, "local.msrb0.");
  expect(msrb(x, p, "local.msrb0") == x, "msrb");

  auto pf = random_params<float>(c, 203);
  zero_matching(pf, "global.group0.block0.conv");
  const auto xf = random_tensor<float>({5, 7, 8}, 204);
  expect(rir_block(xf, pf, "global.group0.block0") == xf, "rir_block(f32)");

  auto zero = random_params<double>(c, 205);
  zero_matching(zero, ".");
  const auto out = hern_forward(random_tensor<double>({8, 12, 4}, 206, 0, 1), zero, c);
  expect(std::all_of(out.values().begin(), out.values().end(), [](double v) { return v == 0.0; }),
         "hern_forward zero weights");

  const auto init = init_params(c, 207);
  const auto out0 = hern_forward(Tensor<float>({8, 8, 4}), init, c);
  expect(std::all_of(out0.values().begin(), out0.values().end(), [](float v) { return v == 0.0f; }),
         "hern_forward zero input, zero biases");

  std::string d;
  for (const auto& s : checked) d += (d.empty() ? "" : ", ") + s;
  return {ok, d + " exact"};
}

Outcome resolution_agnostic() {
  const ModelConfig c = ModelConfig::tiny();
  const auto p = init_params(c, 301);
  const auto before = p;
  bool ok = true;
  for (std::size_t side : {16u, 32u, 72u, 144u}) {
    const auto out = hern_forward(random_tensor<float>({side, side, 4}, 302 + side, 0, 1), p, c);
    ok = ok && out.shape() == Shape{side, side, 3};
  }
  ok = ok && p == before;
  check_params(p, c);

  SyntheticSpec spec;
  spec.count = 4;
  spec.height = spec.width = 16;
  spec.seed = 303;
  const auto data = synthesize_dataset(spec);
  const TrainSchedule schedule{{{8, 2, 1e-3, 2}, {16, 2, 0.0, 2}}};
  Checkpoint state = Checkpoint::fresh(c, 304);
  train_stage(state, data, schedule, 305);
  const auto after_first = state.params;
  const auto steps_first = state.optimizer.step;
  const bool moved = !(after_first == init_params(c, 304));
  train_stage(state, data, schedule, 305);
  const bool carried = state.params == after_first;
  const bool stepped = state.optimizer.step == steps_first + 4;

  std::ostringstream d;
  d << "sides 16/32/72/144 ok=" << ok << "; stage 1 moved params=" << moved
    << ", lr=0 stage took " << state.optimizer.step - steps_first
    << " Adam steps, params bit-identical=" << carried;
  return {ok && moved && carried && stepped, d.str()};
}

Outcome self_ensemble_equivariance() {
  const ModelConfig c = ModelConfig::tiny();
  const auto p = random_params<float>(c, 401);
  const ModelFn f = [&](const RawPatch& r) { return hern_forward(r, p, c); };
  double worst = 0.0;
  double bare_gap = 0.0;
  double fixed_point = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const RawPatch x(random_tensor<float>({16, 16, 4}, 402 + i, 0, 1));
    const RgbImage g = self_ensemble(f, x);
    for (const auto& t : FlipTransform::group()) {
      worst = std::max(worst, max_abs_diff(self_ensemble(f, t.apply(x)).data(), t.apply(g).data()));
      bare_gap = std::max(bare_gap, max_abs_diff(f(t.apply(x)).data(), t.apply(f(x)).data()));
    }
    fixed_point =
        std::max(fixed_point, max_abs_diff(self_ensemble(channel_mix, x).data(), channel_mix(x).data()));
  }
  std::ostringstream d;
  d << "20 inputs: max |g(tx) - t g(x)| " << fmt("%.2e", worst) << " (bare network "
    << fmt("%.2e", bare_gap) << "); fixed point gap " << fmt("%.2e", fixed_point);
  return {worst < 1e-5 && fixed_point <= 1e-6, d.str()};
}

Outcome overfit_convergence() {
  const auto start = Clock::now();
  const RunConfig config = RunConfig::desk();
  const RunSeeds seeds = run_seeds(config.seed);
  const auto data = synthesize_dataset(config.data.synthetic);

  struct Row {
    std::string name;
    std::uint64_t steps = 0;
    double train_l1 = 0.0;
    double image_l1 = 0.0;
    double seconds = 0.0;
    bool finite = false;
  };
  auto finish = [&](const std::string& name, const Checkpoint& s,
                    const std::vector<EpochMetrics>& m, Clock::time_point t0) {
    Row r{name, s.optimizer.step, m.back().mean_l1, full_image_l1(s, data), seconds_since(t0)};
    r.finite = std::isfinite(r.train_l1) && std::isfinite(r.image_l1);
    return r;
  };

  auto t0 = Clock::now();
  Checkpoint progressive = Checkpoint::fresh(config.model, seeds.init);
  const auto m1 = progressive_train(progressive, data, config.schedule, seeds.train);
  const Row prog = finish("progressive", progressive, m1, t0);

  // Same rate phases and step count, patch 32 throughout.
  t0 = Clock::now();
  const int side = config.schedule.max_patch_size();
  Checkpoint fixed = Checkpoint::fresh(config.model, seeds.init);
  std::vector<EpochMetrics> m2;
  for (const auto& stage : config.schedule.stages) {
    const TrainSchedule one{{{side, stage.epochs, stage.learning_rate, stage.batch_size}}};
    fixed.stage_index = 0;
    fixed.epoch_index = 0;
    const auto m = progressive_train(fixed, data, one, seeds.train);
    m2.insert(m2.end(), m.begin(), m.end());
  }
  const Row flat = finish("fixed-32", fixed, m2, t0);
  const double total = seconds_since(start);

  std::cout << "  paired-run table (8 pairs, 32x32, seed " << config.seed << ")\n"
            << "  run          steps  final_train_l1  image_l1   seconds\n";
  for (const Row& r : {prog, flat}) {
    std::printf("  %-12s %5llu  %14.6f  %9.6f  %7.1f\n", r.name.c_str(),
                static_cast<unsigned long long>(r.steps), r.train_l1, r.image_l1, r.seconds);
  }
  std::ostringstream d;
  d << "progressive image L1 " << fmt("%.5f", prog.image_l1) << " (< 0.01), paired runs "
    << prog.steps << "/" << flat.steps << " steps, total " << fmt("%.1f", total) << " s";
  const bool ok = prog.image_l1 < 0.01 && prog.finite && flat.finite && prog.steps == flat.steps &&
                  m1.size() == m2.size() && total < 300.0;
  return {ok, d.str()};
}

Outcome memory_model() {
  bool trunk_ok = true;
  const ModelConfig full;
  for (int side : {16, 64, 144, 312}) {
    const auto e = estimate_memory(hern_arch(full), side, 1, false);
    const auto full_res = static_cast<std::uint64_t>(side) * side * full.global_width;
    int trunk_layers = 0;
    for (const auto& l : e.per_layer) {
      if (l.path.starts_with("global.group") || l.path.starts_with("global.trunk")) {
        trunk_ok = trunk_ok && 16 * l.elements == full_res;
        ++trunk_layers;
      }
    }
    trunk_ok = trunk_ok && trunk_layers > 0;
  }
  const ModelConfig tiny = ModelConfig::tiny();
  const auto params = init_params(tiny, 601);
  for (std::size_t side : {8u, 16u, 32u}) {
    Tape<float> tape(false);
    layers::hern_forward(tape, tape.constant(Tensor<float>({side, side, 4})), params, tiny);
    std::uint64_t modeled = 0;
    for (const auto& l : estimate_memory(hern_arch(tiny), static_cast<int>(side), 1, false).per_layer) {
      modeled += l.elements;
    }
    trunk_ok = trunk_ok && modeled == tape.activation_elements();
  }

  // Every budget from the smallest that fits HERN at all, in 1% steps.
  const ArchSpec hern = hern_arch(full);
  const ArchSpec rcan = rcan_like_arch();
  const std::uint64_t floor = estimate_memory(hern, hern.required_divisor(), 1, true).total_bytes;
  const double top = 48.0 * (1ull << 30);
  double min_ratio = 1e9;
  double min_at = 0.0;
  double crossover = 0.0;
  int below = 0;
  int swept = 0;
  for (double b = static_cast<double>(floor); b <= top; b *= 1.01) {
    const auto budget = static_cast<std::uint64_t>(b);
    const double ratio = static_cast<double>(max_feasible_patch(hern, budget, 1)) /
                         static_cast<double>(max_feasible_patch(rcan, budget, 1));
    ++swept;
    if (ratio < min_ratio) {
      min_ratio = ratio;
      min_at = b;
    }
    if (ratio < 2.0) {
      ++below;
      crossover = b * 1.01;
    }
  }
  const int h12 = max_feasible_patch(hern, 12'000'000'000ull, 1);
  const int r12 = max_feasible_patch(rcan, 12'000'000'000ull, 1);

  std::ostringstream d;
  d << "(a) trunk 1/16 and tape cross-check " << (trunk_ok ? "exact" : "MISMATCH") << "; (b) "
    << swept << " budgets from " << fmt("%.1f", floor / 1e6) << " MB to 48 GiB, ratio < 2 at "
    << below << " (min " << fmt("%.2f", min_ratio) << " at " << fmt("%.1f", min_at / 1e6)
    << " MB)";
  if (below > 0) d << ", ratio >= 2 from " << fmt("%.1f", crossover / 1e6) << " MB upward";
  d << "; 12 GB: " << h12 << " vs " << r12 << " = " << fmt("%.2f", double(h12) / r12);
  return {trunk_ok && below == 0, d.str()};
}

Outcome metric_closed_forms() {
  Tensor<float> a = Tensor<float>::image(16, 16, 3);
  Tensor<float> b = Tensor<float>::image(16, 16, 3);
  a.fill(0.25f);
  b.fill(0.25f + 16.0f / 255.0f);
  const double p = psnr(RgbImage(a), RgbImage(b));
  const RgbImage x(random_tensor<float>({24, 20, 3}, 701, 0, 1));
  const double s = ssim(x, x);
  std::ostringstream d;
  d << "PSNR 16/255 offset " << fmt("%.4f", p) << " dB (closed form "
    << fmt("%.4f", 20.0 * std::log10(255.0 / 16.0)) << "), |diff from 24.0475| "
    << fmt("%.1e", std::abs(p - 24.0475)) << "; SSIM(x,x) " << fmt("%.17g", s)
    << "; PSNR(x,x) " << psnr(x, x);
  return {std::abs(p - 24.0475) < 1e-3 && s == 1.0 && std::isinf(psnr(x, x)), d.str()};
}

Outcome ensemble_mechanics() {
  const ModelConfig c = ModelConfig::tiny();
  Checkpoint base = Checkpoint::fresh(c, 801);
  base.params = random_params<float>(c, 802);
  const RawPatch raw(random_tensor<float>({12, 8, 4}, 803, 0, 1));
  const RgbImage single = infer_padded(raw, base.params, c);
  bool identity = true;
  for (std::size_t k : {1u, 2u, 5u}) {
    const std::vector<Checkpoint> same(k, base);
    identity = identity && epoch_ensemble(same, raw, false) == single;
  }

  std::vector<Checkpoint> cks;
  for (int i = 0; i < 4; ++i) {
    Checkpoint ck = Checkpoint::fresh(c, 810 + i);
    ck.params = random_params<float>(c, 820 + 10 * i);
    ck.epoch_index = i;
    cks.push_back(ck);
  }
  std::vector<int> order{0, 1, 2, 3};
  const RgbImage reference = epoch_ensemble(cks, raw, true);
  bool invariant = true;
  int perms = 0;
  do {
    std::vector<Checkpoint> permuted;
    for (int i : order) permuted.push_back(cks[static_cast<std::size_t>(i)]);
    invariant = invariant && epoch_ensemble(permuted, raw, true) == reference;
    ++perms;
  } while (std::next_permutation(order.begin(), order.end()));

  std::ostringstream d;
  d << "k = 1/2/5 identical checkpoints equal single inference: " << identity << "; " << perms
    << " orderings of 4 checkpoints bit-identical: " << invariant;
  return {identity && invariant, d.str()};
}

Outcome round_trips() {
  bool bayer = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RawPatch raw(random_tensor<float>({3 + seed % 5, 2 + seed % 7, 4}, 900 + seed, 0, 1));
    bayer = bayer && pack_bayer(unpack_bayer(raw)) == raw;
  }

  TempDir dir("acceptance");
  Checkpoint ck = Checkpoint::fresh(ModelConfig::tiny(), 901);
  ck.params = random_params<float>(ck.config, 902);
  ck.optimizer.step = 17;
  ck.stage_index = 1;
  ck.epoch_index = 3;
  save_checkpoint(ck, dir.path() / "a.hern");
  const Checkpoint loaded = load_checkpoint(dir.path() / "a.hern");
  save_checkpoint(loaded, dir.path() / "b.hern");
  const bool ckpt = loaded == ck && slurp(dir.path() / "a.hern") == slurp(dir.path() / "b.hern");

  SyntheticSpec spec;
  spec.seed = 903;
  make_dataset(spec, dir.path() / "d1");
  make_dataset(spec, dir.path() / "d2");
  bool dataset = synthesize_dataset(spec) == synthesize_dataset(spec);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path() / "d1")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir.path() / "d1");
    dataset = dataset && slurp(e.path()) == slurp(dir.path() / "d2" / rel);
    ++files;
  }
  spec.seed = 904;
  dataset = dataset && !(synthesize_dataset(spec) == synthesize_dataset({}));

  std::ostringstream d;
  d << "pack/unpack exact on 50 shapes: " << bayer << "; checkpoint bytes identical: " << ckpt
    << "; " << files << " dataset files identical per seed: " << dataset;
  return {bayer && ckpt && dataset && files == 2 * spec.count + 1, d.str()};
}

}  // namespace
}  // namespace hern

int main() {
  using namespace hern;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 gradient correctness", gradient_correctness},
      {"2 residual identities", residual_identities},
      {"3 resolution agnosticism", resolution_agnostic},
      {"4 self-ensemble equivariance", self_ensemble_equivariance},
      {"5 overfit convergence", overfit_convergence},
      {"6 memory model", memory_model},
      {"7 metrics", metric_closed_forms},
      {"8 ensemble mechanics", ensemble_mechanics},
      {"9 round trips", round_trips},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << name << "] " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
