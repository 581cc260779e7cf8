#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hern/checkpoint.hpp"
#include "hern/dataset.hpp"
#include "hern/ensemble.hpp"
#include "hern/error.hpp"
#include "hern/image_io.hpp"
#include "hern/memory.hpp"
#include "hern/metrics.hpp"
#include "hern/run_config.hpp"
#include "hern/trainer.hpp"

namespace fs = std::filesystem;
using namespace hern;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

constexpr const char* kMetricsHelp =
    "PSNR: 10 log10(1 / MSE) over all channels of [0,1] images after clamping; "
    "identical images report inf. SSIM: 11x11 Gaussian window, sigma 1.5, K1 = 0.01, "
    "K2 = 0.03, dynamic range 1, averaged over every valid window position and channel "
    "(images smaller than 11 pixels are rejected). Means are arithmetic over images.";

struct GlobalArgs {
  std::optional<fs::path> config;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
};

RunConfig resolve_config(const GlobalArgs& g) {
  RunConfig c = RunConfig::preset(g.preset);
  if (g.config) {
    try {
      c = load_run_config(*g.config, c);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  if (g.seed) c.set_seed(*g.seed);
  c.validate();
  return c;
}

std::string format_rate(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", lr);
  return buf;
}

void print_schedule(const TrainSchedule& schedule, std::ostream& out) {
  out << "stage  patch  epochs  lr        batch\n";
  for (std::size_t i = 0; i < schedule.stages.size(); ++i) {
    const auto& s = schedule.stages[i];
    out << std::left << std::setw(7) << i + 1 << std::setw(7) << s.patch_size << std::setw(8)
        << s.epochs << std::setw(10) << format_rate(s.learning_rate) << s.batch_size << '\n';
  }
  out << std::right;
}

// PNG files directly inside `dir`, sorted by name.
std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_make_dataset(const GlobalArgs& g) {
  const RunConfig c = resolve_config(g);
  const fs::path root = g.out.value_or(c.data.root);
  make_dataset(c.data.synthetic, root);
  std::cout << "wrote " << c.data.synthetic.count << " pairs to " << root.string() << '\n';
  return kExitOk;
}

int cmd_train(const GlobalArgs& g, const std::optional<fs::path>& resume, bool dry_run) {
  const RunConfig c = resolve_config(g);
  const fs::path out_dir = g.out.value_or(c.output_dir);
  print_schedule(c.schedule, std::cout);
  if (dry_run) return kExitOk;

  const RunSeeds seeds = run_seeds(c.seed);
  Checkpoint state;
  if (resume) {
    state = load_checkpoint(*resume);
    if (!(state.config == c.model)) {
      throw ConfigError("checkpoint '" + resume->string() +
                        "' was trained with a different model config");
    }
    std::cout << "resuming at epoch " << global_epoch(c.schedule, state.stage_index,
                                                      state.epoch_index)
              << '\n';
  } else {
    state = Checkpoint::fresh(c.model, seeds.init);
  }
  const Dataset data = load_dataset(c.data.root);
  if (data.samples.front().scale != c.model.output_scale) {
    throw ConfigError("dataset scale " + std::to_string(data.samples.front().scale) +
                      " differs from model output_scale " + std::to_string(c.model.output_scale));
  }

  fs::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.json");
    cfg << to_json(c).dump(2) << '\n';
  }
  const fs::path csv_path = out_dir / "metrics.csv";
  const bool header = !resume || !fs::exists(csv_path);
  std::ofstream csv(csv_path, resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write '" + csv_path.string() + "'");
  if (header) write_metrics_csv(csv, {}, true);

  const int total = global_epoch(c.schedule, static_cast<int>(c.schedule.stages.size()), 0) - 1;
  TrainOptions options;
  options.checkpoint_dir = out_dir / "checkpoints";
  options.on_epoch = [&](const EpochMetrics& m) {
    write_metrics_csv(csv, std::span(&m, 1), false);
    csv.flush();
    std::cout << "epoch " << m.epoch << '/' << total << "  patch " << m.patch_size << "  l1 "
              << std::setprecision(6) << m.mean_l1 << "  lr " << format_rate(m.learning_rate)
              << "  " << std::setprecision(3) << m.wall_seconds << "s\n";
  };
  progressive_train(state, data.samples, c.schedule, seeds.train, options);
  std::cout << "checkpoints in " << options.checkpoint_dir->string() << '\n';
  return kExitOk;
}

// Highest-numbered epoch checkpoint under <output_dir>/checkpoints.
fs::path latest_checkpoint(const fs::path& output_dir) {
  const fs::path dir = output_dir / "checkpoints";
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".hern") files.push_back(e.path());
    }
  }
  if (files.empty()) {
    throw ConfigError("no --checkpoints given and none found in '" + dir.string() + "'");
  }
  return *std::max_element(files.begin(), files.end());
}

int cmd_infer(const GlobalArgs& g, const std::vector<fs::path>& checkpoint_paths,
              const fs::path& input, bool self_ens) {
  if (!g.out) throw ConfigError("infer: --out is required");
  std::vector<fs::path> paths = checkpoint_paths;
  if (paths.empty()) paths.push_back(latest_checkpoint(resolve_config(g).output_dir));
  std::vector<Checkpoint> checkpoints;
  for (const auto& p : paths) checkpoints.push_back(load_checkpoint(p));
  for (const auto& ck : checkpoints) {
    if (!(ck.config == checkpoints.front().config)) {
      throw ConfigError("infer: checkpoints were trained with different model configs");
    }
  }

  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(input)) {
    fs::create_directories(*g.out);
    for (const auto& f : list_pngs(input)) jobs.emplace_back(f, *g.out / f.filename());
  } else {
    if (g.out->has_parent_path()) fs::create_directories(g.out->parent_path());
    jobs.emplace_back(input, *g.out);
  }
  for (const auto& [src, dst] : jobs) {
    const RawPatch raw = read_raw_png(src);
    write_rgb_png(epoch_ensemble(checkpoints, raw, self_ens), dst);
    std::cout << src.string() << " -> " << dst.string() << '\n';
  }
  return kExitOk;
}

int cmd_eval(const GlobalArgs& g, const fs::path& pred, const fs::path& target) {
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> pairs;
  if (fs::is_directory(pred) != fs::is_directory(target)) {
    throw ConfigError("eval: prediction and target must both be files or both be directories");
  }
  if (fs::is_directory(pred)) {
    for (const auto& f : list_pngs(target)) {
      const fs::path p = pred / f.filename();
      if (!fs::exists(p)) throw IoError("eval: no prediction for '" + f.filename().string() + "'");
      pairs.push_back({f.stem().string(), {p, f}});
    }
    if (pairs.empty()) throw IoError("eval: no PNG files in '" + target.string() + "'");
  } else {
    pairs.push_back({target.stem().string(), {pred, target}});
  }

  std::ostringstream csv;
  csv << "image,psnr,ssim\n" << std::setprecision(10);
  double psnr_sum = 0.0;
  double ssim_sum = 0.0;
  for (const auto& [name, files] : pairs) {
    const RgbImage a = read_rgb_png(files.first);
    const RgbImage b = read_rgb_png(files.second);
    const double p = psnr(a, b);
    const double s = ssim(a, b);
    psnr_sum += p;
    ssim_sum += s;
    csv << name << ',' << p << ',' << s << '\n';
  }
  const auto n = static_cast<double>(pairs.size());
  csv << "mean," << psnr_sum / n << ',' << ssim_sum / n << '\n';
  std::cout << csv.str();
  if (g.out) {
    std::ofstream f(*g.out);
    if (!(f << csv.str())) throw IoError("cannot write '" + g.out->string() + "'");
  }
  return kExitOk;
}

void write_layers_csv(const MemoryEstimate& est, const fs::path& path) {
  std::ofstream f(path);
  f << "layer,elements,bytes\n";
  for (const auto& l : est.per_layer) f << l.path << ',' << l.elements << ',' << l.bytes << '\n';
  f << "total,," << est.total_bytes << '\n';
  if (!f) throw IoError("cannot write '" + path.string() + "'");
}

void write_curve_csv(const ArchSpec& spec, int max_side, int batch, bool grad,
                     const fs::path& path) {
  std::ofstream f(path);
  f << "side,bytes\n";
  const int d = spec.required_divisor();
  for (int side = d; side <= max_side; side += d) {
    f << side << ',' << estimate_memory(spec, side, batch, grad).total_bytes << '\n';
  }
  if (!f) throw IoError("cannot write '" + path.string() + "'");
}

struct MemoryArgs {
  int side = 312;
  int baseline_side = 144;
  int batch = 1;
  int max_side = 512;
  bool forward_only = false;
  std::optional<double> budget_gb;
};

int cmd_estimate_memory(const GlobalArgs& g, const MemoryArgs& a) {
  const RunConfig c = resolve_config(g);
  const ArchSpec hern = hern_arch(c.model);
  const ArchSpec baseline = rcan_like_arch();
  const bool grad = !a.forward_only;
  if (a.max_side < 1) throw ConfigError("estimate-memory: --max-side must be >= 1");
  // Estimate before touching the disk so invalid sides fail as config errors.
  MemoryEstimate h;
  MemoryEstimate r;
  try {
    h = estimate_memory(hern, a.side, a.batch, grad);
    r = estimate_memory(baseline, a.baseline_side, a.batch, grad);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }

  const fs::path dir = g.out.value_or(c.output_dir / "memory");
  fs::create_directories(dir);
  write_layers_csv(h, dir / "hern_layers.csv");
  write_layers_csv(r, dir / "baseline_layers.csv");
  write_curve_csv(hern, a.max_side, a.batch, grad, dir / "hern_curve.csv");
  write_curve_csv(baseline, a.max_side, a.batch, grad, dir / "baseline_curve.csv");

  std::cout << "mode " << (grad ? "forward+backward" : "forward") << ", batch " << a.batch
            << ", 4 bytes per element\n"
            << "hern side " << a.side << ": " << h.total_bytes << " bytes\n"
            << "baseline side " << a.baseline_side << ": " << r.total_bytes << " bytes\n"
            << "hern <= baseline: " << (h.total_bytes <= r.total_bytes ? "yes" : "no") << '\n';
  if (a.budget_gb) {
    if (!(*a.budget_gb > 0.0)) throw ConfigError("estimate-memory: --budget-gb must be > 0");
    const auto budget = static_cast<std::uint64_t>(*a.budget_gb * 1e9);
    const int hs = max_feasible_patch(hern, budget, a.batch, grad);
    const int rs = max_feasible_patch(baseline, budget, a.batch, grad);
    std::cout << "max side at " << *a.budget_gb << " GB: hern " << hs << ", baseline " << rs
              << ", ratio " << std::setprecision(4) << static_cast<double>(hs) / rs << '\n';
  }
  std::cout << "tables in " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HERN RAW-to-RGB network: data synthesis, training, inference and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config, "JSON run config overlaid on the preset")
      ->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Base run config")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "Run seed; overrides the config");
  app.add_option("--out", g.out,
                 "Output location: dataset root, training directory, inference PNG or "
                 "directory, eval CSV, or memory table directory");

  auto* make = app.add_subcommand("make-dataset", "Write synthetic RAW/RGB pairs and a manifest");

  auto* train = app.add_subcommand("train", "Progressive training; writes checkpoints and metrics.csv");
  std::optional<fs::path> resume;
  bool dry_run = false;
  train->add_option("--resume", resume, "Continue from a checkpoint's stage and epoch cursor")
      ->check(CLI::ExistingFile);
  train->add_flag("--dry-run", dry_run, "Validate the config and print the schedule only");

  auto* infer = app.add_subcommand("infer", "Run a checkpoint or an epoch ensemble on RAW PNGs");
  std::vector<fs::path> checkpoints;
  fs::path input;
  bool self_ens = false;
  infer->add_option("input", input, "Mosaic PNG or directory of mosaic PNGs")->required();
  infer->add_option("--checkpoints", checkpoints, "Comma-separated checkpoints to average")
      ->delimiter(',');
  infer->add_flag("--self-ensemble", self_ens, "Average over the four flips");

  auto* eval = app.add_subcommand("eval", "Per-image and mean PSNR/SSIM as CSV");
  eval->footer(kMetricsHelp);
  fs::path pred;
  fs::path target;
  eval->add_option("prediction", pred, "RGB PNG or directory")->required()->check(CLI::ExistingPath);
  eval->add_option("target", target, "RGB PNG or directory")->required()->check(CLI::ExistingPath);

  auto* memory = app.add_subcommand("estimate-memory",
                                    "Activation memory tables and side/bytes curves");
  MemoryArgs mem;
  memory->add_option("--side", mem.side, "HERN input side")->capture_default_str();
  memory->add_option("--baseline-side", mem.baseline_side, "Baseline input side")
      ->capture_default_str();
  memory->add_option("--batch", mem.batch)->capture_default_str();
  memory->add_option("--max-side", mem.max_side, "Largest side in the curves")
      ->capture_default_str();
  memory->add_flag("--forward-only", mem.forward_only, "Exclude the gradient copy");
  memory->add_option("--budget-gb", mem.budget_gb, "Report the largest side within 1e9 x this");

  app.footer(kMetricsHelp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*make) return cmd_make_dataset(g);
    if (*train) return cmd_train(g, resume, dry_run);
    if (*infer) return cmd_infer(g, checkpoints, input, self_ens);
    if (*eval) return cmd_eval(g, pred, target);
    if (*memory) return cmd_estimate_memory(g, mem);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
