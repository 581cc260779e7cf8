#include "hern/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "hern/seeding.hpp"

namespace hern {
namespace {

enum StreamTag : std::uint64_t { kShuffleStream = 1, kSampleStream = 2 };

double sample_l1(const Tensor<float>& a, const Tensor<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return s / static_cast<double>(a.size());
}

double validation_score(const Checkpoint& state, std::span<const PairedSample> samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    total += sample_l1(infer_padded(s.raw, state.params, state.config).data(), s.rgb.data());
  }
  return total / static_cast<double>(samples.size());
}

// Keeps the newest `keep_last` files plus the best-scoring epoch.
class CheckpointRetention {
 public:
  CheckpointRetention(std::filesystem::path dir, int keep_last)
      : dir_(std::move(dir)), keep_last_(keep_last) {}

  void record(int epoch, double score) {
    written_.push_back(epoch);
    if (!best_ || score < best_->second) best_ = {epoch, score};
    if (keep_last_ <= 0) return;
    std::set<int> keep(written_.end() - std::min<std::ptrdiff_t>(keep_last_, std::ssize(written_)),
                       written_.end());
    keep.insert(best_->first);
    std::vector<int> kept;
    for (int e : written_) {
      if (keep.count(e)) {
        kept.push_back(e);
      } else {
        std::filesystem::remove(dir_ / checkpoint_filename(e));
      }
    }
    written_ = std::move(kept);
  }

 private:
  std::filesystem::path dir_;
  int keep_last_;
  std::vector<int> written_;
  std::optional<std::pair<int, double>> best_;
};

}  // namespace

void TrainSchedule::validate() const {
  if (stages.empty()) throw ConfigError("schedule: at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string where = "schedule stage " + std::to_string(i) + ": ";
    if (s.patch_size < 4 || s.patch_size % 4 != 0) {
      throw ConfigError(where + "patch_size must be a positive multiple of 4");
    }
    if (s.epochs < 1) throw ConfigError(where + "epochs must be >= 1");
    if (s.batch_size < 1) throw ConfigError(where + "batch_size must be >= 1");
    if (!(s.learning_rate >= 0.0) || !std::isfinite(s.learning_rate)) {
      throw ConfigError(where + "learning_rate must be finite and >= 0");
    }
    if (i > 0 && s.patch_size <= stages[i - 1].patch_size) {
      throw ConfigError(where + "patch sizes must be strictly increasing");
    }
  }
}

int TrainSchedule::max_patch_size() const {
  int m = 0;
  for (const auto& s : stages) m = std::max(m, s.patch_size);
  return m;
}

TrainSchedule TrainSchedule::paper() {
  return TrainSchedule{{{72, 48, 1e-4, 16}, {144, 36, 1e-5, 4}, {192, 24, 1e-5, 2},
                        {224, 8, 1e-5, 2}}};
}

TrainSchedule TrainSchedule::desk() {
  return TrainSchedule{{{16, 100, 3e-3, 1}, {32, 300, 4e-4, 1}}};
}

double l1_loss(std::span<const RgbImage> pred, std::span<const RgbImage> target) {
  if (pred.empty() || pred.size() != target.size()) {
    throw ShapeError("l1_loss: batch sizes " + std::to_string(pred.size()) + " and " +
                     std::to_string(target.size()) + " must match and be >= 1");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].data().shape() != target[i].data().shape()) {
      throw ShapeError("l1_loss: sample " + std::to_string(i) + " shapes " +
                       shape_string(pred[i].data().shape()) + " and " +
                       shape_string(target[i].data().shape()) + " differ");
    }
    total += sample_l1(pred[i].data(), target[i].data());
  }
  return total / static_cast<double>(pred.size());
}

void adam_step(ModelParams<float>& params, const ParamGrads<float>& grads, AdamState& state,
               double learning_rate) {
  for (const auto& [name, g] : grads) {
    if (params.at(name).shape() != g.shape()) {
      throw ShapeError("adam_step: gradient for '" + name + "' has shape " +
                       shape_string(g.shape()));
    }
    for (float v : g.values()) {
      if (!std::isfinite(v)) throw NumericError("adam_step: non-finite gradient in '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (auto& [name, p] : params) {
    const Tensor<float>& g = grads.at(name);
    Tensor<float>& m = state.m.at(name);
    Tensor<float>& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
      const double vi = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = learning_rate * (mi / c1) / (std::sqrt(vi / c2) + kAdamEpsilon);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

std::string checkpoint_filename(int epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".hern";
  return os.str();
}

int global_epoch(const TrainSchedule& schedule, int stage_index, int epoch_index) {
  int e = epoch_index + 1;
  for (int s = 0; s < stage_index && s < static_cast<int>(schedule.stages.size()); ++s) {
    e += schedule.stages[static_cast<std::size_t>(s)].epochs;
  }
  return e;
}

std::vector<EpochMetrics> train_stage(Checkpoint& state, std::span<const PairedSample> dataset,
                                      const TrainSchedule& schedule, std::uint64_t seed,
                                      const TrainOptions& options) {
  schedule.validate();
  if (dataset.empty()) throw ParameterError("train_stage: dataset is empty");
  if (state.stage_index < 0 || state.stage_index >= static_cast<int>(schedule.stages.size())) {
    throw ParameterError("train_stage: stage cursor " + std::to_string(state.stage_index) +
                         " is outside the schedule");
  }
  const auto stage_idx = static_cast<std::size_t>(state.stage_index);
  const TrainStage& stage = schedule.stages[stage_idx];
  const auto patch = static_cast<std::size_t>(stage.patch_size);
  for (const auto& s : dataset) {
    if (s.raw.height() < patch || s.raw.width() < patch) {
      throw ParameterError("train_stage: sample " + shape_string(s.raw.data().shape()) +
                           " is smaller than the stage patch size " + std::to_string(patch));
    }
  }
  check_params(state.params, state.config);
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);
  std::optional<CheckpointRetention> retention;
  if (options.checkpoint_dir) retention.emplace(*options.checkpoint_dir, options.keep_last);

  std::vector<EpochMetrics> metrics;
  const std::size_t n = dataset.size();
  const auto batch = static_cast<std::size_t>(stage.batch_size);
  while (state.epoch_index < stage.epochs) {
    const auto started = std::chrono::steady_clock::now();
    const auto epoch = static_cast<std::uint64_t>(state.epoch_index);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(seed, {kShuffleStream, stage_idx, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const float weight = 1.0f / static_cast<float>(end - start);
      ParamGrads<float> grads = state.params.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t id = order[k];
        const std::uint64_t sample_seed = derive_seed(seed, {kSampleStream, stage_idx, epoch, id});
        std::mt19937_64 flip_rng(mix64(sample_seed));
        const bool flip_h = (flip_rng() & 1u) != 0;
        const bool flip_v = (flip_rng() & 1u) != 0;
        const PairedSample sample =
            flip_pair(random_crop_pair(dataset[id], patch, sample_seed), flip_h, flip_v);

        Tape<float> tape;
        const Var out =
            layers::hern_forward(tape, tape.constant(sample.raw.data()), state.params, state.config);
        const Var loss = ops::l1_loss(tape, out, sample.rgb.data());
        batch_loss += tape.value(loss)[0];
        tape.backward(loss, weight);
        tape.accumulate_parameter_grads(grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train_stage: loss became non-finite in stage " +
                           std::to_string(stage_idx) + ", epoch " +
                           std::to_string(global_epoch(schedule, state.stage_index,
                                                       state.epoch_index)));
      }
      loss_sum += batch_loss;
      adam_step(state.params, grads, state.optimizer, stage.learning_rate);
    }

    EpochMetrics m;
    m.stage = state.stage_index;
    m.epoch = global_epoch(schedule, state.stage_index, state.epoch_index);
    m.mean_l1 = loss_sum / static_cast<double>(n);
    m.learning_rate = stage.learning_rate;
    m.patch_size = stage.patch_size;

    ++state.epoch_index;
    if (state.epoch_index == stage.epochs) {
      ++state.stage_index;
      state.epoch_index = 0;
    }
    if (options.checkpoint_dir) {
      save_checkpoint(state, *options.checkpoint_dir / checkpoint_filename(m.epoch));
      const double score =
          options.validation.empty() ? m.mean_l1 : validation_score(state, options.validation);
      retention->record(m.epoch, score);
    }
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    metrics.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
    if (state.stage_index != static_cast<int>(stage_idx)) break;
  }
  return metrics;
}

std::vector<EpochMetrics> progressive_train(Checkpoint& state,
                                            std::span<const PairedSample> dataset,
                                            const TrainSchedule& schedule, std::uint64_t seed,
                                            const TrainOptions& options) {
  schedule.validate();
  std::vector<EpochMetrics> timeline;
  while (state.stage_index < static_cast<int>(schedule.stages.size())) {
    auto stage_metrics = train_stage(state, dataset, schedule, seed, options);
    timeline.insert(timeline.end(), stage_metrics.begin(), stage_metrics.end());
  }
  return timeline;
}

void write_metrics_csv(std::ostream& out, std::span<const EpochMetrics> metrics, bool header) {
  if (header) out << "stage,epoch,mean_l1,lr,patch_size,wall_seconds\n";
  const auto flags = out.flags();
  for (const auto& m : metrics) {
    out << m.stage << ',' << m.epoch << ',' << std::setprecision(9) << m.mean_l1 << ','
        << m.learning_rate << ',' << m.patch_size << ',' << std::setprecision(6)
        << m.wall_seconds << '\n';
  }
  out.flags(flags);
}

}  // namespace hern
