#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "hern/cfa.hpp"
#include "hern/checkpoint.hpp"

namespace hern {

struct TrainStage {
  int patch_size = 0;  ///< RAW-domain side
  int epochs = 1;
  double learning_rate = 1e-4;
  int batch_size = 1;

  bool operator==(const TrainStage&) const = default;
};

struct TrainSchedule {
  std::vector<TrainStage> stages;

  /// Throws ConfigError unless patch sizes are positive multiples of 4 and
  /// strictly increasing, epochs and batch sizes >= 1 and rates finite and
  /// >= 0.
  void validate() const;
  int max_patch_size() const;

  /// 72/144/192/224 with 48/36/24/8 epochs, rates 1e-4 then 1e-5, batches
  /// 16/4/2/2.
  static TrainSchedule paper();
  /// Two-stage 16 -> 32 schedule for the tiny model on a CPU.
  static TrainSchedule desk();

  bool operator==(const TrainSchedule&) const = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// Mean over the batch of the per-pixel mean absolute difference.
double l1_loss(std::span<const RgbImage> pred, std::span<const RgbImage> target);

/// One bias-corrected Adam update. Throws NumericError naming the
/// parameter path if any gradient is NaN or infinite; nothing is modified
/// in that case.
void adam_step(ModelParams<float>& params, const ParamGrads<float>& grads, AdamState& state,
               double learning_rate);

struct EpochMetrics {
  int stage = 0;
  int epoch = 0;  ///< 1-based, counted across the whole schedule
  double mean_l1 = 0.0;
  double learning_rate = 0.0;
  int patch_size = 0;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  /// Per-epoch checkpoints are written here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Most recent checkpoints kept on disk; 0 keeps every epoch. The
  /// best-scoring epoch is always kept as well.
  int keep_last = 5;
  /// Scored after each epoch (mean L1 of full-size inference); when empty
  /// the epoch's training loss is used to pick the best epoch.
  std::vector<PairedSample> validation;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Checkpoint file name for a 1-based global epoch number.
std::string checkpoint_filename(int epoch);

/// Global 1-based epoch number of the cursor's next epoch.
int global_epoch(const TrainSchedule& schedule, int stage_index, int epoch_index);

/// Runs the remaining epochs of schedule.stages[state.stage_index] from
/// state.epoch_index. Each epoch shuffles, crops to the stage patch size,
/// applies random flips, and takes one Adam step per batch. Randomness is
/// derived from (seed, stage, epoch, sample), so resuming from any
/// checkpoint replays the same trajectory.
std::vector<EpochMetrics> train_stage(Checkpoint& state, std::span<const PairedSample> dataset,
                                      const TrainSchedule& schedule, std::uint64_t seed,
                                      const TrainOptions& options = {});

/// Runs every remaining stage. Parameters and optimizer moments carry over
/// stage boundaries unchanged.
std::vector<EpochMetrics> progressive_train(Checkpoint& state,
                                            std::span<const PairedSample> dataset,
                                            const TrainSchedule& schedule, std::uint64_t seed,
                                            const TrainOptions& options = {});

/// CSV with header stage,epoch,mean_l1,lr,patch_size,wall_seconds.
void write_metrics_csv(std::ostream& out, std::span<const EpochMetrics> metrics,
                       bool header = true);

}  // namespace hern
