// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/data_model.hpp"
#include "core/experts_moe.hpp"
#include "core/losses.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace testam {

struct ScheduleConfig {
  double lr_min = 1e-7;
  double lr_max = 3e-3;
  long warmup_steps = 4000;   ///< T_warm
  long restart_period = 4000; ///< T_freq

  void validate() const;
  bool operator==(const ScheduleConfig &) const = default;
};

/// Linear warmup over [0, T_warm), then cosine annealing from lr_max to lr_min
/// restarting every T_freq steps.
double lr_at_step(long step, const ScheduleConfig &cfg);
/// Warmup branch at T_cur steps into the warmup.
double warmup_lr(long t_cur, const ScheduleConfig &cfg);
/// Cosine branch at T_cur steps since the last restart.
double cosine_lr(long t_cur, const ScheduleConfig &cfg);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  bool operator==(const AdamConfig &) const = default;
};

struct AdamState {
  long step = 0;
  std::vector<ad::Matrix> m, v;
};

class Adam {
public:
  Adam(ad::ParameterSet &params, AdamConfig cfg);

  /// Applies one update from the gradients currently held by the parameters.
  void step(double lr);

  const AdamState &state() const { return state_; }
  void set_state(AdamState s);

private:
  ad::ParameterSet &params_;
  AdamConfig cfg_;
  AdamState state_;
};

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ad::ParameterSet &params, double max_norm);

struct TrainConfig {
  ModelConfig model; ///< num_nodes and steps_per_day are taken from the data
  ScheduleConfig schedule;
  AdamConfig adam;
  LossWeights loss;
  int epochs = 100;
  int batch_size = 32;
  double q = 0.7;
  std::uint64_t seed = 1;
  int patience = 15;
  double grad_clip = 5.0;
  bool mask_zero = true;
  SplitRatios split = kDefaultSplit;

  void validate() const;
  /// Loss weights after applying the ablation flags.
  LossWeights effective_loss() const;
  bool operator==(const TrainConfig &) const = default;
};

struct EpochRecord {
  int epoch = 0;
  long step = 0; ///< optimizer steps completed at the end of the epoch
  double lr = 0.0;
  double loss = 0.0;
  double regression = 0.0;
  double worst = 0.0;
  double best = 0.0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  std::array<double, kNumExperts> selection_share{};
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_mae = 0.0;
  bool stopped_early = false;
};

/// Progress that survives a checkpoint round trip.
struct TrainProgress {
  int epochs_done = 0;
  int stale_epochs = 0;
  double best_val_mae = 0.0;
  int best_epoch = -1;
  AdamState adam;
  std::vector<ad::Matrix> best_params;
};

struct TrainHooks {
  /// Called after every epoch with the current progress.
  std::function<void(const TrainingHistory &, const TrainProgress &)> on_epoch;
};

/// Runs Adam with the configured schedule and early stopping on validation
/// MAE. On return the model holds the best-validation parameters. Throws a
/// Numeric error if the loss becomes non-finite.
TrainingHistory train(TestamModel &model, const DatasetSplit &split,
                      const TrainConfig &cfg, TrainProgress *resume = nullptr,
                      const TrainHooks &hooks = {});

/// Masked MAE of the composite prediction over a sample set.
double evaluate_mae(const TestamModel &model, const std::vector<WindowedSample> &samples,
                    int batch_size);

/// Composite and per-expert predictions for a sample set, batched.
struct Predictions {
  Layout layout;                   ///< [S, T, N]
  ad::Matrix y;                    ///< [S*T*N, 1]
  ad::Matrix y_hat;                ///< composite
  std::array<ad::Matrix, kNumExperts> y_hat_expert; ///< empty when not run
  ad::Matrix p;                    ///< [S*T*N, E]; empty without gating
  std::vector<int> selected;
  bool gating = true;
};

/// Batches are spread over up to `max_threads()` workers; results do not
/// depend on the thread count.
Predictions predict(const TestamModel &model,
                    const std::vector<WindowedSample> &samples, int batch_size);

/// Process-wide cap on inference workers (default: hardware concurrency).
void set_max_threads(int threads);
int max_threads();

// Checkpoints.

inline constexpr char kCheckpointMagic[4] = {'T', 'S', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;    ///< model.num_nodes / steps_per_day filled in
  Scaler scaler;
  std::uint64_t arch_hash = 0;
  std::vector<std::pair<std::string, ad::Matrix>> tensors;
  std::optional<TrainProgress> progress;
};

void save_checkpoint(const TestamModel &model, const TrainConfig &cfg,
                     const TrainProgress *progress,
                     const std::filesystem::path &path);
Checkpoint read_checkpoint(const std::filesystem::path &path);

/// Builds a model from a checkpoint and restores its parameters bit-exactly.
std::unique_ptr<TestamModel> load_checkpoint(const Checkpoint &ckpt);
std::unique_ptr<TestamModel> load_checkpoint(const std::filesystem::path &path);

/// Copies tensors into an existing model; throws naming the first differing
/// config field when the model was built with another architecture.
void load_into(TestamModel &model, const Checkpoint &ckpt);

} // namespace testam
