// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/attention.hpp"
#include "core/autodiff.hpp"
#include "core/data_model.hpp"
#include "core/graph_memory.hpp"
#include "core/temporal_embedding.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace testam {

enum class ExpertKind { Identity, Adaptive, Attention };

const char *to_string(ExpertKind k);

inline constexpr int kNumExperts = 3;
/// Expert slot whose output is used when gating is disabled.
inline constexpr int kAttentionExpert = 2;

struct AblationConfig {
  bool no_gating = false;
  bool ensemble = false;
  bool worst_only = false;
  bool replaced_identity = false;
  bool no_tim = false;
  bool no_time_enhanced = false;

  void validate() const;
  bool operator==(const AblationConfig &) const = default;
};

/// Which input step feeds the gating memory query.
enum class GatingInput { LastStep, WindowMean };

struct ModelConfig {
  int num_nodes = 0;
  int steps_per_day = 288;
  int in_steps = 12;
  int out_steps = 12;
  int hidden = 32;      ///< d
  int memory_size = 20; ///< m
  int memory_dim = 32;  ///< e, must equal d
  int layers = 3;       ///< l
  int heads = 4;        ///< K
  int ffn_hidden = 128; ///< h_ff
  int tim_dim = 32;     ///< Time2Vec width h
  double dropout = 0.1;
  TimeEnhancedMode time_enhanced_mode = TimeEnhancedMode::PerSource;
  bool share_label_tim = true;
  GatingInput gating_input = GatingInput::LastStep;
  AblationConfig ablation;

  void validate() const;
  bool operator==(const ModelConfig &) const = default;
};

/// Stacked input tensors for B samples. Rows follow Layout ordering.
struct Batch {
  Layout in;                ///< [B, T', N]
  Layout out;               ///< [B, T, N]
  ad::Matrix x;             ///< [B*T'*N, C]
  ad::Matrix y;             ///< [B*T*N, 1], original units, 0 = missing
  std::vector<int> tau_in;  ///< [B*T']
  std::vector<int> tau_out; ///< [B*T]
};

Batch make_batch(std::span<const WindowedSample *const> samples);
Batch make_batch(const std::vector<WindowedSample> &samples, std::size_t begin,
                 std::size_t end);

struct ExpertStack {
  ExpertKind kind = ExpertKind::Identity;
  std::string prefix;
  TemporalEncoder input_tim;
  std::optional<TemporalEncoder> label_tim; ///< set when not shared
  InputProjection input_proj;
  std::vector<ExpertLayerParams> layers;
  std::vector<Linear> identity_spatial;            ///< identity kind
  std::vector<ad::Parameter *> graph_weight;       ///< adaptive kind
  std::vector<MultiHeadParams> attention_spatial;  ///< attention kind
  HyperNetworkParams hyper;                        ///< adaptive kind
  Linear head;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64 *rng = nullptr; ///< dropout source when training
};

/// Result of one forward pass. Row r of every [rows, *] entry is the output
/// position (b, t, n) under `Batch::out`.
struct ForecastBundle {
  std::array<ad::Var, kNumExperts> y_hat_expert; ///< [rows, 1], invalid if skipped
  std::array<ad::Var, kNumExperts> z_expert;     ///< [rows, d]
  ad::Var p;                  ///< [rows, E]; invalid when gating is disabled
  ad::Var memory_weights;     ///< [B*N, m]
  std::vector<int> selected;  ///< [rows]
  ad::Matrix y_hat;           ///< [rows, 1] composite prediction
  ad::Var y_hat_ensemble;     ///< differentiable composite (ensemble only)
  bool gating = true;
};

class TestamModel {
public:
  TestamModel(ModelConfig cfg, Scaler scaler, std::uint64_t seed);
  TestamModel(const TestamModel &) = delete;
  TestamModel &operator=(const TestamModel &) = delete;

  const ModelConfig &config() const { return cfg_; }
  const Scaler &scaler() const { return scaler_; }
  ad::ParameterSet &params() { return params_; }
  const ad::ParameterSet &params() const { return params_; }
  const std::array<ExpertStack, kNumExperts> &experts() const { return experts_; }
  const MetaNodeBank &bank() const { return bank_; }
  const GatingQueryParams &gating_query() const { return gating_query_; }

  std::size_t parameter_count() const { return params_.scalar_count(); }
  /// Scalar count of one expert stack (excluding the shared bank).
  std::size_t expert_parameter_count(int expert) const;

  /// Runs one expert; returns (y_hat [rows,1] original units, z [rows,d]).
  std::pair<ad::Var, ad::Var> expert_forward(ad::Tape &tape, int expert,
                                             const Batch &batch,
                                             const ForwardOptions &opt) const;

  /// Routing probabilities from the experts' last hidden states.
  ad::Var routing_probabilities(ad::Tape &tape,
                                std::span<const ad::Var> z_all,
                                const ad::Var &memory_out,
                                const Batch &batch) const;

  ForecastBundle forward(ad::Tape &tape, const Batch &batch,
                         const ForwardOptions &opt = {}) const;

private:
  ExpertStack build_expert(ExpertKind kind, const std::string &prefix,
                           std::mt19937_64 &rng);
  ad::Var gating_input(ad::Tape &tape, const Batch &batch) const;

  ModelConfig cfg_;
  Scaler scaler_;
  ad::ParameterSet params_;
  MetaNodeBank bank_;
  GatingQueryParams gating_query_;
  std::array<ExpertStack, kNumExperts> experts_;
};

/// Routing probabilities given plain hidden states and memory readouts; used
/// by tests. `z_all[e]` is [rows, d], `memory_out` is [rows, d].
ad::Matrix routing_probabilities(std::span<const ad::Matrix> z_all,
                                 const ad::Matrix &memory_out);

/// Index of the largest entry per row; ties go to the lowest index.
std::vector<int> argmax_rows(const ad::Matrix &p);

} // namespace testam
