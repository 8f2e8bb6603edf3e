// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/autodiff.hpp"

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace testam {

/// Row layout of a hidden tensor: row = (b * steps + t) * nodes + n.
struct Layout {
  int batch = 1;
  int steps = 1;
  int nodes = 1;
  int rows() const { return batch * steps * nodes; }
  int row(int b, int t, int n) const { return (b * steps + t) * nodes + n; }
};

/// `count` rows starting at `offset`, `stride` apart.
struct RowRange {
  int offset = 0;
  int stride = 1;
  int count = 0;
  int operator[](int i) const { return offset + i * stride; }
};

/// One independent attention problem: queries attend to keys (values share the
/// key rows) and results land in `out` rows.
struct AttentionGroup {
  RowRange query;
  RowRange key;
  RowRange out;
};

/// Axis along which raw scores are normalized.
enum class Normalize {
  OverKeys,    ///< standard: each query's weights sum to 1
  OverQueries, ///< each key's weights over the queries sum to 1
};

/// Multi-head scaled dot-product attention on pre-projected inputs. Columns
/// are split into `heads` equal slices; each head computes
/// softmax(Q K^T / sqrt(d_k)) V per group. Returns the concatenated heads as
/// [out_rows, d]; rows not covered by any group are zero.
ad::Var grouped_attention(const ad::Var &q, const ad::Var &k, const ad::Var &v,
                          std::span<const AttentionGroup> groups, int heads,
                          int out_rows, Normalize norm);

/// Attention weights for one group and head, [query.count, key.count].
ad::Matrix attention_weights(const ad::Matrix &q, const ad::Matrix &k,
                             const AttentionGroup &group, int heads, int head,
                             Normalize norm);

struct Linear {
  ad::Parameter *weight = nullptr;
  ad::Parameter *bias = nullptr;
  ad::Var operator()(ad::Tape &tape, const ad::Var &x) const;
};

Linear make_linear(ad::ParameterSet &params, const std::string &prefix,
                   int in_dim, int out_dim, std::mt19937_64 &rng);

struct MultiHeadParams {
  Linear query, key, value, output;
  int heads = 1;
};

/// `key_dim` is the input width of the key projection (the hidden size for
/// self-attention, the embedding width for time-enhanced attention).
MultiHeadParams make_multi_head(ad::ParameterSet &params,
                                const std::string &prefix, int hidden,
                                int key_dim, int heads, std::mt19937_64 &rng);

/// Full multi-head attention: project, attend per group, concatenate heads and
/// apply the output projection.
ad::Var multi_head_attention(ad::Tape &tape, const ad::Var &query_in,
                             const ad::Var &key_in, const ad::Var &value_in,
                             std::span<const AttentionGroup> groups,
                             int out_rows, const MultiHeadParams &p,
                             Normalize norm = Normalize::OverKeys);

std::vector<AttentionGroup> temporal_groups(const Layout &l);
std::vector<AttentionGroup> spatial_groups(const Layout &l);
/// Target steps (queries, from [B*T_out] embedding rows) against source steps
/// of the same node (keys, from `src`).
std::vector<AttentionGroup> time_enhanced_groups(const Layout &src, int out_steps);

/// Self-attention over time steps, independently per node.
ad::Var temporal_attention(ad::Tape &tape, const ad::Var &h, const Layout &l,
                           const MultiHeadParams &p);
/// Self-attention over all nodes, independently per time step.
ad::Var spatial_attention(ad::Tape &tape, const ad::Var &h, const Layout &l,
                          const MultiHeadParams &p);

enum class TimeEnhancedMode {
  PerSource, ///< each source distributes weight over the targets
  Cross, ///< each target takes a convex combination of the sources
};

/// Maps hidden states over the source steps to the target steps. Scores pair
/// the source hidden state (query projection) with the target step's temporal
/// embedding (key projection); values come from the source hidden states.
/// `target_tim` is [B*T_out, h]. Returns [B*T_out*N, d].
ad::Var time_enhanced_attention(ad::Tape &tape, const ad::Var &h_src,
                                const ad::Var &target_tim, const Layout &src,
                                int out_steps, const MultiHeadParams &p,
                                TimeEnhancedMode mode);

struct FeedForwardParams {
  Linear inner, outer;
};

FeedForwardParams make_feed_forward(ad::ParameterSet &params,
                                    const std::string &prefix, int hidden,
                                    int ffn_hidden, std::mt19937_64 &rng);

ad::Var feed_forward(ad::Tape &tape, const ad::Var &h, const FeedForwardParams &p);

struct LayerNormParams {
  ad::Parameter *gain = nullptr;
  ad::Parameter *bias = nullptr;
  double eps = 1e-5;
};

LayerNormParams make_layer_norm(ad::ParameterSet &params,
                                const std::string &prefix, int hidden);

/// Spatial sublayer: maps [rows, d] under a layout to the same shape.
using SpatialFn =
    std::function<ad::Var(ad::Tape &, const ad::Var &, const Layout &)>;

struct ExpertLayerParams {
  MultiHeadParams temporal;
  MultiHeadParams time_enhanced; ///< key projection consumes the embedding
  /// Stand-in for time-enhanced attention when that sublayer is ablated.
  MultiHeadParams temporal_substitute;
  bool use_time_enhanced = true;
  FeedForwardParams ffn;
  LayerNormParams norm[4];
};

ExpertLayerParams make_expert_layer(ad::ParameterSet &params,
                                    const std::string &prefix, int hidden,
                                    int tim_dim, int heads, int ffn_hidden,
                                    bool use_time_enhanced,
                                    std::mt19937_64 &rng);

struct ExpertLayerContext {
  Layout src;
  int out_steps = 0;
  ad::Var target_tim; ///< [B*T_out, h]
  SpatialFn spatial;
  TimeEnhancedMode mode = TimeEnhancedMode::PerSource;
  double dropout = 0.0;
  std::mt19937_64 *rng = nullptr; ///< required when dropout > 0
};

/// Temporal attention, spatial modeling, time-enhanced attention and the
/// feed-forward block, each as LayerNorm(x + Sublayer(x)). The time-enhanced
/// residual is dropped when source and target lengths differ.
/// Returns [B*T_out*N, d].
ad::Var expert_layer(ad::Tape &tape, const ad::Var &h,
                     const ExpertLayerParams &p, const ExpertLayerContext &ctx);

} // namespace testam
