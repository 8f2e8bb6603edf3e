// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/autodiff.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace testam {

/// Learnable Time2Vec parameters: component 0 is linear, components 1..h-1
/// pass through a sine.
struct Time2VecParams {
  ad::Parameter *w = nullptr;   ///< [1, h]
  ad::Parameter *phi = nullptr; ///< [1, h]
  int dim() const { return static_cast<int>(w->value.cols()); }
};

Time2VecParams make_time2vec(ad::ParameterSet &params, const std::string &prefix,
                             int dim, std::mt19937_64 &rng);

/// Plain evaluation at one time-of-day index.
std::vector<double> time2vec(int tau, const Time2VecParams &p, int steps_per_day);
/// Same, from an already scaled time value v(tau).
std::vector<double> time2vec_at(double v, std::span<const double> w,
                                std::span<const double> phi);

/// Differentiable evaluation for a sequence of indices; returns [len, h].
ad::Var time2vec(ad::Tape &tape, std::span<const int> tau,
                 const Time2VecParams &p, int steps_per_day);

/// Temporal encoder: Time2Vec, or a plain learned lookup table when the
/// periodic embedding is ablated.
class TemporalEncoder {
public:
  TemporalEncoder() = default;
  static TemporalEncoder time2vec(ad::ParameterSet &params,
                                  const std::string &prefix, int dim,
                                  int steps_per_day, std::mt19937_64 &rng);
  static TemporalEncoder table(ad::ParameterSet &params,
                               const std::string &prefix, int dim,
                               int steps_per_day, std::mt19937_64 &rng);

  ad::Var encode(ad::Tape &tape, std::span<const int> tau) const;
  int dim() const { return dim_; }

private:
  Time2VecParams t2v_;
  ad::Parameter *table_ = nullptr; ///< [steps_per_day, h]
  int steps_per_day_ = 0;
  int dim_ = 0;
};

struct InputProjection {
  ad::Parameter *weight = nullptr; ///< [C + h, d]
  ad::Parameter *bias = nullptr;   ///< [1, d]
};

InputProjection make_input_projection(ad::ParameterSet &params,
                                      const std::string &prefix, int in_dim,
                                      int hidden, std::mt19937_64 &rng);

/// Concatenates each row of `x` ([B*T*N, C], rows ordered by (b, t, n)) with
/// the temporal embedding of its step (`tim` is [B*T, h]) and projects the
/// result to the hidden size. Nodes at one step share the same embedding.
ad::Var embed_inputs(ad::Tape &tape, const ad::Var &x, const ad::Var &tim,
                     int num_nodes, const InputProjection &proj);

} // namespace testam
