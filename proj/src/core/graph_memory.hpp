// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/attention.hpp"
#include "core/autodiff.hpp"

#include <random>
#include <string>

namespace testam {

/// Learnable [m, e] memory shared by the adaptive expert's graph learner and
/// the gating network.
struct MetaNodeBank {
  ad::Parameter *memory = nullptr;
  int size() const { return static_cast<int>(memory->value.rows()); }
  int width() const { return static_cast<int>(memory->value.cols()); }
};

MetaNodeBank make_meta_node_bank(ad::ParameterSet &params,
                                 const std::string &prefix, int size, int width,
                                 std::mt19937_64 &rng);

/// Node embeddings conditioned on the bank: E = softmax_rows(mixing) * M * W_E.
struct HyperNetworkParams {
  ad::Parameter *mixing = nullptr;     ///< [N, m] logits
  ad::Parameter *projection = nullptr; ///< [e, d_node]
};

HyperNetworkParams make_hyper_network(ad::ParameterSet &params,
                                      const std::string &prefix, int num_nodes,
                                      const MetaNodeBank &bank, int node_dim,
                                      std::mt19937_64 &rng);

ad::Var node_embeddings(ad::Tape &tape, const MetaNodeBank &bank,
                        const HyperNetworkParams &hyper);

/// softmax_rows(relu(E E^T)).
ad::Var adaptive_adjacency(const ad::Var &embeddings);
ad::Matrix adaptive_adjacency(const ad::Matrix &embeddings);

/// Applies `adjacency` ([N, N]) to every consecutive block of N rows of `h`.
ad::Var mix_nodes(const ad::Var &adjacency, const ad::Var &h, int nodes);

/// One-hop propagation A * H[t] * W_g at every (batch, step).
ad::Var graph_convolution(ad::Tape &tape, const ad::Var &h,
                          const ad::Var &adjacency, ad::Parameter &weight,
                          const Layout &l);

struct GatingQueryParams {
  ad::Parameter *weight = nullptr; ///< [C, e]
  ad::Parameter *bias = nullptr;   ///< [1, e]
};

GatingQueryParams make_gating_query(ad::ParameterSet &params,
                                    const std::string &prefix, int in_dim,
                                    int width, std::mt19937_64 &rng);

struct MemoryReadout {
  ad::Var output;  ///< [rows, e]
  ad::Var weights; ///< [rows, m], each row sums to 1
};

/// Q = x W_q + b_q; a = softmax(Q M^T); O = a M, for every row of `x`.
MemoryReadout query_memory(ad::Tape &tape, const ad::Var &x,
                           const MetaNodeBank &bank, const GatingQueryParams &q);

} // namespace testam
