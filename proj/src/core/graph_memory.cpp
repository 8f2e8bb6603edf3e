// SPDX-License-Identifier: Apache-2.0
#include "core/graph_memory.hpp"

#include "core/errors.hpp"

namespace testam {

using ad::Index;
using ad::Matrix;
using ad::Var;

MetaNodeBank make_meta_node_bank(ad::ParameterSet &params,
                                 const std::string &prefix, int size, int width,
                                 std::mt19937_64 &rng) {
  require(size >= 1 && width >= 1, "meta-node bank needs m >= 1 and e >= 1");
  MetaNodeBank bank;
  bank.memory = &params.add(prefix + ".memory", size, width);
  ad::xavier_uniform(*bank.memory, rng);
  return bank;
}

HyperNetworkParams make_hyper_network(ad::ParameterSet &params,
                                      const std::string &prefix, int num_nodes,
                                      const MetaNodeBank &bank, int node_dim,
                                      std::mt19937_64 &rng) {
  HyperNetworkParams h;
  h.mixing = &params.add(prefix + ".mixing", num_nodes, bank.size());
  h.projection = &params.add(prefix + ".projection", bank.width(), node_dim);
  ad::xavier_uniform(*h.mixing, rng);
  ad::xavier_uniform(*h.projection, rng);
  return h;
}

Var node_embeddings(ad::Tape &tape, const MetaNodeBank &bank,
                    const HyperNetworkParams &hyper) {
  const Var mix = ad::softmax_rows(tape.parameter(*hyper.mixing));
  const Var items = ad::matmul(tape.parameter(*bank.memory),
                               tape.parameter(*hyper.projection));
  return ad::matmul(mix, items);
}

Var adaptive_adjacency(const Var &embeddings) {
  return ad::softmax_rows(ad::relu(ad::matmul_nt(embeddings, embeddings)));
}

Matrix adaptive_adjacency(const Matrix &embeddings) {
  return ad::softmax_rows(Matrix((embeddings * embeddings.transpose()).cwiseMax(0.0)));
}

Var mix_nodes(const Var &adjacency, const Var &h, int nodes) {
  require(adjacency.rows() == nodes && adjacency.cols() == nodes,
          "mix_nodes: adjacency must be [N, N]");
  require(h.rows() % nodes == 0, "mix_nodes: rows not a multiple of N");
  ad::Tape &tape = *h.tape();
  const Matrix &a = adjacency.value();
  const Matrix &hv = h.value();
  Matrix out(hv.rows(), hv.cols());
  for (Index r = 0; r < hv.rows(); r += nodes)
    out.middleRows(r, nodes).noalias() = a * hv.middleRows(r, nodes);
  return tape.record(std::move(out), {adjacency, h},
                     [adjacency, h, nodes](ad::Tape &t, const Matrix &g,
                                           const Matrix &) {
                       const Matrix &a = adjacency.value();
                       const Matrix &hv = h.value();
                       if (t.requires_grad(adjacency)) {
                         Matrix da = Matrix::Zero(nodes, nodes);
                         for (Index r = 0; r < g.rows(); r += nodes)
                           da.noalias() += g.middleRows(r, nodes) *
                                           hv.middleRows(r, nodes).transpose();
                         t.accumulate(adjacency, da);
                       }
                       if (t.requires_grad(h)) {
                         Matrix dh(g.rows(), g.cols());
                         for (Index r = 0; r < g.rows(); r += nodes)
                           dh.middleRows(r, nodes).noalias() =
                               a.transpose() * g.middleRows(r, nodes);
                         t.accumulate(h, dh);
                       }
                     });
}

Var graph_convolution(ad::Tape &tape, const Var &h, const Var &adjacency,
                      ad::Parameter &weight, const Layout &l) {
  require(h.rows() == l.rows(), "graph_convolution: layout mismatch");
  return ad::matmul(mix_nodes(adjacency, h, l.nodes), tape.parameter(weight));
}

GatingQueryParams make_gating_query(ad::ParameterSet &params,
                                    const std::string &prefix, int in_dim,
                                    int width, std::mt19937_64 &rng) {
  GatingQueryParams q;
  q.weight = &params.add(prefix + ".weight", in_dim, width);
  q.bias = &params.add(prefix + ".bias", 1, width);
  ad::xavier_uniform(*q.weight, rng);
  return q;
}

MemoryReadout query_memory(ad::Tape &tape, const Var &x, const MetaNodeBank &bank,
                           const GatingQueryParams &q) {
  const Var memory = tape.parameter(*bank.memory);
  const Var query =
      ad::affine(x, tape.parameter(*q.weight), tape.parameter(*q.bias));
  MemoryReadout r;
  r.weights = ad::softmax_rows(ad::matmul_nt(query, memory));
  r.output = ad::matmul(r.weights, memory);
  return r;
}

} // namespace testam
