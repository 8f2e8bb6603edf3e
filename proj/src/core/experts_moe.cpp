// SPDX-License-Identifier: Apache-2.0
#include "core/experts_moe.hpp"

#include "core/errors.hpp"

#include <cmath>

namespace testam {

using ad::Index;
using ad::Matrix;
using ad::Var;

const char *to_string(ExpertKind k) {
  switch (k) {
  case ExpertKind::Identity:
    return "identity";
  case ExpertKind::Adaptive:
    return "adaptive";
  case ExpertKind::Attention:
    return "attention";
  }
  return "unknown";
}

void AblationConfig::validate() const {
  require(!(no_gating && ensemble),
          "ablation: no_gating and ensemble are mutually exclusive",
          ErrorKind::Config);
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const char *what) {
    require(ok, what, ErrorKind::Config);
  };
  check(num_nodes >= 1, "model.num_nodes must be >= 1");
  check(steps_per_day >= 1, "model.steps_per_day must be >= 1");
  check(in_steps >= 1, "model.in_steps must be >= 1");
  check(out_steps >= 1, "model.out_steps must be >= 1");
  check(hidden >= 1, "model.hidden must be >= 1");
  check(memory_size >= 1, "model.memory_size must be >= 1");
  check(memory_dim == hidden, "model.memory_dim must equal model.hidden");
  check(layers >= 1, "model.layers must be >= 1");
  check(heads >= 1 && hidden % heads == 0,
        "model.hidden must be divisible by model.heads");
  check(ffn_hidden >= 1, "model.ffn_hidden must be >= 1");
  check(tim_dim >= 2, "model.tim_dim must be >= 2");
  check(dropout >= 0.0 && dropout < 1.0, "model.dropout must be in [0, 1)");
  ablation.validate();
  check(!ablation.no_time_enhanced || in_steps == out_steps,
        "ablation.no_time_enhanced requires model.in_steps == model.out_steps");
}

Batch make_batch(std::span<const WindowedSample *const> samples) {
  require(!samples.empty(), "make_batch: empty batch");
  const WindowedSample &first = *samples.front();
  const int b = static_cast<int>(samples.size());
  const int tin = first.in_steps, tout = first.out_steps, n = first.num_nodes;
  Batch batch;
  batch.in = {b, tin, n};
  batch.out = {b, tout, n};
  batch.x.resize(batch.in.rows(), kInputChannels);
  batch.y.resize(batch.out.rows(), 1);
  batch.tau_in.reserve(static_cast<std::size_t>(b) * tin);
  batch.tau_out.reserve(static_cast<std::size_t>(b) * tout);
  for (int i = 0; i < b; ++i) {
    const WindowedSample &s = *samples[i];
    require(s.in_steps == tin && s.out_steps == tout && s.num_nodes == n,
            "make_batch: samples differ in shape");
    for (int t = 0; t < tin; ++t)
      for (int k = 0; k < n; ++k)
        for (int c = 0; c < kInputChannels; ++c)
          batch.x(batch.in.row(i, t, k), c) = s.x_at(t, k, c);
    for (int t = 0; t < tout; ++t)
      for (int k = 0; k < n; ++k)
        batch.y(batch.out.row(i, t, k), 0) = s.y_at(t, k);
    batch.tau_in.insert(batch.tau_in.end(), s.tau_in.begin(), s.tau_in.end());
    batch.tau_out.insert(batch.tau_out.end(), s.tau_out.begin(), s.tau_out.end());
  }
  return batch;
}

Batch make_batch(const std::vector<WindowedSample> &samples, std::size_t begin,
                 std::size_t end) {
  require(begin < end && end <= samples.size(), "make_batch: bad range");
  std::vector<const WindowedSample *> ptrs;
  ptrs.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i)
    ptrs.push_back(&samples[i]);
  return make_batch(ptrs);
}

TestamModel::TestamModel(ModelConfig cfg, Scaler scaler, std::uint64_t seed)
    : cfg_(std::move(cfg)), scaler_(scaler) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  bank_ = make_meta_node_bank(params_, "memory", cfg_.memory_size,
                              cfg_.memory_dim, rng);
  gating_query_ = make_gating_query(params_, "gating.query", kInputChannels,
                                    cfg_.memory_dim, rng);
  const ExpertKind first = cfg_.ablation.replaced_identity ? ExpertKind::Adaptive
                                                           : ExpertKind::Identity;
  const ExpertKind kinds[kNumExperts] = {first, ExpertKind::Adaptive,
                                         ExpertKind::Attention};
  for (int e = 0; e < kNumExperts; ++e)
    experts_[e] = build_expert(kinds[e], "expert" + std::to_string(e), rng);
}

ExpertStack TestamModel::build_expert(ExpertKind kind, const std::string &prefix,
                                      std::mt19937_64 &rng) {
  ExpertStack s;
  s.kind = kind;
  s.prefix = prefix;
  const int d = cfg_.hidden;
  auto encoder = [&](const std::string &name) {
    return cfg_.ablation.no_tim
               ? TemporalEncoder::table(params_, prefix + name, cfg_.tim_dim,
                                        cfg_.steps_per_day, rng)
               : TemporalEncoder::time2vec(params_, prefix + name, cfg_.tim_dim,
                                           cfg_.steps_per_day, rng);
  };
  s.input_tim = encoder(".tim");
  if (!cfg_.share_label_tim)
    s.label_tim = encoder(".label_tim");
  s.input_proj = make_input_projection(params_, prefix + ".input",
                                       kInputChannels + cfg_.tim_dim, d, rng);
  if (kind == ExpertKind::Adaptive)
    s.hyper = make_hyper_network(params_, prefix + ".hyper", cfg_.num_nodes,
                                 bank_, cfg_.memory_dim, rng);
  for (int i = 0; i < cfg_.layers; ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    s.layers.push_back(make_expert_layer(params_, lp, d, cfg_.tim_dim, cfg_.heads,
                                         cfg_.ffn_hidden,
                                         !cfg_.ablation.no_time_enhanced, rng));
    switch (kind) {
    case ExpertKind::Identity:
      s.identity_spatial.push_back(make_linear(params_, lp + ".spatial", d, d, rng));
      break;
    case ExpertKind::Adaptive: {
      ad::Parameter &w = params_.add(lp + ".spatial.weight", d, d);
      ad::xavier_uniform(w, rng);
      s.graph_weight.push_back(&w);
      break;
    }
    case ExpertKind::Attention:
      s.attention_spatial.push_back(
          make_multi_head(params_, lp + ".spatial", d, d, cfg_.heads, rng));
      break;
    }
  }
  s.head = make_linear(params_, prefix + ".head", d, 1, rng);
  return s;
}

std::size_t TestamModel::expert_parameter_count(int expert) const {
  require(expert >= 0 && expert < kNumExperts, "expert index out of range");
  return params_.scalar_count(experts_[expert].prefix + ".");
}

std::pair<Var, Var> TestamModel::expert_forward(ad::Tape &tape, int expert,
                                                const Batch &batch,
                                                const ForwardOptions &opt) const {
  require(expert >= 0 && expert < kNumExperts, "expert index out of range");
  require(batch.in.nodes == cfg_.num_nodes,
          "batch has " + std::to_string(batch.in.nodes) +
              " nodes but the model expects " + std::to_string(cfg_.num_nodes));
  require(batch.in.steps == cfg_.in_steps && batch.out.steps == cfg_.out_steps,
          "batch window lengths do not match the model");
  const ExpertStack &s = experts_[expert];
  const Var tim_in = s.input_tim.encode(tape, batch.tau_in);
  const Var tim_out = (s.label_tim ? *s.label_tim : s.input_tim).encode(tape, batch.tau_out);
  Var h = embed_inputs(tape, tape.constant(batch.x), tim_in, cfg_.num_nodes,
                       s.input_proj);

  Var adjacency;
  if (s.kind == ExpertKind::Adaptive)
    adjacency = adaptive_adjacency(node_embeddings(tape, bank_, s.hyper));

  const double dropout = opt.training ? cfg_.dropout : 0.0;
  if (dropout > 0.0)
    require(opt.rng != nullptr, "training forward needs an rng");

  Layout layout = batch.in;
  for (int i = 0; i < cfg_.layers; ++i) {
    SpatialFn spatial;
    switch (s.kind) {
    case ExpertKind::Identity:
      spatial = [&lin = s.identity_spatial[i]](ad::Tape &t, const Var &x,
                                               const Layout &) { return lin(t, x); };
      break;
    case ExpertKind::Adaptive:
      spatial = [&adjacency, w = s.graph_weight[i]](ad::Tape &t, const Var &x,
                                                    const Layout &l) {
        return graph_convolution(t, x, adjacency, *w, l);
      };
      break;
    case ExpertKind::Attention:
      spatial = [&mh = s.attention_spatial[i]](ad::Tape &t, const Var &x,
                                               const Layout &l) {
        return spatial_attention(t, x, l, mh);
      };
      break;
    }
    ExpertLayerContext ctx{layout,  cfg_.out_steps, tim_out, std::move(spatial),
                           cfg_.time_enhanced_mode, dropout, opt.rng};
    h = expert_layer(tape, h, s.layers[i], ctx);
    layout = batch.out;
  }
  const Var y = ad::affine_scalar(s.head(tape, h), scaler_.std, scaler_.mean);
  return {y, h};
}

Var TestamModel::gating_input(ad::Tape &tape, const Batch &batch) const {
  const Layout &l = batch.in;
  Matrix x(static_cast<Index>(l.batch) * l.nodes, kInputChannels);
  for (int b = 0; b < l.batch; ++b)
    for (int n = 0; n < l.nodes; ++n) {
      const Index r = static_cast<Index>(b) * l.nodes + n;
      if (cfg_.gating_input == GatingInput::LastStep) {
        x.row(r) = batch.x.row(l.row(b, l.steps - 1, n));
      } else {
        x.row(r).setZero();
        for (int t = 0; t < l.steps; ++t)
          x.row(r) += batch.x.row(l.row(b, t, n));
        x.row(r) /= l.steps;
      }
    }
  return tape.constant(std::move(x));
}

Var TestamModel::routing_probabilities(ad::Tape &, std::span<const Var> z_all,
                                       const Var &memory_out,
                                       const Batch &batch) const {
  const Layout &l = batch.out;
  std::vector<int> node_row(static_cast<std::size_t>(l.rows()));
  for (int b = 0; b < l.batch; ++b)
    for (int t = 0; t < l.steps; ++t)
      for (int n = 0; n < l.nodes; ++n)
        node_row[l.row(b, t, n)] = b * l.nodes + n;
  const Var o = ad::gather_rows(memory_out, node_row);
  const double inv = 1.0 / std::sqrt(static_cast<double>(o.cols()));
  std::vector<Var> logits;
  logits.reserve(z_all.size());
  for (const Var &z : z_all)
    logits.push_back(ad::scale(ad::row_sum(ad::mul(z, o)), inv));
  return ad::softmax_rows(ad::concat_cols(logits));
}

ForecastBundle TestamModel::forward(ad::Tape &tape, const Batch &batch,
                                    const ForwardOptions &opt) const {
  ForecastBundle out;
  const Index rows = batch.out.rows();
  if (cfg_.ablation.no_gating) {
    out.gating = false;
    auto [y, z] = expert_forward(tape, kAttentionExpert, batch, opt);
    out.y_hat_expert[kAttentionExpert] = y;
    out.z_expert[kAttentionExpert] = z;
    out.selected.assign(static_cast<std::size_t>(rows), kAttentionExpert);
    out.y_hat = y.value();
    return out;
  }
  for (int e = 0; e < kNumExperts; ++e) {
    auto [y, z] = expert_forward(tape, e, batch, opt);
    out.y_hat_expert[e] = y;
    out.z_expert[e] = z;
  }
  const MemoryReadout mem =
      query_memory(tape, gating_input(tape, batch), bank_, gating_query_);
  out.memory_weights = mem.weights;
  out.p = routing_probabilities(tape, out.z_expert, mem.output, batch);
  out.selected = argmax_rows(out.p.value());

  if (cfg_.ablation.ensemble) {
    Var acc;
    for (int e = 0; e < kNumExperts; ++e) {
      const Var term = ad::mul(ad::slice_cols(out.p, e, 1), out.y_hat_expert[e]);
      acc = acc.valid() ? ad::add(acc, term) : term;
    }
    out.y_hat_ensemble = acc;
    out.y_hat = acc.value();
    return out;
  }
  out.y_hat.resize(rows, 1);
  for (Index r = 0; r < rows; ++r)
    out.y_hat(r, 0) = out.y_hat_expert[out.selected[r]].value()(r, 0);
  return out;
}

Matrix routing_probabilities(std::span<const Matrix> z_all,
                             const Matrix &memory_out) {
  const Index rows = memory_out.rows();
  const double inv = 1.0 / std::sqrt(static_cast<double>(memory_out.cols()));
  Matrix logits(rows, static_cast<Index>(z_all.size()));
  for (std::size_t e = 0; e < z_all.size(); ++e)
    logits.col(static_cast<Index>(e)) =
        z_all[e].cwiseProduct(memory_out).rowwise().sum() * inv;
  return ad::softmax_rows(logits);
}

std::vector<int> argmax_rows(const Matrix &p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Index r = 0; r < p.rows(); ++r) {
    int best = 0;
    for (Index c = 1; c < p.cols(); ++c)
      if (p(r, c) > p(r, best))
        best = static_cast<int>(c);
    out[r] = best;
  }
  return out;
}

} // namespace testam
