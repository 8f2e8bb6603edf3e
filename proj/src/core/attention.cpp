// SPDX-License-Identifier: Apache-2.0
#include "core/attention.hpp"

#include "core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace testam {

using ad::Index;
using ad::Matrix;
using ad::Var;

namespace {

void gather_into(Matrix &out, const Matrix &src, const RowRange &rows, Index col,
                 Index width) {
  out.resize(rows.count, width);
  for (int i = 0; i < rows.count; ++i)
    out.row(i) = src.block(rows[i], col, 1, width);
}

Matrix gather(const Matrix &src, const RowRange &rows, Index col, Index width) {
  Matrix out;
  gather_into(out, src, rows, col, width);
  return out;
}

template <class Src> void scatter_add(Matrix &dst, const RowRange &rows, Index col, const Src &src) {
  for (int i = 0; i < rows.count; ++i)
    dst.block(rows[i], col, 1, src.cols()) += src.row(i);
}

/// Softmax in place along rows (OverKeys) or columns (OverQueries).
template <class M> void normalize_in_place(M &s, Normalize norm) {
  if (norm == Normalize::OverKeys) {
    for (Index r = 0; r < s.rows(); ++r) {
      auto row = s.row(r);
      row.array() = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
  } else {
    for (Index c = 0; c < s.cols(); ++c) {
      auto col = s.col(c);
      col.array() = (col.array() - col.maxCoeff()).exp();
      col /= col.sum();
    }
  }
}

/// Weight blocks start on 64-byte boundaries.
using WeightBuffer = std::vector<double, Eigen::aligned_allocator<double>>;
constexpr std::size_t kBlockAlign = 8;

std::size_t padded(std::size_t n) { return (n + kBlockAlign - 1) / kBlockAlign * kBlockAlign; }

} // namespace

Matrix attention_weights(const Matrix &q, const Matrix &k,
                         const AttentionGroup &group, int heads, int head,
                         Normalize norm) {
  const Index dk = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Matrix qg = gather(q, group.query, head * dk, dk);
  const Matrix kg = gather(k, group.key, head * dk, dk);
  Matrix scores = qg * kg.transpose() * scale;
  normalize_in_place(scores, norm);
  return scores;
}

Var grouped_attention(const Var &q, const Var &k, const Var &v,
                      std::span<const AttentionGroup> groups, int heads,
                      int out_rows, Normalize norm) {
  require(heads >= 1 && q.cols() % heads == 0, "attention: width not divisible by heads");
  require(q.cols() == k.cols() && k.cols() == v.cols(), "attention: width mismatch");
  require(k.rows() == v.rows(), "attention: key/value row mismatch");
  const Index d = q.cols();
  const Index dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  ad::Tape &tape = *q.tape();
  const Matrix &qv = q.value(), &kv = k.value(), &vv = v.value();

  // Attention weights of every (group, head), stored back to back.
  std::size_t total = 0;
  for (const AttentionGroup &g : groups) {
    require(g.query.count == g.out.count, "attention: query/out length mismatch");
    total += padded(static_cast<std::size_t>(g.query.count) * g.key.count) * heads;
  }
  const bool keep = tape.recording();
  auto weights = std::make_shared<WeightBuffer>(keep ? total : 0);
  WeightBuffer scratch;
  if (!keep) {
    std::size_t largest = 0;
    for (const AttentionGroup &g : groups)
      largest = std::max(largest, static_cast<std::size_t>(g.query.count) * g.key.count);
    scratch.resize(largest);
  }

  Matrix out = Matrix::Zero(out_rows, d);
  Matrix qg, kg, vg, og;
  std::size_t at = 0;
  for (const AttentionGroup &g : groups) {
    const Index nq = g.query.count, nk = g.key.count;
    for (int h = 0; h < heads; ++h) {
      gather_into(qg, qv, g.query, h * dk, dk);
      gather_into(kg, kv, g.key, h * dk, dk);
      gather_into(vg, vv, g.key, h * dk, dk);
      Eigen::Map<Matrix> p(keep ? weights->data() + at : scratch.data(), nq, nk);
      p.noalias() = qg.lazyProduct(kg.transpose()) * scale;
      normalize_in_place(p, norm);
      og.noalias() = p.lazyProduct(vg);
      for (Index i = 0; i < nq; ++i)
        out.block(g.out[static_cast<int>(i)], h * dk, 1, dk) = og.row(i);
      if (keep)
        at += padded(static_cast<std::size_t>(nq * nk));
    }
  }
  std::vector<AttentionGroup> saved(groups.begin(), groups.end());
  return tape.record(
      std::move(out), {q, k, v},
      [q, k, v, saved = std::move(saved), weights, heads, dk, scale,
       norm](ad::Tape &t, const Matrix &grad, const Matrix &) {
        const Matrix &qv = q.value(), &kv = k.value(), &vv = v.value();
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dkm = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        Matrix qg, kg, vg, dout, dp, ds, tmp;
        std::size_t at = 0;
        for (const AttentionGroup &g : saved) {
          const Index nq = g.query.count, nk = g.key.count;
          for (int h = 0; h < heads; ++h) {
            const Eigen::Map<const Matrix> p(weights->data() + at, nq, nk);
            at += padded(static_cast<std::size_t>(nq * nk));
            gather_into(qg, qv, g.query, h * dk, dk);
            gather_into(kg, kv, g.key, h * dk, dk);
            gather_into(vg, vv, g.key, h * dk, dk);
            gather_into(dout, grad, g.out, h * dk, dk);
            dp.noalias() = dout.lazyProduct(vg.transpose());
            if (norm == Normalize::OverKeys) {
              const Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
              ds = p.cwiseProduct(dp - dot.replicate(1, dp.cols()));
            } else {
              const Eigen::RowVectorXd dot = dp.cwiseProduct(p).colwise().sum();
              ds = p.cwiseProduct(dp - dot.replicate(dp.rows(), 1));
            }
            ds *= scale;
            tmp.noalias() = ds.lazyProduct(kg);
            scatter_add(dq, g.query, h * dk, tmp);
            tmp.noalias() = ds.transpose().lazyProduct(qg);
            scatter_add(dkm, g.key, h * dk, tmp);
            tmp.noalias() = p.transpose().lazyProduct(dout);
            scatter_add(dv, g.key, h * dk, tmp);
          }
        }
        t.accumulate(q, dq);
        t.accumulate(k, dkm);
        t.accumulate(v, dv);
      });
}

Var Linear::operator()(ad::Tape &tape, const Var &x) const {
  return ad::affine(x, tape.parameter(*weight), tape.parameter(*bias));
}

Linear make_linear(ad::ParameterSet &params, const std::string &prefix,
                   int in_dim, int out_dim, std::mt19937_64 &rng) {
  Linear l;
  l.weight = &params.add(prefix + ".weight", in_dim, out_dim);
  l.bias = &params.add(prefix + ".bias", 1, out_dim);
  ad::xavier_uniform(*l.weight, rng);
  return l;
}

MultiHeadParams make_multi_head(ad::ParameterSet &params,
                                const std::string &prefix, int hidden,
                                int key_dim, int heads, std::mt19937_64 &rng) {
  require(heads >= 1 && hidden % heads == 0,
          "hidden size must be divisible by the number of heads");
  MultiHeadParams p;
  p.query = make_linear(params, prefix + ".query", hidden, hidden, rng);
  p.key = make_linear(params, prefix + ".key", key_dim, hidden, rng);
  p.value = make_linear(params, prefix + ".value", hidden, hidden, rng);
  p.output = make_linear(params, prefix + ".output", hidden, hidden, rng);
  p.heads = heads;
  return p;
}

Var multi_head_attention(ad::Tape &tape, const Var &query_in, const Var &key_in,
                         const Var &value_in,
                         std::span<const AttentionGroup> groups, int out_rows,
                         const MultiHeadParams &p, Normalize norm) {
  const Var q = p.query(tape, query_in);
  const Var k = p.key(tape, key_in);
  const Var v = p.value(tape, value_in);
  return p.output(tape, grouped_attention(q, k, v, groups, p.heads, out_rows, norm));
}

std::vector<AttentionGroup> temporal_groups(const Layout &l) {
  std::vector<AttentionGroup> out;
  out.reserve(static_cast<std::size_t>(l.batch) * l.nodes);
  for (int b = 0; b < l.batch; ++b)
    for (int n = 0; n < l.nodes; ++n) {
      const RowRange r{l.row(b, 0, n), l.nodes, l.steps};
      out.push_back({r, r, r});
    }
  return out;
}

std::vector<AttentionGroup> spatial_groups(const Layout &l) {
  std::vector<AttentionGroup> out;
  out.reserve(static_cast<std::size_t>(l.batch) * l.steps);
  for (int b = 0; b < l.batch; ++b)
    for (int t = 0; t < l.steps; ++t) {
      const RowRange r{l.row(b, t, 0), 1, l.nodes};
      out.push_back({r, r, r});
    }
  return out;
}

std::vector<AttentionGroup> time_enhanced_groups(const Layout &src, int out_steps) {
  const Layout dst{src.batch, out_steps, src.nodes};
  std::vector<AttentionGroup> out;
  out.reserve(static_cast<std::size_t>(src.batch) * src.nodes);
  for (int b = 0; b < src.batch; ++b)
    for (int n = 0; n < src.nodes; ++n)
      out.push_back({RowRange{b * out_steps, 1, out_steps},
                     RowRange{src.row(b, 0, n), src.nodes, src.steps},
                     RowRange{dst.row(b, 0, n), src.nodes, out_steps}});
  return out;
}

Var temporal_attention(ad::Tape &tape, const Var &h, const Layout &l,
                       const MultiHeadParams &p) {
  require(h.rows() == l.rows(), "temporal_attention: layout mismatch");
  const auto groups = temporal_groups(l);
  return multi_head_attention(tape, h, h, h, groups, l.rows(), p);
}

Var spatial_attention(ad::Tape &tape, const Var &h, const Layout &l,
                      const MultiHeadParams &p) {
  require(h.rows() == l.rows(), "spatial_attention: layout mismatch");
  const auto groups = spatial_groups(l);
  return multi_head_attention(tape, h, h, h, groups, l.rows(), p);
}

Var time_enhanced_attention(ad::Tape &tape, const Var &h_src,
                            const Var &target_tim, const Layout &src,
                            int out_steps, const MultiHeadParams &p,
                            TimeEnhancedMode mode) {
  require(h_src.rows() == src.rows(), "time_enhanced_attention: layout mismatch");
  require(target_tim.rows() == src.batch * out_steps,
          "time_enhanced_attention: target embedding rows must be B * T_out");
  const auto groups = time_enhanced_groups(src, out_steps);
  const int out_rows = src.batch * out_steps * src.nodes;
  // Queries here are the target embeddings, so "normalize over targets per
  // source" is normalization over the query axis.
  const Var targets = p.key(tape, target_tim);
  const Var sources = p.query(tape, h_src);
  const Var values = p.value(tape, h_src);
  const Normalize norm = mode == TimeEnhancedMode::PerSource ? Normalize::OverQueries
                                                         : Normalize::OverKeys;
  return p.output(tape, grouped_attention(targets, sources, values, groups,
                                          p.heads, out_rows, norm));
}

FeedForwardParams make_feed_forward(ad::ParameterSet &params,
                                    const std::string &prefix, int hidden,
                                    int ffn_hidden, std::mt19937_64 &rng) {
  require(ffn_hidden > 0, "feed-forward hidden size must be positive");
  return {make_linear(params, prefix + ".inner", hidden, ffn_hidden, rng),
          make_linear(params, prefix + ".outer", ffn_hidden, hidden, rng)};
}

Var feed_forward(ad::Tape &tape, const Var &h, const FeedForwardParams &p) {
  return p.outer(tape, ad::relu(p.inner(tape, h)));
}

LayerNormParams make_layer_norm(ad::ParameterSet &params,
                                const std::string &prefix, int hidden) {
  LayerNormParams p;
  p.gain = &params.add(prefix + ".gain", 1, hidden);
  p.bias = &params.add(prefix + ".bias", 1, hidden);
  p.gain->value.setOnes();
  return p;
}

ExpertLayerParams make_expert_layer(ad::ParameterSet &params,
                                    const std::string &prefix, int hidden,
                                    int tim_dim, int heads, int ffn_hidden,
                                    bool use_time_enhanced,
                                    std::mt19937_64 &rng) {
  ExpertLayerParams p;
  p.temporal = make_multi_head(params, prefix + ".temporal", hidden, hidden,
                               heads, rng);
  p.use_time_enhanced = use_time_enhanced;
  if (use_time_enhanced)
    p.time_enhanced = make_multi_head(params, prefix + ".time_enhanced", hidden,
                                      tim_dim, heads, rng);
  else
    p.temporal_substitute = make_multi_head(params, prefix + ".temporal2",
                                            hidden, hidden, heads, rng);
  p.ffn = make_feed_forward(params, prefix + ".ffn", hidden, ffn_hidden, rng);
  for (int i = 0; i < 4; ++i)
    p.norm[i] = make_layer_norm(params, prefix + ".norm" + std::to_string(i), hidden);
  return p;
}

namespace {

Var add_norm(ad::Tape &tape, const Var &residual, const Var &sub,
             const LayerNormParams &ln, const ExpertLayerContext &ctx) {
  Var s = sub;
  if (ctx.dropout > 0.0) {
    require(ctx.rng != nullptr, "dropout requires an rng");
    s = ad::dropout(s, ctx.dropout, *ctx.rng);
  }
  const Var sum = residual.valid() ? ad::add(residual, s) : s;
  return ad::layer_norm(sum, tape.parameter(*ln.gain), tape.parameter(*ln.bias),
                        ln.eps);
}

} // namespace

Var expert_layer(ad::Tape &tape, const Var &h, const ExpertLayerParams &p,
                 const ExpertLayerContext &ctx) {
  const Layout &src = ctx.src;
  require(h.rows() == src.rows(), "expert_layer: layout mismatch");
  Var x = add_norm(tape, h, temporal_attention(tape, h, src, p.temporal),
                   p.norm[0], ctx);
  x = add_norm(tape, x, ctx.spatial(tape, x, src), p.norm[1], ctx);
  if (p.use_time_enhanced) {
    const Var te = time_enhanced_attention(tape, x, ctx.target_tim, src,
                                           ctx.out_steps, p.time_enhanced, ctx.mode);
    x = add_norm(tape, src.steps == ctx.out_steps ? x : Var{}, te, p.norm[2], ctx);
  } else {
    require(src.steps == ctx.out_steps,
            "temporal attention in place of time-enhanced attention needs "
            "equal input and output lengths");
    x = add_norm(tape, x, temporal_attention(tape, x, src, p.temporal_substitute),
                 p.norm[2], ctx);
  }
  return add_norm(tape, x, feed_forward(tape, x, p.ffn), p.norm[3], ctx);
}

} // namespace testam
