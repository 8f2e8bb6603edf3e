// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Usage: testam_acceptance <criterion 1-9>
// Prints "PASS criterion N" or "FAIL criterion N" followed by the evidence.
#include "core/data_io.hpp"
#include "core/errors.hpp"
#include "core/evaluation.hpp"
#include "core/graph_memory.hpp"
#include "core/losses.hpp"
#include "core/training.hpp"
#include "gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace testam;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using test::random_matrix;

struct Result {
  bool pass = true;
  std::ostringstream log;

  void check(bool ok, const std::string &what) {
    log << "  [" << (ok ? "ok" : "FAILED") << "] " << what << '\n';
    pass = pass && ok;
  }
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double row_sum_error(const Matrix &m) {
  if (m.rows() == 0)
    return 0.0;
  return (m.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

double col_sum_error(const Matrix &m) { return row_sum_error(m.transpose()); }

// ---------------------------------------------------------------------------
// Small model shared by the invariant and gradient checks.

ModelConfig small_model(int nodes, int steps) {
  ModelConfig m;
  m.num_nodes = nodes;
  m.steps_per_day = 24;
  m.in_steps = steps;
  m.out_steps = steps;
  m.hidden = 4;
  m.memory_dim = 4;
  m.memory_size = 3;
  m.layers = 1;
  m.heads = 2;
  m.ffn_hidden = 8;
  m.tim_dim = 4;
  m.dropout = 0.0;
  return m;
}

std::vector<WindowedSample> small_windows(int nodes, int steps, int count) {
  GraphSignalSeries s;
  s.interval_minutes = 60;
  for (int n = 0; n < nodes; ++n)
    s.node_ids.push_back("n" + std::to_string(n));
  const int total = 2 * steps + count - 1;
  for (int t = 0; t < total; ++t) {
    s.timestamps.push_back(1704067200 + static_cast<std::int64_t>(t) * 3600);
    for (int n = 0; n < nodes; ++n)
      s.values.push_back(static_cast<float>(40.0 + 8.0 * std::sin(0.5 * t + n) + n));
  }
  return make_windows(s, steps, steps, fit_scaler(s, true));
}

// ---------------------------------------------------------------------------

Result criterion1() {
  Result r;
  Stopwatch clock;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  auto track = [&](double err, const std::string &what) {
    worst = std::max(worst, err);
    r.check(err <= 1e-6, what + " row-stochastic, max error " + fmt("%.2e", err));
  };

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix e = random_matrix(7, 3, rng, 2.0);
    const Matrix a = adaptive_adjacency(e);
    if (trial == 0 || row_sum_error(a) > 1e-6 || a.minCoeff() < 0.0)
      track(row_sum_error(a) + std::max(0.0, -a.minCoeff()), "adaptive adjacency");
  }

  const Layout l{2, 3, 4};
  const Matrix q = random_matrix(l.rows(), 8, rng, 1.5);
  const Matrix k = random_matrix(l.rows(), 8, rng, 1.5);
  const int out_steps = 5;
  const Matrix q_tgt = random_matrix(static_cast<ad::Index>(l.batch) * out_steps, 8, rng, 1.5);
  struct Mode {
    const char *name;
    std::vector<AttentionGroup> groups;
    const Matrix *query;
  };
  const Mode modes[] = {{"temporal attention", temporal_groups(l), &q},
                        {"spatial attention", spatial_groups(l), &q},
                        {"time-enhanced attention", time_enhanced_groups(l, out_steps), &q_tgt}};
  for (const Mode &m : modes) {
    double over_keys = 0.0, over_queries = 0.0;
    for (const AttentionGroup &g : m.groups)
      for (int h = 0; h < 2; ++h) {
        over_keys = std::max(over_keys, row_sum_error(attention_weights(
                                            *m.query, k, g, 2, h, Normalize::OverKeys)));
        over_queries = std::max(over_queries, col_sum_error(attention_weights(
                                                  *m.query, k, g, 2, h, Normalize::OverQueries)));
      }
    track(over_keys, std::string(m.name) + " (keys)");
    track(over_queries, std::string(m.name) + " (queries)");
  }

  {
    ad::ParameterSet ps;
    const MetaNodeBank bank = make_meta_node_bank(ps, "memory", 6, 5, rng);
    bank.memory->value = random_matrix(6, 5, rng, 2.0);
    const GatingQueryParams gq = make_gating_query(ps, "gating", 3, 5, rng);
    Tape t(false);
    const MemoryReadout m = query_memory(t, t.constant(random_matrix(40, 3, rng, 3.0)), bank, gq);
    track(row_sum_error(m.weights.value()), "memory query weights");
  }

  {
    std::vector<Matrix> z;
    for (int e = 0; e < kNumExperts; ++e)
      z.push_back(random_matrix(30, 6, rng, 3.0));
    track(row_sum_error(routing_probabilities(z, random_matrix(30, 6, rng, 3.0))),
          "routing probabilities");
  }

  // Labels and probabilities from real forward passes.
  const auto windows = small_windows(5, 4, 12);
  const Batch batch = make_batch(windows, 0, windows.size());
  bool exact = true;
  double p_err = 0.0, mem_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TestamModel model(small_model(5, 4), Scaler{40.0, 8.0}, seed);
    Tape t(false);
    const ForecastBundle b = model.forward(t, batch);
    p_err = std::max(p_err, row_sum_error(b.p.value()));
    mem_err = std::max(mem_err, row_sum_error(b.memory_weights.value()));
    for (double q : {0.5, 0.7, 0.9}) {
      const LossResult loss = total_loss(b, batch, q, LossWeights{});
      for (const Matrix *labels : {&loss.labels.worst, &loss.labels.best})
        for (ad::Index i = 0; i < labels->rows(); ++i) {
          double sum = 0.0;
          for (ad::Index c = 0; c < labels->cols(); ++c) {
            const double v = (*labels)(i, c);
            exact = exact && (v == 0.0 || v == 1.0 / (kNumExperts - 1) || v == 1.0);
            sum += v;
          }
          exact = exact && sum == 1.0;
        }
    }
  }
  track(p_err, "model routing probabilities");
  track(mem_err, "model memory weights");

  for (int trial = 0; trial < 200; ++trial) {
    const Matrix errors = random_matrix(15, 1, rng).cwiseAbs();
    Matrix y = random_matrix(15, 1, rng).cwiseAbs();
    y(trial % 15, 0) = 0.0;
    std::vector<int> sel(15);
    for (int &s : sel)
      s = static_cast<int>(rng() % kNumExperts);
    const double q = 0.05 + 0.9 * (trial % 19) / 18.0;
    const Matrix w = worst_route_labels(errors, y, sel, kNumExperts, q);
    Matrix p = random_matrix(15, kNumExperts, rng).cwiseAbs();
    const Matrix b = best_route_labels(errors, Matrix::Ones(15, 1), p, q);
    for (const Matrix *labels : {&w, &b})
      for (ad::Index i = 0; i < labels->rows(); ++i) {
        double sum = 0.0;
        for (ad::Index c = 0; c < labels->cols(); ++c) {
          const double v = (*labels)(i, c);
          exact = exact && (v == 0.0 || v == 0.5 || v == 1.0);
          sum += v;
        }
        exact = exact && sum == 1.0;
      }
  }
  r.check(exact, "pseudo labels are exact distributions with values in {0, 1/(E-1), 1}");

  const double secs = clock.seconds();
  r.check(secs < 60.0, "runtime " + fmt("%.2f", secs) + " s < 60 s");
  r.log << "  worst stochasticity error " << fmt("%.3e", worst) << '\n';
  return r;
}

// ---------------------------------------------------------------------------

void report_grad(Result &r, const std::string &what, const test::GradCheck &g) {
  r.check(g.ok(), what + (g.ok() ? "" : " (" + g.where + ")") + ", worst excess " +
                      fmt("%.2e", g.worst_excess));
}

Result criterion2() {
  Result r;
  Stopwatch clock;
  std::mt19937_64 rng(202);
  const double rel = 1e-3;

  {
    ad::ParameterSet ps;
    const Time2VecParams p = make_time2vec(ps, "t2v", 4, rng);
    const std::vector<int> tau = {0, 5, 11, 23};
    const Matrix w = random_matrix(4, 4, rng);
    report_grad(r, "time2vec", test::check_gradients(ps, [&](Tape &t) {
                  return ad::sum_all(ad::mul(time2vec(t, tau, p, 24), t.constant(w)));
                }, rel));
  }

  {
    ad::ParameterSet ps;
    ad::Parameter &e = ps.add("embeddings", 3, 2);
    e.value = random_matrix(3, 2, rng);
    const Matrix w = random_matrix(3, 3, rng);
    report_grad(r, "adaptive_adjacency", test::check_gradients(ps, [&](Tape &t) {
                  return ad::sum_all(ad::mul(adaptive_adjacency(t.parameter(e)), t.constant(w)));
                }, rel));
  }

  {
    ad::ParameterSet ps;
    ad::Parameter &logits = ps.add("logits", 6, kNumExperts);
    logits.value = random_matrix(6, kNumExperts, rng);
    std::vector<int> sel = {0, 1, 2, 2, 1, 0};
    Matrix labels(6, kNumExperts);
    for (ad::Index i = 0; i < 6; ++i)
      fill_label(labels, i, sel[static_cast<std::size_t>(i)], i % 2 == 0);
    Matrix weight = Matrix::Ones(6, 1);
    weight(3, 0) = 0.0;
    report_grad(r, "routing_ce", test::check_gradients(ps, [&](Tape &t) {
                  return routing_ce(ad::softmax_rows(t.parameter(logits)), labels, weight);
                }, rel));
  }

  // Each expert is one expert_layer stack with its own spatial sublayer.
  const int T = 3, N = 3;
  const auto windows = small_windows(N, T, 2);
  const Batch batch = make_batch(windows, 0, windows.size());
  TestamModel model(small_model(N, T), Scaler{40.0, 8.0}, 5);
  const Matrix w = random_matrix(batch.out.rows(), 1, rng);
  for (int e = 0; e < kNumExperts; ++e) {
    const std::string name =
        std::string("expert_layer (") + to_string(model.experts()[e].kind) + " spatial)";
    report_grad(r, name, test::check_gradients(model.params(), [&](Tape &t) {
                  const auto [y, z] = model.expert_forward(t, e, batch, ForwardOptions{});
                  return ad::sum_all(ad::mul(y, t.constant(w)));
                }, rel));
  }

  const double secs = clock.seconds();
  r.check(secs < 120.0, "runtime " + fmt("%.2f", secs) + " s < 120 s");
  return r;
}

// ---------------------------------------------------------------------------

Result criterion3() {
  Result r;
  const ScheduleConfig c;
  r.check(lr_at_step(0, c) == c.lr_min, "lr(0) = lr_min = " + fmt("%.1e", lr_at_step(0, c)));
  r.check(cosine_lr(0, c) == c.lr_max, "cosine T_cur=0 gives lr_max");
  r.check(lr_at_step(c.warmup_steps, c) == c.lr_max, "first cosine step gives lr_max");
  r.check(std::abs(cosine_lr(c.restart_period, c) - c.lr_min) <= 1e-18,
          "cosine T_cur=T_freq gives lr_min, got " + fmt("%.6e", cosine_lr(c.restart_period, c)));
  const double half = c.lr_min + 0.5 * (c.lr_max - c.lr_min);
  r.check(std::abs(cosine_lr(c.restart_period / 2, c) - half) <= 1e-15,
          "cosine midpoint is the mean of lr_min and lr_max");
  r.check(lr_at_step(c.warmup_steps + c.restart_period, c) == c.lr_max,
          "restart returns to lr_max");
  double gap = 0.0;
  for (const ScheduleConfig &s :
       {c, ScheduleConfig{1e-4, 2e-2, 37, 53}, ScheduleConfig{0.01, 0.5, 10, 7}})
    gap = std::max(gap, std::abs(warmup_lr(s.warmup_steps, s) - cosine_lr(0, s)));
  r.check(gap <= 1e-12, "continuity at the warmup boundary, gap " + fmt("%.1e", gap));
  bool bounded = true;
  for (long s = 0; s < 20000; ++s) {
    const double lr = lr_at_step(s, c);
    bounded = bounded && lr >= c.lr_min && lr <= c.lr_max;
  }
  r.check(bounded, "lr stays within [lr_min, lr_max] over 20000 steps");
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark shared by the training criteria.

struct Bench {
  SyntheticData data;
  PreparedData prepared;
  TrainConfig cfg;
};

Bench make_bench(const SyntheticConfig &s, const TrainConfig &base) {
  Bench b;
  b.data = generate_synthetic(s);
  b.cfg = base;
  b.cfg.model.num_nodes = s.n_nodes;
  b.cfg.model.steps_per_day = s.steps_per_day;
  b.prepared = prepare_dataset(b.data.series, b.cfg.model.in_steps, b.cfg.model.out_steps,
                               b.cfg.split, b.cfg.mask_zero);
  return b;
}

/// Model and optimizer settings used for every CPU training check.
TrainConfig bench_train_config() {
  TrainConfig c;
  c.model.in_steps = 12;
  c.model.out_steps = 12;
  c.model.hidden = 16;
  c.model.memory_dim = 16;
  c.model.memory_size = 10;
  c.model.layers = 2;
  c.model.heads = 4;
  c.model.ffn_hidden = 32;
  c.model.tim_dim = 16;
  c.model.dropout = 0.0;
  c.schedule = {1e-5, 3e-3, 100, 100000};
  c.batch_size = 16;
  c.patience = 1000;
  return c;
}

/// Stretches the cosine cycle over the whole run so the rate decays once.
void anneal_over_run(Bench &b) {
  const long per_epoch =
      static_cast<long>((b.prepared.split.train.size() + b.cfg.batch_size - 1) / b.cfg.batch_size);
  b.cfg.schedule.restart_period = per_epoch * b.cfg.epochs;
}

Result criterion4() {
  Result r;
  SyntheticConfig s;
  s.n_days = 3;
  TrainConfig base = bench_train_config();
  base.model.ablation.no_gating = true;
  Bench b = make_bench(s, base);
  const TrainConfig &cfg = b.cfg;
  TestamModel model(cfg.model, b.prepared.scaler, 11);
  r.check(!model.experts().empty() && model.params().find("memory.memory") != nullptr,
          "meta-node bank is present");
  ad::Parameter &memory = model.params().at("memory.memory");
  const Matrix before = memory.value;

  // One full epoch of the training step, inspecting the bank gradient each time.
  Adam adam(model.params(), cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  const auto &train = b.prepared.split.train;
  const LossWeights weights = cfg.effective_loss();
  long steps = 0;
  double max_abs = 0.0;
  bool others_moved = false;
  for (std::size_t begin = 0; begin < train.size(); begin += cfg.batch_size) {
    const Batch batch =
        make_batch(train, begin, std::min(train.size(), begin + static_cast<std::size_t>(cfg.batch_size)));
    model.params().zero_grad();
    Tape tape;
    ForwardOptions opt;
    opt.training = true;
    opt.rng = &rng;
    const ForecastBundle bundle = model.forward(tape, batch, opt);
    const LossResult loss = total_loss(bundle, batch, cfg.q, weights);
    tape.backward(loss.total);
    if (memory.grad.size() != 0)
      max_abs = std::max(max_abs, memory.grad.cwiseAbs().maxCoeff());
    for (const ad::Parameter &p : model.params())
      if (&p != &memory && p.grad.size() != 0 && p.grad.cwiseAbs().maxCoeff() > 0.0)
        others_moved = true;
    clip_grad_norm(model.params(), cfg.grad_clip);
    adam.step(lr_at_step(adam.state().step, cfg.schedule));
    ++steps;
  }
  r.check(max_abs == 0.0, "bank gradient over " + std::to_string(steps) +
                              " steps: max |grad| = " + fmt("%.1e", max_abs));
  r.check(others_moved, "other parameters receive gradients");
  r.check(memory.value == before, "bank values unchanged after the epoch");

  // The full model does train the bank.
  TrainConfig full_cfg = cfg;
  full_cfg.model.ablation.no_gating = false;
  TestamModel full(full_cfg.model, b.prepared.scaler, 11);
  const Batch batch = make_batch(train, 0, static_cast<std::size_t>(cfg.batch_size));
  Tape tape;
  tape.backward(total_loss(full.forward(tape, batch), batch, cfg.q, full_cfg.effective_loss()).total);
  const ad::Parameter &m2 = full.params().at("memory.memory");
  r.check(m2.grad.size() != 0 && m2.grad.cwiseAbs().maxCoeff() > 0.0,
          "with gating the bank gradient is non-zero");
  return r;
}

// ---------------------------------------------------------------------------

double constant_mean_mae(const std::vector<WindowedSample> &samples) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const WindowedSample &s : samples)
    for (float v : s.y)
      if (v != 0.0f) {
        sum += v;
        ++n;
      }
  const double mean = sum / static_cast<double>(n);
  double err = 0.0;
  for (const WindowedSample &s : samples)
    for (float v : s.y)
      if (v != 0.0f)
        err += std::abs(v - mean);
  return err / static_cast<double>(n);
}

constexpr int kOverfitEpochs = 50;

SyntheticConfig overfit_data() {
  SyntheticConfig s;
  s.n_nodes = 8;
  s.n_days = 7;
  s.steps_per_day = 96;
  s.noise_std = 0.5;
  return s;
}

Result criterion5() {
  Result r;
  Stopwatch clock;
  TrainConfig base = bench_train_config();
  base.model.hidden = 32;
  base.model.memory_dim = 32;
  base.model.memory_size = 20;
  base.model.layers = 3;
  base.model.ffn_hidden = 128;
  base.model.tim_dim = 32;
  base.epochs = kOverfitEpochs;
  base.seed = 5;
  Bench b = make_bench(overfit_data(), base);
  anneal_over_run(b);
  const auto &train_set = b.prepared.split.train;
  const double baseline = constant_mean_mae(train_set);
  r.log << "  constant-mean baseline train MAE " << fmt("%.4f", baseline) << '\n';

  TestamModel model(b.cfg.model, b.prepared.scaler, b.cfg.seed);
  TrainHooks hooks;
  int reached = -1;
  double best_eval = 1e300;
  hooks.on_epoch = [&](const TrainingHistory &h, const TrainProgress &) {
    const EpochRecord &e = h.epochs.back();
    std::fprintf(stderr, "epoch %d train_mae %.4f val_mae %.4f %.1fs\n", e.epoch, e.train_mae,
                 e.val_mae, e.seconds);
    if (reached < 0 && e.train_mae < 0.15 * baseline)
      reached = e.epoch;
  };
  const TrainingHistory h = train(model, b.prepared.split, b.cfg, nullptr, hooks);
  best_eval = evaluate_mae(model, train_set, 64);
  double best_running = 1e300;
  for (const EpochRecord &e : h.epochs)
    best_running = std::min(best_running, e.train_mae);
  r.check(reached >= 0, "train masked MAE " + fmt("%.4f", best_running) + " < 15% of baseline (" +
                            fmt("%.4f", 0.15 * baseline) + ")" +
                            (reached >= 0 ? " at epoch " + std::to_string(reached) : ""));
  r.log << "  eval-mode train MAE with best-validation parameters " << fmt("%.4f", best_eval)
        << " (" << fmt("%.1f", 100.0 * best_eval / baseline) << "% of baseline)\n";

  // A second run with the same seed must repeat the first epochs exactly.
  TrainConfig again = b.cfg;
  again.epochs = 3;
  TestamModel model2(again.model, b.prepared.scaler, again.seed);
  const TrainingHistory h2 = train(model2, b.prepared.split, again);
  bool same = h2.epochs.size() == 3;
  for (std::size_t i = 0; same && i < 3; ++i)
    same = h2.epochs[i].loss == h.epochs[i].loss && h2.epochs[i].train_mae == h.epochs[i].train_mae &&
           h2.epochs[i].val_mae == h.epochs[i].val_mae &&
           h2.epochs[i].selection_share == h.epochs[i].selection_share;
  r.check(same, "fixed seed reproduces the first 3 epochs bit-identically");
  const double secs = clock.seconds();
  r.check(secs < 600.0, "runtime " + fmt("%.0f", secs) + " s < 600 s");
  return r;
}

// ---------------------------------------------------------------------------

constexpr int kScenarioEpochs = 60;

Result criterion6() {
  Result r;
  Stopwatch clock;
  SyntheticConfig s;
  s.n_nodes = 8;
  s.n_isolated = 2;
  s.n_event_nodes = 2;
  s.n_days = 7;
  s.event_rate = 2.0;
  s.seed = 23;
  TrainConfig base = bench_train_config();
  base.epochs = kScenarioEpochs;
  Bench b = make_bench(s, base);
  anneal_over_run(b);
  std::vector<WindowedSample> all = b.prepared.split.train;
  for (const auto *part : {&b.prepared.split.val, &b.prepared.split.test})
    all.insert(all.end(), part->begin(), part->end());

  double iso = 0.0, conn = 0.0, ev = 0.0, non_ev = 0.0;
  const int seeds = 3;
  for (int seed = 1; seed <= seeds; ++seed) {
    TrainConfig cfg = b.cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    TestamModel model(cfg.model, b.prepared.scaler, cfg.seed);
    train(model, b.prepared.split, cfg);
    const Predictions pred = predict(model, all, 64);
    const RoutingReport rep =
        routing_report(pred, all, model, cfg.model.steps_per_day, b.data.tags);
    auto share = [](const std::vector<ShareRow> &rows, const std::string &group, int e) {
      for (const ShareRow &row : rows)
        if (row.group == group)
          return row.share[e];
      return 0.0;
    };
    const double si = share(rep.per_class, "isolated", 0);
    const double sc = share(rep.per_class, "connected", 0);
    const double se = share(rep.per_event, "event", kAttentionExpert);
    const double sn = share(rep.per_event, "non_event", kAttentionExpert);
    r.log << "  seed " << seed << ": identity isolated " << fmt("%.3f", si) << " connected "
          << fmt("%.3f", sc) << "; attention event " << fmt("%.3f", se) << " non-event "
          << fmt("%.3f", sn) << '\n';
    iso += si / seeds;
    conn += sc / seeds;
    ev += se / seeds;
    non_ev += sn / seeds;
  }
  r.check(iso > conn, "identity share isolated " + fmt("%.3f", iso) + " > connected " +
                          fmt("%.3f", conn));
  r.check(ev > non_ev, "attention share in events " + fmt("%.3f", ev) + " > outside " +
                           fmt("%.3f", non_ev));
  r.log << "  runtime " << fmt("%.0f", clock.seconds()) << " s\n";
  return r;
}

// ---------------------------------------------------------------------------

constexpr int kAblationEpochs = 50;

Result criterion7() {
  Result r;
  Stopwatch clock;
  SyntheticConfig s;
  s.seed = 31;
  TrainConfig base = bench_train_config();
  base.epochs = kAblationEpochs;
  Bench b = make_bench(s, base);
  anneal_over_run(b);

  struct Variant {
    const char *name;
    std::function<void(AblationConfig &)> apply;
  };
  const Variant variants[] = {
      {"full", [](AblationConfig &) {}},
      {"no_gating", [](AblationConfig &a) { a.no_gating = true; }},
      {"ensemble", [](AblationConfig &a) { a.ensemble = true; }},
      {"worst_only", [](AblationConfig &a) { a.worst_only = true; }},
      {"replaced_identity", [](AblationConfig &a) { a.replaced_identity = true; }},
  };
  constexpr int kSeeds = 3;
  double mae[5][kSeeds];
  for (int v = 0; v < 5; ++v)
    for (int seed = 0; seed < kSeeds; ++seed) {
      TrainConfig cfg = b.cfg;
      variants[v].apply(cfg.model.ablation);
      cfg.seed = static_cast<std::uint64_t>(seed + 1);
      TestamModel model(cfg.model, b.prepared.scaler, cfg.seed);
      train(model, b.prepared.split, cfg);
      mae[v][seed] = evaluate_mae(model, b.prepared.split.test, 64);
      std::fprintf(stderr, "%s seed %d test MAE %.4f (%.0fs)\n", variants[v].name, seed + 1,
                   mae[v][seed], clock.seconds());
    }
  for (int v = 0; v < 5; ++v) {
    r.log << "  " << variants[v].name << ":";
    for (int seed = 0; seed < kSeeds; ++seed)
      r.log << ' ' << fmt("%.4f", mae[v][seed]);
    r.log << '\n';
  }
  for (int v = 1; v < 5; ++v) {
    int wins = 0;
    for (int seed = 0; seed < kSeeds; ++seed)
      wins += mae[0][seed] <= mae[v][seed] ? 1 : 0;
    r.check(wins >= 2, std::string("full <= ") + variants[v].name + " in " +
                           std::to_string(wins) + " of 3 seeds");
  }
  const double secs = clock.seconds();
  r.check(secs < 3600.0, "runtime " + fmt("%.0f", secs) + " s < 3600 s");
  return r;
}

// ---------------------------------------------------------------------------

double brute_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Result criterion8() {
  Result r;
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> speed(-5.0, 70.0);
  double worst = 0.0;
  bool labels_match = true;
  const int E = kNumExperts;

  for (int trial = 0; trial < 300; ++trial) {
    const int rows = 2 + trial % 23;
    Matrix y(rows, 1), yh(rows, 1);
    for (int i = 0; i < rows; ++i) {
      y(i, 0) = (rng() % 4 == 0) ? 0.0 : speed(rng);
      yh(i, 0) = speed(rng);
    }
    y(0, 0) = 1.0 + std::abs(speed(rng));

    // Masked MAE, RMSE, MAPE and pointwise error.
    double a = 0.0, sq = 0.0, pct = 0.0;
    int n = 0;
    Matrix pe(rows, 1);
    std::vector<double> observed;
    for (int i = 0; i < rows; ++i) {
      pe(i, 0) = 0.0;
      if (y(i, 0) == 0.0)
        continue;
      const double e = y(i, 0) - yh(i, 0);
      pe(i, 0) = std::abs(e);
      observed.push_back(std::abs(e));
      a += std::abs(e);
      sq += e * e;
      pct += std::abs(e / y(i, 0));
      ++n;
    }
    const Metrics m = metrics(y, yh);
    worst = std::max({worst, std::abs(m.mae - a / n), std::abs(m.rmse - std::sqrt(sq / n)),
                      std::abs(m.mape - 100.0 * pct / n),
                      std::abs(masked_mae(y, yh).value - a / n),
                      (pointwise_error(y, yh) - pe).cwiseAbs().maxCoeff()});
    {
      Tape t;
      worst = std::max(worst, std::abs(masked_mae(t.constant(yh), y).scalar() - a / n));
    }

    // Quantiles and worst-route labels.
    const double q = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double thr = brute_quantile(observed, q);
    worst = std::max(worst, std::abs(quantile_threshold(pe, y, q) - thr));
    std::vector<int> sel(static_cast<std::size_t>(rows));
    for (int &s : sel)
      s = static_cast<int>(rng() % E);
    const Matrix wl = worst_route_labels(pe, y, sel, E, q);
    for (int i = 0; i < rows; ++i)
      for (int e = 0; e < E; ++e) {
        const bool correct = pe(i, 0) < thr;
        const double want = correct ? (e == sel[i] ? 1.0 : 0.0)
                                    : (e == sel[i] ? 0.0 : 1.0 / (E - 1));
        labels_match = labels_match && wl(i, e) == want;
      }

    // Node-time means and best-route labels on a [B, T, N] layout.
    const Layout l{1 + trial % 2, 1 + trial % 3, 1 + trial % 4};
    Matrix vals = random_matrix(l.rows(), E, rng).cwiseAbs();
    Matrix wts(l.rows(), 1);
    for (int i = 0; i < l.rows(); ++i)
      wts(i, 0) = rng() % 3 == 0 ? 0.0 : 1.0;
    Matrix node_w;
    const Matrix ntm = node_time_mean(vals, wts, l, &node_w);
    for (int b = 0; b < l.batch; ++b)
      for (int nn = 0; nn < l.nodes; ++nn) {
        std::vector<double> sum(static_cast<std::size_t>(E), 0.0);
        int count = 0;
        for (int t = 0; t < l.steps; ++t) {
          const int row = l.row(b, t, nn);
          if (wts(row, 0) == 0.0)
            continue;
          for (int e = 0; e < E; ++e)
            sum[static_cast<std::size_t>(e)] += vals(row, e);
          ++count;
        }
        const int g = b * l.nodes + nn;
        worst = std::max(worst, std::abs(node_w(g, 0) - (count > 0 ? 1.0 : 0.0)));
        for (int e = 0; e < E; ++e)
          worst = std::max(worst, std::abs(ntm(g, e) - (count > 0 ? sum[static_cast<std::size_t>(e)] / count : 0.0)));
      }

    const int groups = 3 + trial % 7;
    Matrix node_err = random_matrix(groups, 1, rng).cwiseAbs();
    Matrix node_wt = Matrix::Ones(groups, 1);
    node_wt(trial % groups, 0) = 0.0;
    node_wt(0, 0) = 1.0;
    const Matrix node_p = random_matrix(groups, E, rng).cwiseAbs();
    std::vector<double> pop;
    for (int g = 0; g < groups; ++g)
      if (node_wt(g, 0) != 0.0)
        pop.push_back(node_err(g, 0));
    const double bthr = brute_quantile(pop, 1.0 - q);
    double got_thr = 0.0;
    const Matrix bl = best_route_labels(node_err, node_wt, node_p, q, nullptr, &got_thr);
    worst = std::max(worst, std::abs(got_thr - bthr));
    for (int g = 0; g < groups; ++g) {
      int arg = 0;
      for (int e = 1; e < E; ++e)
        if (node_p(g, e) > node_p(g, arg))
          arg = e;
      const bool correct = node_err(g, 0) < bthr;
      for (int e = 0; e < E; ++e) {
        const double want =
            correct ? (e == arg ? 1.0 : 0.0) : (e == arg ? 0.0 : 1.0 / (E - 1));
        labels_match = labels_match && bl(g, e) == want;
      }
    }

    // Routing cross entropy.
    Matrix p = random_matrix(rows, E, rng).cwiseAbs();
    for (int i = 0; i < rows; ++i)
      p.row(i) /= p.row(i).sum();
    p(0, 0) = 0.0;
    Matrix rw(rows, 1);
    for (int i = 0; i < rows; ++i)
      rw(i, 0) = y(i, 0) != 0.0 ? 1.0 : 0.0;
    double ce = 0.0, cnt = 0.0;
    for (int i = 0; i < rows; ++i) {
      if (rw(i, 0) == 0.0)
        continue;
      cnt += 1.0;
      for (int e = 0; e < E; ++e)
        ce -= wl(i, e) * std::log(std::max(p(i, e), kProbabilityFloor));
    }
    ce /= cnt * E;
    worst = std::max(worst, std::abs(routing_ce(p, wl, rw) - ce));
    {
      Tape t;
      worst = std::max(worst, std::abs(routing_ce(t.constant(p), wl, rw).scalar() - ce));
    }
  }
  r.check(worst <= 1e-9, "losses and metrics match brute force, max deviation " +
                             fmt("%.2e", worst));
  r.check(labels_match, "route labels match brute force exactly");

  const std::vector<double> one_to_five = {1, 2, 3, 4, 5};
  r.check(quantile(one_to_five, 0.5) == 3.0, "quantile({1..5}, 0.5) = 3");
  double qdev = 0.0;
  for (double q = 0.0; q <= 1.0; q += 0.05)
    qdev = std::max(qdev, std::abs(quantile(one_to_five, q) - (1.0 + 4.0 * q)));
  r.check(qdev <= 1e-12, "quantile over {1..5} is linear interpolation, max deviation " +
                             fmt("%.1e", qdev));
  return r;
}

// ---------------------------------------------------------------------------

Result criterion9() {
  Result r;
  ModelConfig cfg; // defaults: d = e = 32, m = 20, l = 3, K = 4, h_ff = 128
  cfg.num_nodes = 207;
  TestamModel model(cfg, Scaler{}, 1);
  const std::size_t count = model.parameter_count();
  r.log << "  parameters at defaults on 207 nodes: " << count << '\n';
  for (int e = 0; e < kNumExperts; ++e)
    r.log << "    " << to_string(model.experts()[e].kind) << " expert "
          << model.expert_parameter_count(e) << '\n';
  r.check(count < 300000, std::to_string(count) + " < 300000");
  return r;
}

} // namespace

int main(int argc, char **argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <criterion 1-9>\n", argv[0]);
    return 2;
  }
  const int n = std::atoi(argv[1]);
  const std::function<Result()> criteria[] = {criterion1, criterion2, criterion3,
                                               criterion4, criterion5, criterion6,
                                               criterion7, criterion8, criterion9};
  if (n < 1 || n > 9) {
    std::fprintf(stderr, "criterion must be between 1 and 9\n");
    return 2;
  }
  Result res;
  try {
    res = criteria[n - 1]();
  } catch (const std::exception &e) {
    res.pass = false;
    res.log << "  exception: " << e.what() << '\n';
  }
  std::printf("%s criterion %d\n%s", res.pass ? "PASS" : "FAIL", n, res.log.str().c_str());
  return res.pass ? 0 : 1;
}
