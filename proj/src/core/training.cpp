// SPDX-License-Identifier: Apache-2.0
#include "core/training.hpp"

#include "core/binary_io.hpp"
#include "core/config.hpp"
#include "core/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <mutex>
#include <numeric>
#include <thread>

namespace testam {

using ad::Index;
using ad::Matrix;

void ScheduleConfig::validate() const {
  require(lr_min >= 0.0 && lr_min <= lr_max,
          "schedule: need 0 <= lr_min <= lr_max", ErrorKind::Config);
  require(warmup_steps >= 1 && restart_period >= 1,
          "schedule: warmup_steps and restart_period must be >= 1",
          ErrorKind::Config);
}

double warmup_lr(long t_cur, const ScheduleConfig &c) {
  return c.lr_min + (c.lr_max - c.lr_min) * static_cast<double>(t_cur) /
                        static_cast<double>(c.warmup_steps);
}

double cosine_lr(long t_cur, const ScheduleConfig &c) {
  return c.lr_min + 0.5 * (c.lr_max - c.lr_min) *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(t_cur) /
                                        static_cast<double>(c.restart_period)));
}

double lr_at_step(long step, const ScheduleConfig &c) {
  require(step >= 0, "lr_at_step: step must be non-negative");
  if (step < c.warmup_steps)
    return warmup_lr(step, c);
  return cosine_lr((step - c.warmup_steps) % c.restart_period, c);
}

Adam::Adam(ad::ParameterSet &params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const ad::Parameter &p : params_) {
    state_.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    state_.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::set_state(AdamState s) {
  require(s.m.size() == state_.m.size() && s.v.size() == state_.v.size(),
          "optimizer state does not match the parameter set");
  std::size_t i = 0;
  for (const ad::Parameter &p : params_) {
    require(s.m[i].rows() == p.value.rows() && s.m[i].cols() == p.value.cols() &&
                s.v[i].rows() == p.value.rows() && s.v[i].cols() == p.value.cols(),
            "optimizer state shape mismatch for " + p.name);
    ++i;
  }
  state_ = std::move(s);
}

void Adam::step(double lr) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  std::size_t i = 0;
  for (ad::Parameter &p : params_) {
    Matrix &m = state_.m[i];
    Matrix &v = state_.v[i];
    ++i;
    if (p.grad.size() == 0)
      continue;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p.grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  }
}

double clip_grad_norm(ad::ParameterSet &params, double max_norm) {
  double sq = 0.0;
  for (const ad::Parameter &p : params)
    if (p.grad.size() != 0)
      sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (ad::Parameter &p : params)
      if (p.grad.size() != 0)
        p.grad *= s;
  }
  return norm;
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const char *what) {
    require(ok, what, ErrorKind::Config);
  };
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(q > 0.0 && q < 1.0, "q must be in (0, 1)");
  check(patience >= 1, "patience must be >= 1");
  check(grad_clip >= 0.0, "grad_clip must be >= 0");
  check(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "optimizer.beta1 must be in [0, 1)");
  check(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "optimizer.beta2 must be in [0, 1)");
  check(adam.eps > 0.0, "optimizer.eps must be > 0");
  check(loss.regression >= 0.0 && loss.worst >= 0.0 && loss.best >= 0.0,
        "loss_weights must be non-negative");
  schedule.validate();
  ModelConfig m = model;
  m.num_nodes = std::max(m.num_nodes, 1);
  m.validate();
}

LossWeights TrainConfig::effective_loss() const {
  LossWeights w = loss;
  if (model.ablation.worst_only)
    w.best = 0.0;
  return w;
}

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t purpose) {
  std::uint64_t z = seed ^ (epoch * 0x9E3779B97F4A7C15ULL) ^ (purpose << 56);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Span {
  std::size_t begin, end;
};

std::vector<Span> batch_spans(std::size_t n, int batch_size) {
  std::vector<Span> out;
  for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(batch_size))
    out.push_back({b, std::min(n, b + static_cast<std::size_t>(batch_size))});
  return out;
}

} // namespace

namespace {

std::atomic<int> g_max_threads{0};

} // namespace

void set_max_threads(int threads) {
  require(threads >= 1, "thread count must be >= 1");
  g_max_threads = threads;
}

int max_threads() {
  const int set = g_max_threads.load();
  if (set > 0)
    return set;
  return std::max(1u, std::thread::hardware_concurrency());
}

Predictions predict(const TestamModel &model,
                    const std::vector<WindowedSample> &samples, int batch_size) {
  require(!samples.empty(), "predict: no samples");
  require(batch_size >= 1, "predict: batch_size must be >= 1");
  const ModelConfig &c = model.config();
  Predictions out;
  out.layout = {static_cast<int>(samples.size()), c.out_steps, c.num_nodes};
  const Index rows = out.layout.rows();
  out.y.resize(rows, 1);
  out.y_hat.resize(rows, 1);
  out.selected.resize(static_cast<std::size_t>(rows));
  out.gating = !c.ablation.no_gating;
  if (out.gating)
    out.p.resize(rows, kNumExperts);
  for (int e = 0; e < kNumExperts; ++e)
    if (!c.ablation.no_gating || e == kAttentionExpert)
      out.y_hat_expert[e].resize(rows, 1);

  const std::vector<Span> spans = batch_spans(samples.size(), batch_size);
  auto run = [&](std::size_t i) {
    const Span &s = spans[i];
    const Batch batch = make_batch(samples, s.begin, s.end);
    ad::Tape tape(false);
    const ForecastBundle fb = model.forward(tape, batch);
    const Index offset = static_cast<Index>(s.begin) * c.out_steps * c.num_nodes;
    const Index n = batch.out.rows();
    out.y.middleRows(offset, n) = batch.y;
    out.y_hat.middleRows(offset, n) = fb.y_hat;
    std::copy(fb.selected.begin(), fb.selected.end(), out.selected.begin() + offset);
    if (out.gating)
      out.p.middleRows(offset, n) = fb.p.value();
    for (int e = 0; e < kNumExperts; ++e)
      if (fb.y_hat_expert[e].valid())
        out.y_hat_expert[e].middleRows(offset, n) = fb.y_hat_expert[e].value();
  };
  const std::size_t workers =
      std::min(spans.size(), static_cast<std::size_t>(max_threads()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < spans.size(); ++i)
      run(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < spans.size();) {
        try {
          run(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  for (std::thread &t : pool)
    t.join();
  if (error)
    std::rethrow_exception(error);
  return out;
}

double evaluate_mae(const TestamModel &model,
                    const std::vector<WindowedSample> &samples, int batch_size) {
  const Predictions p = predict(model, samples, batch_size);
  return masked_mae(p.y, p.y_hat).value;
}

TrainingHistory train(TestamModel &model, const DatasetSplit &split,
                      const TrainConfig &cfg, TrainProgress *resume,
                      const TrainHooks &hooks) {
  cfg.validate();
  require(!split.train.empty(), "training split is empty");
  require(!split.val.empty(), "validation split is empty");
  ad::ParameterSet &params = model.params();
  Adam adam(params, cfg.adam);
  TrainProgress progress;
  if (resume != nullptr) {
    progress = *resume;
    if (!progress.adam.m.empty())
      adam.set_state(progress.adam);
  }
  const LossWeights weights = cfg.effective_loss();
  TrainingHistory history;
  history.best_epoch = progress.best_epoch;
  history.best_val_mae = progress.best_val_mae;

  std::vector<std::size_t> order(split.train.size());
  for (int epoch = progress.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(stream_seed(cfg.seed, epoch, 1));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng(stream_seed(cfg.seed, epoch, 2));

    EpochRecord rec;
    rec.epoch = epoch;
    double abs_sum = 0.0, observed = 0.0;
    std::array<double, kNumExperts> picks{};
    int batches = 0;
    for (const Span &s : batch_spans(order.size(), cfg.batch_size)) {
      std::vector<const WindowedSample *> members;
      for (std::size_t i = s.begin; i < s.end; ++i)
        members.push_back(&split.train[order[i]]);
      const Batch batch = make_batch(members);
      const double lr = lr_at_step(adam.state().step, cfg.schedule);

      params.zero_grad();
      ad::Tape tape;
      const ForecastBundle fb =
          model.forward(tape, batch, ForwardOptions{true, &dropout_rng});
      const LossResult loss = total_loss(fb, batch, cfg.q, weights);
      const double value = loss.total.scalar();
      if (!std::isfinite(value))
        fail(ErrorKind::Numeric, "training diverged: loss is " +
                                     std::to_string(value) + " at epoch " +
                                     std::to_string(epoch) + ", step " +
                                     std::to_string(adam.state().step));
      tape.backward(loss.total);
      clip_grad_norm(params, cfg.grad_clip);
      adam.step(lr);

      rec.lr = lr;
      rec.loss += value;
      rec.regression += loss.regression;
      rec.worst += loss.worst;
      rec.best += loss.best;
      ++batches;
      for (Index r = 0; r < batch.y.rows(); ++r) {
        if (batch.y(r, 0) == 0.0)
          continue;
        abs_sum += std::abs(batch.y(r, 0) - fb.y_hat(r, 0));
        observed += 1.0;
        picks[fb.selected[r]] += 1.0;
      }
    }
    rec.loss /= batches;
    rec.regression /= batches;
    rec.worst /= batches;
    rec.best /= batches;
    rec.train_mae = observed > 0.0 ? abs_sum / observed : 0.0;
    for (int e = 0; e < kNumExperts; ++e)
      rec.selection_share[e] = observed > 0.0 ? picks[e] / observed : 0.0;
    rec.step = adam.state().step;
    rec.val_mae = evaluate_mae(model, split.val, cfg.batch_size);
    if (!std::isfinite(rec.val_mae))
      fail(ErrorKind::Numeric, "validation MAE is not finite at epoch " +
                                   std::to_string(epoch));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                      .count();
    history.epochs.push_back(rec);

    progress.epochs_done = epoch + 1;
    if (progress.best_epoch < 0 || rec.val_mae < progress.best_val_mae) {
      progress.best_val_mae = rec.val_mae;
      progress.best_epoch = epoch;
      progress.best_params = params.snapshot();
      progress.stale_epochs = 0;
    } else {
      ++progress.stale_epochs;
    }
    progress.adam = adam.state();
    history.best_epoch = progress.best_epoch;
    history.best_val_mae = progress.best_val_mae;
    if (hooks.on_epoch)
      hooks.on_epoch(history, progress);
    if (progress.stale_epochs >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
  }
  if (!progress.best_params.empty())
    params.restore(progress.best_params);
  if (resume != nullptr)
    *resume = progress;
  return history;
}

// Checkpoint layout (little-endian): magic "TSCK", u16 version, u16 zero,
// u32 + bytes config JSON, u64 architecture hash, f64 scaler mean and std,
// u32 tensor count, then per tensor u32 + bytes name, u32 rows, u32 cols and
// rows*cols f64. An optional progress block follows (u8 flag), and a CRC-32
// of everything before it closes the file.

namespace {

void put_matrix(BinaryWriter &w, const Matrix &m) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i)
    w.put<double>(m.data()[i]);
}

Matrix get_matrix(BinaryReader &r) {
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i)
    m.data()[i] = r.get<double>();
  return m;
}

void put_string(BinaryWriter &w, const std::string &s) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  w.bytes(s.data(), s.size());
}

std::string get_string(BinaryReader &r) {
  return r.str(r.get<std::uint32_t>());
}

} // namespace

void save_checkpoint(const TestamModel &model, const TrainConfig &cfg,
                     const TrainProgress *progress, const std::filesystem::path &path) {
  TrainConfig stored = cfg;
  stored.model = model.config();
  BinaryWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint16_t>(0);
  put_string(w, to_json(stored).dump());
  w.put<std::uint64_t>(architecture_hash(stored.model));
  w.put<double>(model.scaler().mean);
  w.put<double>(model.scaler().std);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.params().size()));
  for (const ad::Parameter &p : model.params()) {
    put_string(w, p.name);
    put_matrix(w, p.value);
  }
  w.put<std::uint8_t>(progress != nullptr ? 1 : 0);
  if (progress != nullptr) {
    w.put<std::int32_t>(progress->epochs_done);
    w.put<std::int32_t>(progress->stale_epochs);
    w.put<std::int32_t>(progress->best_epoch);
    w.put<double>(progress->best_val_mae);
    w.put<std::int64_t>(progress->adam.step);
    for (std::size_t i = 0; i < progress->adam.m.size(); ++i) {
      put_matrix(w, progress->adam.m[i]);
      put_matrix(w, progress->adam.v[i]);
    }
    w.put<std::uint8_t>(progress->best_params.empty() ? 0 : 1);
    for (const Matrix &m : progress->best_params)
      put_matrix(w, m);
  }
  std::vector<char> data = w.data();
  const std::uint32_t crc = crc_of(data.data(), data.size());
  BinaryWriter tail;
  tail.put<std::uint32_t>(crc);
  data.insert(data.end(), tail.data().begin(), tail.data().end());
  write_file(path, data);
}

Checkpoint read_checkpoint(const std::filesystem::path &path) {
  const std::vector<char> data = read_file(path);
  const std::string corrupt = "checkpoint hash mismatch: " + path.string() +
                              " is corrupted or truncated";
  if (data.size() < 12)
    fail(ErrorKind::Format, corrupt);
  const std::size_t body = data.size() - 4;
  BinaryReader crc_reader(data, data.size());
  for (std::size_t i = 0; i < body; ++i)
    crc_reader.get<std::uint8_t>();
  if (crc_reader.get<std::uint32_t>() != crc_of(data.data(), body))
    fail(ErrorKind::Format, corrupt);

  BinaryReader r(data, body);
  if (r.str(4) != std::string(kCheckpointMagic, 4))
    fail(ErrorKind::Format, "not a checkpoint file (magic-number mismatch): " +
                                path.string());
  if (r.get<std::uint16_t>() != kCheckpointVersion)
    fail(ErrorKind::Format, "checkpoint version mismatch: " + path.string());
  r.get<std::uint16_t>();
  Checkpoint ck;
  const Json doc = Json::parse(get_string(r), nullptr, false);
  if (doc.is_discarded())
    fail(ErrorKind::Format, "checkpoint config is not valid JSON");
  ck.config = train_config_from_json(doc);
  ck.arch_hash = r.get<std::uint64_t>();
  if (ck.arch_hash != architecture_hash(ck.config.model))
    fail(ErrorKind::Format, "checkpoint hash mismatch: stored architecture hash "
                            "does not match its config");
  ck.scaler.mean = r.get<double>();
  ck.scaler.std = r.get<double>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(r);
    ck.tensors.emplace_back(std::move(name), get_matrix(r));
  }
  if (r.get<std::uint8_t>() != 0) {
    TrainProgress p;
    p.epochs_done = r.get<std::int32_t>();
    p.stale_epochs = r.get<std::int32_t>();
    p.best_epoch = r.get<std::int32_t>();
    p.best_val_mae = r.get<double>();
    p.adam.step = r.get<std::int64_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      p.adam.m.push_back(get_matrix(r));
      p.adam.v.push_back(get_matrix(r));
    }
    if (r.get<std::uint8_t>() != 0)
      for (std::uint32_t i = 0; i < count; ++i)
        p.best_params.push_back(get_matrix(r));
    ck.progress = std::move(p);
  }
  if (r.pos() != body)
    fail(ErrorKind::Format, corrupt);
  return ck;
}

namespace {

Json architecture_json(const ModelConfig &m) {
  TrainConfig c;
  c.model = m;
  const Json full = to_json(c);
  return {{"model", full.at("model")}, {"ablation", full.at("ablation")}};
}

} // namespace

void load_into(TestamModel &model, const Checkpoint &ck) {
  const Json want = architecture_json(ck.config.model);
  const Json have = architecture_json(model.config());
  const std::string field = first_difference(want, have);
  if (!field.empty()) {
    std::string pointer = "/" + field;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const Json::json_pointer ptr(pointer);
    fail(ErrorKind::Config, "checkpoint config mismatch in field '" + field +
                                "': checkpoint has " + want.at(ptr).dump() +
                                ", model has " + have.at(ptr).dump());
  }
  ad::ParameterSet &params = model.params();
  require(ck.tensors.size() == params.size(),
          "checkpoint has " + std::to_string(ck.tensors.size()) +
              " tensors, model has " + std::to_string(params.size()),
          ErrorKind::Format);
  for (const auto &[name, value] : ck.tensors) {
    ad::Parameter *p = params.find(name);
    require(p != nullptr, "checkpoint tensor '" + name + "' is unknown to the model",
            ErrorKind::Format);
    require(p->value.rows() == value.rows() && p->value.cols() == value.cols(),
            "checkpoint tensor '" + name + "' has the wrong shape", ErrorKind::Format);
    p->value = value;
  }
}

std::unique_ptr<TestamModel> load_checkpoint(const Checkpoint &ck) {
  auto model = std::make_unique<TestamModel>(ck.config.model, ck.scaler, ck.config.seed);
  load_into(*model, ck);
  return model;
}

std::unique_ptr<TestamModel> load_checkpoint(const std::filesystem::path &path) {
  return load_checkpoint(read_checkpoint(path));
}

} // namespace testam
