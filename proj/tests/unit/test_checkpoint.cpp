// SPDX-License-Identifier: Apache-2.0
#include "core/binary_io.hpp"
#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/training.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace testam {
namespace {

using test::TempDir;

TrainConfig small_config() {
  TrainConfig c;
  c.model.num_nodes = 3;
  c.model.steps_per_day = 24;
  c.model.in_steps = 4;
  c.model.out_steps = 3;
  c.model.hidden = 8;
  c.model.memory_dim = 8;
  c.model.memory_size = 4;
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.ffn_hidden = 8;
  c.model.tim_dim = 4;
  c.seed = 21;
  return c;
}

std::vector<WindowedSample> windows(const Scaler &sc) {
  const auto s = test::make_series(20, 3, 60, [](auto t, auto n) {
    return 30.0f + 5.0f * std::cos(0.3f * float(t * (n + 1)));
  });
  return make_windows(s, 4, 3, sc);
}

TEST(Checkpoint, RoundTripGivesBitIdenticalForward) {
  TempDir dir("ckpt");
  const TrainConfig cfg = small_config();
  const Scaler sc{31.0, 4.0};
  TestamModel m(cfg.model, sc, cfg.seed);
  // Move away from the seeded initialization so the load really matters.
  std::mt19937_64 rng(3);
  for (ad::Parameter &p : m.params())
    p.value += test::random_matrix(p.value.rows(), p.value.cols(), rng, 0.01);
  save_checkpoint(m, cfg, nullptr, dir / "m.ckpt");
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded->scaler().mean, sc.mean);
  EXPECT_EQ(loaded->scaler().std, sc.std);
  EXPECT_EQ(loaded->params().snapshot(), m.params().snapshot());
  const auto w = windows(sc);
  const Predictions a = predict(m, w, 4);
  const Predictions b = predict(*loaded, w, 4);
  EXPECT_EQ(a.y_hat, b.y_hat);
  EXPECT_EQ(a.p, b.p);
}

TEST(Checkpoint, ProgressRoundTrips) {
  TempDir dir("ckpt");
  const TrainConfig cfg = small_config();
  TestamModel m(cfg.model, Scaler{}, cfg.seed);
  TrainProgress p;
  p.epochs_done = 4;
  p.stale_epochs = 1;
  p.best_epoch = 2;
  p.best_val_mae = 3.25;
  p.adam.step = 77;
  for (const ad::Parameter &param : m.params()) {
    p.adam.m.push_back(ad::Matrix::Constant(param.value.rows(), param.value.cols(), 0.5));
    p.adam.v.push_back(ad::Matrix::Constant(param.value.rows(), param.value.cols(), 0.25));
  }
  p.best_params = m.params().snapshot();
  save_checkpoint(m, cfg, &p, dir / "m.ckpt");
  const Checkpoint ck = read_checkpoint(dir / "m.ckpt");
  ASSERT_TRUE(ck.progress.has_value());
  EXPECT_EQ(ck.progress->epochs_done, 4);
  EXPECT_EQ(ck.progress->best_epoch, 2);
  EXPECT_EQ(ck.progress->best_val_mae, 3.25);
  EXPECT_EQ(ck.progress->adam.step, 77);
  EXPECT_EQ(ck.progress->adam.v, p.adam.v);
  EXPECT_EQ(ck.progress->best_params, p.best_params);
  EXPECT_EQ(ck.config, [&] {
    TrainConfig c = cfg;
    c.model = m.config();
    return c;
  }());
}

TEST(Checkpoint, CorruptionIsDetected) {
  TempDir dir("ckpt");
  const TrainConfig cfg = small_config();
  TestamModel m(cfg.model, Scaler{}, cfg.seed);
  save_checkpoint(m, cfg, nullptr, dir / "m.ckpt");
  std::vector<char> buf = read_file(dir / "m.ckpt");
  std::vector<char> flipped = buf;
  flipped[flipped.size() / 3] ^= 0x01;
  write_file(dir / "f.ckpt", flipped);
  std::vector<char> cut(buf.begin(), buf.begin() + static_cast<long>(buf.size() / 2));
  write_file(dir / "c.ckpt", cut);
  for (const char *name : {"f.ckpt", "c.ckpt"}) {
    try {
      read_checkpoint(dir / name);
      FAIL() << name;
    } catch (const Error &e) {
      EXPECT_EQ(e.kind(), ErrorKind::Format);
      EXPECT_NE(std::string(e.what()).find("hash mismatch"), std::string::npos) << e.what();
    }
  }
}

TEST(Checkpoint, MismatchedConfigNamesTheField) {
  TempDir dir("ckpt");
  const TrainConfig cfg = small_config();
  TestamModel m(cfg.model, Scaler{}, cfg.seed);
  save_checkpoint(m, cfg, nullptr, dir / "m.ckpt");
  ModelConfig other = cfg.model;
  other.hidden = 12;
  other.memory_dim = 12;
  TestamModel target(other, Scaler{}, 1);
  try {
    load_into(target, read_checkpoint(dir / "m.ckpt"));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("model.hidden"), std::string::npos) << e.what();
  }
  ModelConfig ablated = cfg.model;
  ablated.ablation.no_tim = true;
  TestamModel target2(ablated, Scaler{}, 1);
  try {
    load_into(target2, read_checkpoint(dir / "m.ckpt"));
    FAIL();
  } catch (const Error &e) {
    EXPECT_NE(std::string(e.what()).find("ablation.no_tim"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, AblationChangesArchitectureHash) {
  ModelConfig a = small_config().model;
  ModelConfig b = a;
  b.ablation.no_gating = true;
  EXPECT_NE(architecture_hash(a), architecture_hash(b));
  EXPECT_EQ(architecture_hash(a), architecture_hash(small_config().model));
}

} // namespace
} // namespace testam
