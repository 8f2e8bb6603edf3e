// SPDX-License-Identifier: Apache-2.0
#include "testam/testam.h"

#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/pipeline.hpp"

#include <cstring>
#include <memory>
#include <new>
#include <string>

struct testam_config {
  testam_config_kind kind;
  testam::Json doc;
};

struct testam_model {
  std::unique_ptr<testam::TestamModel> model;
};

namespace {

thread_local std::string g_last_error;

testam_status to_status(testam::ErrorKind kind) {
  switch (kind) {
  case testam::ErrorKind::InvalidArgument:
    return TESTAM_ERR_INVALID_ARGUMENT;
  case testam::ErrorKind::Config:
    return TESTAM_ERR_CONFIG;
  case testam::ErrorKind::Io:
    return TESTAM_ERR_IO;
  case testam::ErrorKind::Format:
    return TESTAM_ERR_FORMAT;
  case testam::ErrorKind::Numeric:
    return TESTAM_ERR_NUMERIC;
  }
  return TESTAM_ERR_INTERNAL;
}

template <class F> testam_status guarded(F &&f) {
  try {
    f();
    g_last_error.clear();
    return TESTAM_OK;
  } catch (const testam::Error &e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::bad_alloc &) {
    g_last_error = "out of memory";
    return TESTAM_ERR_INTERNAL;
  } catch (const std::exception &e) {
    g_last_error = e.what();
    return TESTAM_ERR_INTERNAL;
  }
}

void need(const void *p, const char *name) {
  if (p == nullptr)
    testam::fail(testam::ErrorKind::InvalidArgument, std::string(name) + " is NULL");
}

testam::Json defaults_for(testam_config_kind kind) {
  if (kind == TESTAM_CONFIG_TRAIN)
    return testam::to_json(testam::TrainConfig{});
  return testam::to_json(testam::SyntheticConfig{});
}

testam::TrainConfig as_train(const testam_config *cfg) {
  need(cfg, "config");
  if (cfg->kind != TESTAM_CONFIG_TRAIN)
    testam::fail(testam::ErrorKind::InvalidArgument, "expected a training config");
  return testam::train_config_from_json(cfg->doc);
}

testam::SyntheticConfig as_synthetic(const testam_config *cfg) {
  need(cfg, "config");
  if (cfg->kind != TESTAM_CONFIG_SYNTHETIC)
    testam::fail(testam::ErrorKind::InvalidArgument, "expected a synthetic-data config");
  return testam::synthetic_config_from_json(cfg->doc);
}

} // namespace

extern "C" {

const char *testam_version(void) { return testam::kToolVersion; }

const char *testam_last_error(void) { return g_last_error.c_str(); }

const char *testam_status_name(testam_status status) {
  switch (status) {
  case TESTAM_OK:
    return "ok";
  case TESTAM_ERR_INVALID_ARGUMENT:
    return "invalid argument";
  case TESTAM_ERR_CONFIG:
    return "config error";
  case TESTAM_ERR_IO:
    return "i/o error";
  case TESTAM_ERR_FORMAT:
    return "format error";
  case TESTAM_ERR_NUMERIC:
    return "numeric failure";
  case TESTAM_ERR_INTERNAL:
    return "internal error";
  }
  return "unknown";
}

testam_status testam_set_max_threads(int threads) {
  return guarded([&] { testam::set_max_threads(threads); });
}

testam_status testam_config_new(testam_config_kind kind, const char *path,
                                testam_config **out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    if (kind != TESTAM_CONFIG_TRAIN && kind != TESTAM_CONFIG_SYNTHETIC)
      testam::fail(testam::ErrorKind::InvalidArgument, "unknown config kind");
    auto cfg = std::make_unique<testam_config>();
    cfg->kind = kind;
    cfg->doc = defaults_for(kind);
    if (path != nullptr)
      cfg->doc = testam::merge_strict(cfg->doc, testam::read_json_file(path));
    // Parse once so invalid values surface here rather than later.
    if (kind == TESTAM_CONFIG_TRAIN)
      (void)as_train(cfg.get());
    else
      (void)as_synthetic(cfg.get());
    *out = cfg.release();
  });
}

testam_status testam_config_set(testam_config *cfg, const char *assignment) {
  return guarded([&] {
    need(cfg, "config");
    need(assignment, "assignment");
    // Cross-field checks run when the config is used.
    testam::Json doc = cfg->doc;
    testam::apply_override(doc, assignment);
    cfg->doc = std::move(doc);
  });
}

testam_status testam_config_set_seed(testam_config *cfg, uint64_t seed) {
  return guarded([&] {
    need(cfg, "config");
    cfg->doc["seed"] = seed;
  });
}

testam_status testam_config_to_json(const testam_config *cfg, char *buf, size_t capacity,
                                    size_t *needed) {
  return guarded([&] {
    need(cfg, "config");
    const std::string text = cfg->doc.dump(2);
    if (needed != nullptr)
      *needed = text.size() + 1;
    if (buf == nullptr)
      return;
    if (capacity < text.size() + 1)
      testam::fail(testam::ErrorKind::InvalidArgument, "buffer too small");
    std::memcpy(buf, text.c_str(), text.size() + 1);
  });
}

void testam_config_free(testam_config *cfg) { delete cfg; }

testam_status testam_generate(const testam_config *synthetic, const char *out_dir) {
  return guarded([&] {
    need(out_dir, "out_dir");
    testam::run_generate(as_synthetic(synthetic), out_dir);
  });
}

testam_status testam_train(const testam_config *train, const char *data,
                           const char *out_dir, const char *resume,
                           testam_epoch_callback callback, void *user) {
  return guarded([&] {
    need(data, "data");
    need(out_dir, "out_dir");
    std::optional<std::filesystem::path> from;
    if (resume != nullptr)
      from = resume;
    testam::EpochLogger log;
    if (callback != nullptr)
      log = [callback, user](const testam::EpochRecord &r) {
        testam_epoch_info info{};
        info.epoch = r.epoch;
        info.step = r.step;
        info.lr = r.lr;
        info.loss = r.loss;
        info.regression = r.regression;
        info.worst = r.worst;
        info.best = r.best;
        info.train_mae = r.train_mae;
        info.val_mae = r.val_mae;
        for (int e = 0; e < 3; ++e)
          info.selection_share[e] = r.selection_share[e];
        info.seconds = r.seconds;
        callback(&info, user);
      };
    testam::run_train(as_train(train), data, out_dir, from, log);
  });
}

testam_status testam_eval(const char *checkpoint, const char *data, const char *out_dir,
                          testam_metrics *average) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(data, "data");
    need(out_dir, "out_dir");
    const testam::EvalOutputs out = testam::run_eval(checkpoint, data, out_dir);
    if (average != nullptr) {
      const testam::Metrics &m = out.report.average;
      *average = {m.mae, m.rmse, m.mape, static_cast<uint64_t>(m.count)};
    }
  });
}

testam_status testam_routes(const char *checkpoint, const char *data, const char *out_dir) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(data, "data");
    need(out_dir, "out_dir");
    testam::run_routes(checkpoint, data, out_dir);
  });
}

testam_status testam_model_load(const char *checkpoint, testam_model **out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    *out = nullptr;
    auto m = std::make_unique<testam_model>();
    m->model = testam::load_checkpoint(std::filesystem::path(checkpoint));
    *out = m.release();
  });
}

testam_status testam_model_parameter_count(const testam_model *model, uint64_t *out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = model->model->parameter_count();
  });
}

testam_status testam_model_num_nodes(const testam_model *model, int *out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = model->model->config().num_nodes;
  });
}

void testam_model_free(testam_model *model) { delete model; }

testam_status testam_parameter_count(const testam_config *train, int num_nodes,
                                     uint64_t *out) {
  return guarded([&] {
    need(out, "out");
    testam::TrainConfig cfg = as_train(train);
    cfg.model.num_nodes = num_nodes;
    testam::TestamModel model(cfg.model, testam::Scaler{}, cfg.seed);
    *out = model.parameter_count();
  });
}

} // extern "C"
