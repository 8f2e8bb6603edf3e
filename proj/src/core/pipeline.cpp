// SPDX-License-Identifier: Apache-2.0
#include "core/pipeline.hpp"

#include "core/binary_io.hpp"
#include "core/errors.hpp"

#include <cstdio>
#include <fstream>

namespace testam {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    fail(ErrorKind::Io, "cannot create output directory " + dir.string());
}

void write_json(const Json &doc, const fs::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    fail(ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_crc(const fs::path &path) {
  const std::vector<char> data = read_file(path);
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc_of(data.data(), data.size()));
  return buf;
}

Json provenance(const std::string &command) {
  return {{"tool", "testam"}, {"version", kToolVersion}, {"command", command}};
}

struct EvalContext {
  Checkpoint ckpt;
  std::unique_ptr<TestamModel> model;
  Bundle data;
  PreparedData prepared;
};

EvalContext open_for_eval(const fs::path &checkpoint, const fs::path &data) {
  EvalContext ctx;
  ctx.ckpt = read_checkpoint(checkpoint);
  ctx.data = load_dataset(data);
  const ModelConfig &m = ctx.ckpt.config.model;
  const auto n = static_cast<int>(ctx.data.series.num_nodes());
  if (n != m.num_nodes)
    fail(ErrorKind::Config, "node count mismatch: dataset has N=" + std::to_string(n) +
                                ", checkpoint expects N=" + std::to_string(m.num_nodes));
  if (ctx.data.series.steps_per_day() != m.steps_per_day)
    fail(ErrorKind::Config,
         "interval mismatch: dataset has " +
             std::to_string(ctx.data.series.steps_per_day()) +
             " steps per day, checkpoint expects " + std::to_string(m.steps_per_day));
  ctx.model = load_checkpoint(ctx.ckpt);
  ctx.prepared = prepare_dataset(ctx.data.series, m.in_steps, m.out_steps,
                                 ctx.ckpt.config.split, ctx.ckpt.config.mask_zero,
                                 &ctx.ckpt.scaler);
  return ctx;
}

} // namespace

GenerateOutputs run_generate(const SyntheticConfig &cfg, const fs::path &out_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  const SyntheticData data = generate_synthetic(cfg);
  GenerateOutputs out{out_dir / "dataset.tstm", out_dir / "adjacency.csv",
                      out_dir / "provenance.json"};
  save_bundle(data.series, data.tags, out.bundle);

  std::ofstream adj(out.adjacency, std::ios::trunc);
  if (!adj)
    fail(ErrorKind::Io, "cannot write " + out.adjacency.string());
  const int n = data.network.num_nodes;
  adj << "node";
  for (int j = 0; j < n; ++j)
    adj << ',' << data.series.node_ids[j];
  adj << '\n';
  for (int i = 0; i < n; ++i) {
    adj << data.series.node_ids[i];
    for (int j = 0; j < n; ++j)
      adj << ',' << data.network.adjacency[static_cast<std::size_t>(i) * n + j];
    adj << '\n';
  }
  adj.close();

  Json prov = provenance("generate");
  prov["config"] = to_json(cfg);
  prov["seed"] = cfg.seed;
  prov["outputs"] = {{"bundle", out.bundle.filename().string()},
                     {"bundle_crc32", file_crc(out.bundle)},
                     {"adjacency", out.adjacency.filename().string()}};
  write_json(prov, out.provenance);
  return out;
}

TrainConfig bind_to_data(TrainConfig cfg, const GraphSignalSeries &series) {
  const int n = static_cast<int>(series.num_nodes());
  const int spd = series.steps_per_day();
  if (cfg.model.num_nodes != 0 && cfg.model.num_nodes != n)
    fail(ErrorKind::Config, "model.num_nodes is " + std::to_string(cfg.model.num_nodes) +
                                " but the dataset has " + std::to_string(n) + " nodes");
  if (cfg.model.num_nodes == 0)
    cfg.model.num_nodes = n;
  cfg.model.steps_per_day = spd;
  cfg.validate();
  cfg.model.validate();
  return cfg;
}

void write_history_csv(const TrainingHistory &h, const fs::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    fail(ErrorKind::Io, "cannot write " + path.string());
  out << "epoch,step,lr,loss,regression,worst,best,train_mae,val_mae,"
         "share_expert0,share_expert1,share_expert2\n";
  char buf[512];
  for (const EpochRecord &r : h.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f,%.6f,%.6f\n",
                  r.epoch, r.step, r.lr, r.loss, r.regression, r.worst, r.best,
                  r.train_mae, r.val_mae, r.selection_share[0], r.selection_share[1],
                  r.selection_share[2]);
    out << buf;
  }
}

TrainOutputs run_train(const TrainConfig &user_cfg, const fs::path &data,
                       const fs::path &out_dir, const std::optional<fs::path> &resume,
                       const EpochLogger &log) {
  const Bundle bundle = load_dataset(data);
  const TrainConfig cfg = bind_to_data(user_cfg, bundle.series);
  ensure_dir(out_dir);

  std::optional<Checkpoint> prior;
  if (resume) {
    prior = read_checkpoint(*resume);
    if (!prior->progress)
      fail(ErrorKind::Config, "checkpoint " + resume->string() +
                                  " carries no optimizer state to resume from");
  }
  const PreparedData prepared =
      prepare_dataset(bundle.series, cfg.model.in_steps, cfg.model.out_steps, cfg.split,
                      cfg.mask_zero, prior ? &prior->scaler : nullptr);
  TestamModel model(cfg.model, prepared.scaler, cfg.seed);
  TrainProgress progress;
  if (prior) {
    load_into(model, *prior);
    progress = *prior->progress;
  }

  TrainOutputs out;
  out.best_checkpoint = out_dir / "best.ckpt";
  out.last_checkpoint = out_dir / "last.ckpt";
  out.parameter_count = model.parameter_count();
  out.arch_hash = architecture_hash(cfg.model);

  Json snapshot = to_json(cfg);
  write_json(snapshot, out_dir / "config.json");

  TrainingHistory all;
  TrainHooks hooks;
  hooks.on_epoch = [&](const TrainingHistory &h, const TrainProgress &p) {
    all.epochs.push_back(h.epochs.back());
    save_checkpoint(model, cfg, &p, out.last_checkpoint);
    write_history_csv(all, out_dir / "history.csv");
    if (log)
      log(h.epochs.back());
  };
  out.history = train(model, prepared.split, cfg, &progress, hooks);
  save_checkpoint(model, cfg, nullptr, out.best_checkpoint);

  Json prov = provenance("train");
  prov["config"] = snapshot;
  prov["seed"] = cfg.seed;
  prov["data"] = {{"path", data.string()}, {"crc32", file_crc(data)}};
  prov["arch_hash"] = hex64(out.arch_hash);
  prov["parameter_count"] = out.parameter_count;
  if (resume)
    prov["resumed_from"] = resume->string();
  prov["best_epoch"] = out.history.best_epoch;
  prov["best_val_mae"] = out.history.best_val_mae;
  prov["stopped_early"] = out.history.stopped_early;
  prov["samples"] = {{"train", prepared.split.train.size()},
                     {"val", prepared.split.val.size()},
                     {"test", prepared.split.test.size()}};
  write_json(prov, out_dir / "provenance.json");
  return out;
}

EvalOutputs run_eval(const fs::path &checkpoint, const fs::path &data,
                     const fs::path &out_dir) {
  EvalContext ctx = open_for_eval(checkpoint, data);
  ensure_dir(out_dir);
  const int interval = ctx.data.series.interval_minutes;
  const Predictions pred =
      predict(*ctx.model, ctx.prepared.split.test, ctx.ckpt.config.batch_size);
  EvalOutputs out;
  out.report = horizon_report(pred, interval, default_horizon_minutes(interval));
  out.metrics_csv = out_dir / "metrics.csv";
  write_horizon_csv(out.report, out.metrics_csv);
  write_step_csv(out.report, out_dir / "metrics_per_step.csv");

  Json experts = Json::object();
  for (int e = 0; e < kNumExperts; ++e)
    if (pred.y_hat_expert[e].size() != 0)
      experts[std::to_string(e)] =
          to_json(horizon_report(pred.y, pred.y_hat_expert[e], pred.layout, interval,
                                 default_horizon_minutes(interval)));
  Json doc = to_json(out.report);
  doc["per_expert"] = experts;
  write_json(doc, out_dir / "metrics.json");

  Json prov = provenance("eval");
  prov["checkpoint"] = {{"path", checkpoint.string()}, {"crc32", file_crc(checkpoint)}};
  prov["data"] = {{"path", data.string()}, {"crc32", file_crc(data)}};
  prov["test_samples"] = ctx.prepared.split.test.size();
  write_json(prov, out_dir / "provenance.json");
  return out;
}

RoutesOutputs run_routes(const fs::path &checkpoint, const fs::path &data,
                         const fs::path &out_dir) {
  EvalContext ctx = open_for_eval(checkpoint, data);
  ensure_dir(out_dir);
  const auto &test = ctx.prepared.split.test;
  const Predictions pred = predict(*ctx.model, test, ctx.ckpt.config.batch_size);
  RoutesOutputs out;
  out.report = routing_report(pred, test, *ctx.model, ctx.data.series.steps_per_day(),
                              ctx.data.tags);
  out.report_json = out_dir / "routing.json";
  write_json(to_json(out.report), out.report_json);

  const auto &names = out.report.experts;
  write_share_plot(out.report.per_node, names, "expert share per node",
                   out_dir / "routing_nodes.svg");
  write_share_plot(out.report.per_hour, names, "expert share per hour of day",
                   out_dir / "routing_hours.svg");
  std::vector<int> plot_nodes = {0};
  if (ctx.data.tags) {
    std::vector<ShareRow> scen = out.report.per_class;
    scen.insert(scen.end(), out.report.per_event.begin(), out.report.per_event.end());
    write_share_plot(scen, names, "expert share per scenario", out_dir / "routing_scenarios.svg");
    const ScenarioTags &tags = *ctx.data.tags;
    for (std::size_t n = 0; n < tags.node_class.size(); ++n)
      if (tags.node_class[n] == NodeClass::Isolated) {
        plot_nodes.push_back(static_cast<int>(n));
        break;
      }
    for (std::size_t n = 0; n < tags.event_node.size(); ++n)
      if (tags.event_node[n] != 0) {
        plot_nodes.push_back(static_cast<int>(n));
        break;
      }
  }
  for (int n : plot_nodes)
    write_speed_plot(pred, test, n, names, out_dir / ("speed_node" + std::to_string(n) + ".svg"));

  Json prov = provenance("routes");
  prov["checkpoint"] = {{"path", checkpoint.string()}, {"crc32", file_crc(checkpoint)}};
  prov["data"] = {{"path", data.string()}, {"crc32", file_crc(data)}};
  write_json(prov, out_dir / "provenance.json");
  return out;
}

} // namespace testam
