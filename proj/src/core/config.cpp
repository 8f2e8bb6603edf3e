// SPDX-License-Identifier: Apache-2.0
#include "core/config.hpp"

#include "core/errors.hpp"

#include <fstream>

namespace testam {

namespace {

const char *mode_name(TimeEnhancedMode m) {
  return m == TimeEnhancedMode::PerSource ? "per_source" : "cross";
}

const char *gating_name(GatingInput g) {
  return g == GatingInput::LastStep ? "last_step" : "window_mean";
}

[[noreturn]] void config_error(const std::string &what) {
  fail(ErrorKind::Config, what);
}

bool same_kind(const Json &a, const Json &b) {
  if (a.is_number() && b.is_number()) {
    // An integer default only accepts integral values.
    if (a.is_number_integer() || a.is_number_unsigned())
      return b.is_number_integer() || b.is_number_unsigned();
    return true;
  }
  return a.type() == b.type();
}

std::string join(const std::string &prefix, const std::string &key) {
  return prefix.empty() ? key : prefix + "." + key;
}

Json merge_at(const Json &defaults, const Json &user, const std::string &prefix) {
  if (!defaults.is_object()) {
    if (!same_kind(defaults, user))
      config_error("config field '" + prefix + "' expects " +
                   std::string(defaults.type_name()) + ", got " + user.type_name());
    if (defaults.is_array() && defaults.size() != user.size())
      config_error("config field '" + prefix + "' expects " +
                   std::to_string(defaults.size()) + " elements");
    if (defaults.is_number_float() && user.is_number())
      return Json(user.get<double>());
    return user;
  }
  if (!user.is_object())
    config_error("config field '" + (prefix.empty() ? std::string("<root>") : prefix) +
                 "' expects an object");
  Json out = defaults;
  for (const auto &[key, value] : user.items()) {
    const std::string path = join(prefix, key);
    if (!defaults.contains(key))
      config_error("unknown config key '" + path + "'");
    out[key] = merge_at(defaults[key], value, path);
  }
  return out;
}

template <class T> T get(const Json &doc, const char *key) {
  return doc.at(key).get<T>();
}

TimeEnhancedMode parse_mode(const std::string &s) {
  if (s == "per_source")
    return TimeEnhancedMode::PerSource;
  if (s == "cross")
    return TimeEnhancedMode::Cross;
  config_error("model.time_enhanced_mode must be \"per_source\" or \"cross\", got \"" + s + "\"");
}

GatingInput parse_gating(const std::string &s) {
  if (s == "last_step")
    return GatingInput::LastStep;
  if (s == "window_mean")
    return GatingInput::WindowMean;
  config_error("model.gating_input must be \"last_step\" or \"window_mean\", got \"" +
               s + "\"");
}

Json ablation_json(const AblationConfig &a) {
  return {{"no_gating", a.no_gating},
          {"ensemble", a.ensemble},
          {"worst_only", a.worst_only},
          {"replaced_identity", a.replaced_identity},
          {"no_tim", a.no_tim},
          {"no_time_enhanced", a.no_time_enhanced}};
}

} // namespace

Json to_json(const ModelConfig &c) {
  return {{"num_nodes", c.num_nodes},
          {"steps_per_day", c.steps_per_day},
          {"in_steps", c.in_steps},
          {"out_steps", c.out_steps},
          {"hidden", c.hidden},
          {"memory_size", c.memory_size},
          {"memory_dim", c.memory_dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_hidden", c.ffn_hidden},
          {"tim_dim", c.tim_dim},
          {"dropout", c.dropout},
          {"time_enhanced_mode", mode_name(c.time_enhanced_mode)},
          {"share_label_tim", c.share_label_tim},
          {"gating_input", gating_name(c.gating_input)}};
}

Json to_json(const TrainConfig &c) {
  return {{"model", to_json(c.model)},
          {"ablation", ablation_json(c.model.ablation)},
          {"schedule",
           {{"lr_min", c.schedule.lr_min},
            {"lr_max", c.schedule.lr_max},
            {"warmup_steps", c.schedule.warmup_steps},
            {"restart_period", c.schedule.restart_period}}},
          {"optimizer",
           {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"loss_weights",
           {{"regression", c.loss.regression},
            {"worst", c.loss.worst},
            {"best", c.loss.best}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"q", c.q},
          {"seed", c.seed},
          {"patience", c.patience},
          {"grad_clip", c.grad_clip},
          {"mask_zero", c.mask_zero},
          {"split", {c.split[0], c.split[1], c.split[2]}}};
}

Json to_json(const SyntheticConfig &c) {
  return {{"n_nodes", c.n_nodes},         {"steps_per_day", c.steps_per_day},
          {"n_days", c.n_days},           {"n_isolated", c.n_isolated},
          {"n_event_nodes", c.n_event_nodes}, {"event_rate", c.event_rate},
          {"seed", c.seed},               {"noise_std", c.noise_std},
          {"v_max", c.v_max},             {"radius", c.radius},
          {"self_weight", c.self_weight}, {"start_epoch", c.start_epoch}};
}

TrainConfig train_config_from_json(const Json &user) {
  const Json doc = merge_strict(to_json(TrainConfig{}), user);
  TrainConfig c;
  const Json &m = doc.at("model");
  c.model.num_nodes = get<int>(m, "num_nodes");
  c.model.steps_per_day = get<int>(m, "steps_per_day");
  c.model.in_steps = get<int>(m, "in_steps");
  c.model.out_steps = get<int>(m, "out_steps");
  c.model.hidden = get<int>(m, "hidden");
  c.model.memory_size = get<int>(m, "memory_size");
  c.model.memory_dim = get<int>(m, "memory_dim");
  c.model.layers = get<int>(m, "layers");
  c.model.heads = get<int>(m, "heads");
  c.model.ffn_hidden = get<int>(m, "ffn_hidden");
  c.model.tim_dim = get<int>(m, "tim_dim");
  c.model.dropout = get<double>(m, "dropout");
  c.model.time_enhanced_mode = parse_mode(get<std::string>(m, "time_enhanced_mode"));
  c.model.share_label_tim = get<bool>(m, "share_label_tim");
  c.model.gating_input = parse_gating(get<std::string>(m, "gating_input"));
  const Json &a = doc.at("ablation");
  c.model.ablation.no_gating = get<bool>(a, "no_gating");
  c.model.ablation.ensemble = get<bool>(a, "ensemble");
  c.model.ablation.worst_only = get<bool>(a, "worst_only");
  c.model.ablation.replaced_identity = get<bool>(a, "replaced_identity");
  c.model.ablation.no_tim = get<bool>(a, "no_tim");
  c.model.ablation.no_time_enhanced = get<bool>(a, "no_time_enhanced");
  const Json &s = doc.at("schedule");
  c.schedule.lr_min = get<double>(s, "lr_min");
  c.schedule.lr_max = get<double>(s, "lr_max");
  c.schedule.warmup_steps = get<long>(s, "warmup_steps");
  c.schedule.restart_period = get<long>(s, "restart_period");
  const Json &o = doc.at("optimizer");
  c.adam.beta1 = get<double>(o, "beta1");
  c.adam.beta2 = get<double>(o, "beta2");
  c.adam.eps = get<double>(o, "eps");
  const Json &w = doc.at("loss_weights");
  c.loss.regression = get<double>(w, "regression");
  c.loss.worst = get<double>(w, "worst");
  c.loss.best = get<double>(w, "best");
  c.epochs = get<int>(doc, "epochs");
  c.batch_size = get<int>(doc, "batch_size");
  c.q = get<double>(doc, "q");
  c.seed = get<std::uint64_t>(doc, "seed");
  c.patience = get<int>(doc, "patience");
  c.grad_clip = get<double>(doc, "grad_clip");
  c.mask_zero = get<bool>(doc, "mask_zero");
  for (int i = 0; i < 3; ++i)
    c.split[i] = doc.at("split").at(i).get<double>();
  c.validate();
  return c;
}

SyntheticConfig synthetic_config_from_json(const Json &user) {
  const Json doc = merge_strict(to_json(SyntheticConfig{}), user);
  SyntheticConfig c;
  c.n_nodes = get<int>(doc, "n_nodes");
  c.steps_per_day = get<int>(doc, "steps_per_day");
  c.n_days = get<int>(doc, "n_days");
  c.n_isolated = get<int>(doc, "n_isolated");
  c.n_event_nodes = get<int>(doc, "n_event_nodes");
  c.event_rate = get<double>(doc, "event_rate");
  c.seed = get<std::uint64_t>(doc, "seed");
  c.noise_std = get<double>(doc, "noise_std");
  c.v_max = get<double>(doc, "v_max");
  c.radius = get<double>(doc, "radius");
  c.self_weight = get<double>(doc, "self_weight");
  c.start_epoch = get<std::int64_t>(doc, "start_epoch");
  c.validate();
  return c;
}

Json merge_strict(const Json &defaults, const Json &user) {
  return merge_at(defaults, user, "");
}

void apply_override(Json &doc, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    config_error("override '" + assignment + "' must have the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json *node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (!node->is_object() || !node->contains(part))
      config_error("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos)
      break;
    start = dot + 1;
  }
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded())
    value = text;
  *node = merge_at(*node, value, key);
}

Json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    config_error("cannot open config file " + path.string());
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded())
    config_error("config file " + path.string() + " is not valid JSON");
  return doc;
}

TrainConfig load_train_config(const std::optional<std::filesystem::path> &path,
                              const std::vector<std::string> &overrides) {
  Json doc = to_json(TrainConfig{});
  if (path)
    doc = merge_strict(doc, read_json_file(*path));
  for (const std::string &o : overrides)
    apply_override(doc, o);
  return train_config_from_json(doc);
}

SyntheticConfig load_synthetic_config(const std::optional<std::filesystem::path> &path,
                                      const std::vector<std::string> &overrides) {
  Json doc = to_json(SyntheticConfig{});
  if (path)
    doc = merge_strict(doc, read_json_file(*path));
  for (const std::string &o : overrides)
    apply_override(doc, o);
  return synthetic_config_from_json(doc);
}

std::uint64_t architecture_hash(const ModelConfig &cfg) {
  Json doc = to_json(cfg);
  doc["ablation"] = ablation_json(cfg.ablation);
  const std::string text = doc.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string first_difference(const Json &a, const Json &b) {
  if (a.is_object() && b.is_object()) {
    for (const auto &[key, value] : a.items()) {
      if (!b.contains(key))
        return key;
      const std::string sub = first_difference(value, b[key]);
      if (!sub.empty())
        return sub == "." ? key : key + "." + sub;
    }
    for (const auto &[key, value] : b.items())
      if (!a.contains(key))
        return key;
    return {};
  }
  return a == b ? std::string{} : std::string(".");
}

} // namespace testam
