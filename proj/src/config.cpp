// config.cpp - strict JSON configuration parsing

#include "qlstm/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace qlstm::cli {

using nlohmann::json;

namespace {

// Tracks the JSON pointer for error messages and rejects unknown keys.
struct Section {
  const json& j;
  std::string path;
  mutable std::set<std::string> known;

  Section(const json& j_, std::string path_) : j(j_), path(std::move(path_)) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
  }
  ~Section() = default;

  bool has(const char* key) const {
    known.insert(key);
    return j.contains(key);
  }
  const json& at(const char* key) const {
    known.insert(key);
    if (!j.contains(key)) throw ConfigError(path + "/" + key + ": required key missing");
    return j.at(key);
  }
  template <class T>
  T get(const char* key, T fallback) const {
    known.insert(key);
    if (!j.contains(key)) return fallback;
    try {
      return j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path + "/" + key + ": wrong type");
    }
  }
  void finish() const {
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError(path + "/" + k + ": unknown key");
  }
};

train::OptimizerSpec parse_optimizer(const json& j, const std::string& path) {
  Section s(j, path);
  train::OptimizerSpec o;
  std::string kind = s.get<std::string>("kind", "sgd");
  if (kind == "sgd") {
    o.kind = train::OptKind::kSgdMomentum;
  } else if (kind == "adamw") {
    o.kind = train::OptKind::kAdamW;
  } else {
    throw ConfigError(path + "/kind: unknown optimizer '" + kind + "'");
  }
  o.lr0 = s.get<double>("lr", 0.1);
  o.momentum = s.get<double>("momentum", 0.9);
  o.beta1 = s.get<double>("beta1", 0.9);
  o.beta2 = s.get<double>("beta2", 0.999);
  o.eps = s.get<double>("eps", 1e-8);
  o.weight_decay = s.get<double>("weight_decay", 0.0);
  o.bounds_lr_scale = s.get<double>("bounds_lr_scale", 1.0);
  o.bound_step_limit = s.get<double>("bound_step_limit", 0.05);
  s.finish();
  o.validate();
  return o;
}

train::LRSchedule parse_schedule(const json& j, const std::string& path,
                                 double default_lr) {
  Section s(j, path);
  train::LRSchedule sched;
  sched.kind = train::schedule_kind_from(s.get<std::string>("kind", "constant"));
  sched.lr0 = s.get<double>("lr0", default_lr);
  sched.anneal_factor = s.get<double>("anneal_factor", sched.anneal_factor);
  sched.anneal_start_epoch = s.get<int>("anneal_start_epoch", 10);
  sched.warmup_epochs = s.get<int>("warmup_epochs", 10);
  sched.peak = s.get<double>("peak", default_lr);
  sched.total_epochs = s.get<int>("total_epochs", 20);
  sched.lr_min = s.get<double>("lr_min", 1e-5);
  sched.decay_epochs = s.get<int>("decay_epochs", 8);
  s.finish();
  sched.validate();
  return sched;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // recover the line number from the byte offset
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(origin + ":" + std::to_string(line) + ":" +
                      std::to_string(col) + ": " + e.what());
  }

  RunConfig c;
  Section top(root, origin);

  if (top.has("model")) {
    Section m(top.at("model"), origin + "/model");
    c.model.preset = m.get<std::string>("preset", c.model.preset);
    c.model.scale = m.get<double>("scale", 1.0);
    c.model.layers = m.get<int>("layers", c.model.layers);
    c.model.hidden = m.get<Index>("hidden", c.model.hidden);
    c.model.bottleneck = m.get<Index>("bottleneck", c.model.bottleneck);
    c.model.embed = m.get<Index>("embed", c.model.embed);
    c.model.dropout = m.get<double>("dropout", c.model.dropout);
    c.model.input_dim = m.get<Index>("input_dim", 0);
    c.model.output_dim = m.get<Index>("output_dim", 0);
    c.model.forget_bias = m.get<double>("forget_bias", 1.0);
    c.model.output_bias = m.get<double>("output_bias", 0.0);
    m.finish();
  }
  if (top.has("quant")) {
    Section q(top.at("quant"), origin + "/quant");
    c.quant.policy = q.get<std::string>("policy", "fp32");
    if (q.has("first_layer"))
      c.quant.first_layer = q.get<std::string>("first_layer", "learnable");
    q.finish();
  }
  if (top.has("task")) {
    Section t(top.at("task"), origin + "/task");
    c.task.kind = t.get<std::string>("kind", "patterns");
    if (c.task.kind == "patterns") {
      auto& p = c.task.patterns;
      p.classes = t.get<int>("classes", p.classes);
      p.feature_dim = t.get<int>("feature_dim", p.feature_dim);
      p.seq_len = t.get<int>("seq_len", p.seq_len);
      p.train_sequences = t.get<int>("train_sequences", p.train_sequences);
      p.holdout_sequences = t.get<int>("holdout_sequences", p.holdout_sequences);
      p.noise = t.get<double>("noise", p.noise);
      p.class_separation = t.get<double>("class_separation", p.class_separation);
      p.spike_prob = t.get<double>("spike_prob", p.spike_prob);
      p.spike_scale = t.get<double>("spike_scale", p.spike_scale);
      p.min_segment = t.get<int>("min_segment", p.min_segment);
      p.max_segment = t.get<int>("max_segment", p.max_segment);
      p.seed = t.get<std::uint64_t>("seed", p.seed);
    } else if (c.task.kind == "grammar") {
      auto& g = c.task.grammar;
      g.vocab = t.get<int>("vocab", g.vocab);
      g.states = t.get<int>("states", g.states);
      g.seq_len = t.get<int>("seq_len", g.seq_len);
      g.train_sequences = t.get<int>("train_sequences", g.train_sequences);
      g.holdout_sequences = t.get<int>("holdout_sequences", g.holdout_sequences);
      g.seed = t.get<std::uint64_t>("seed", g.seed);
    } else {
      throw ConfigError(origin + "/task/kind: unknown task '" + c.task.kind + "'");
    }
    t.finish();
  }
  if (top.has("train")) {
    Section t(top.at("train"), origin + "/train");
    if (t.has("optimizer"))
      c.train.optimizer = parse_optimizer(t.at("optimizer"), origin + "/train/optimizer");
    c.train.schedule = t.has("schedule")
                           ? parse_schedule(t.at("schedule"),
                                            origin + "/train/schedule",
                                            c.train.optimizer.lr0)
                           : [&] {
                               train::LRSchedule s;
                               s.lr0 = c.train.optimizer.lr0;
                               return s;
                             }();
    c.train.epochs = t.get<int>("epochs", c.train.epochs);
    c.train.batch_size = t.get<Index>("batch_size", c.train.batch_size);
    c.train.seed = t.get<std::uint64_t>("seed", c.train.seed);
    c.train.init_seed = t.get<std::uint64_t>("init_seed", c.train.init_seed);
    t.finish();
  }
  c.out = top.get<std::string>("out", c.out);
  top.finish();

  if (c.train.epochs < 0) throw ConfigError(origin + "/train/epochs: must be >= 0");
  if (c.model.scale <= 0 || c.model.scale > 1)
    throw ConfigError(origin + "/model/scale: must be in (0,1]");
  return c;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::unique_ptr<train::Task> RunConfig::build_task() const {
  if (task.kind == "patterns") return train::make_pattern_task(task.patterns);
  return train::make_grammar_task(task.grammar);
}

models::ModelSpec RunConfig::build_model_spec() const {
  auto policy = models::QuantPolicy::preset(quant.policy);
  if (quant.first_layer) {
    if (*quant.first_layer == "learnable") {
      policy.first_layer = quant::FirstLayerPolicy::kLearnable;
      policy.first_layer_weights_fp = false;
    } else if (*quant.first_layer == "full_precision") {
      policy.first_layer = quant::FirstLayerPolicy::kFullPrecision;
      policy.first_layer_weights_fp = true;
    } else {
      throw ConfigError("quant/first_layer: expected learnable or full_precision");
    }
  }

  const bool symbol_task = task.kind == "grammar";
  const Index in_dim = model.input_dim > 0
                           ? model.input_dim
                           : (symbol_task ? model.embed : Index(task.patterns.feature_dim));
  const Index classes =
      model.output_dim > 0
          ? model.output_dim
          : (symbol_task ? Index(task.grammar.vocab) : Index(task.patterns.classes));

  models::InitConfig init{model.forget_bias, model.output_bias};
  if (model.preset == "dblstm_analog") {
    auto spec = models::build_dblstm_analog(in_dim, classes, model.layers,
                                            model.hidden, model.bottleneck,
                                            model.dropout, policy);
    spec.init = init;
    return spec;
  }
  if (model.preset == "prednet_analog") {
    auto spec = models::build_prednet_analog(
        symbol_task ? Index(task.grammar.vocab) : classes, model.embed,
        model.hidden, model.dropout, policy);
    spec.init = init;
    return spec;
  }
  // paper presets, with input/output adapted to the task when training
  models::ModelSpec spec = models::build_preset(model.preset, model.scale, policy);
  if (model.input_dim > 0 || !symbol_task) {
    spec.input_dim = in_dim;
    if (!spec.lstm.empty()) spec.lstm[0].in_dim = in_dim;
  }
  if ((model.output_dim > 0 || !symbol_task) && !spec.fc.empty()) {
    spec.fc.back().out_dim = classes;
    spec.output_dim = classes;
  }
  for (auto& l : spec.lstm) l.dropout = model.dropout;
  spec.init = init;
  return spec;
}

}  // namespace qlstm::cli
