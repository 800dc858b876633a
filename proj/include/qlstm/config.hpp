// config.hpp - run configuration: strict JSON with a published schema
//
// Unknown keys are rejected everywhere. Parse errors carry line/column;
// semantic errors carry the JSON pointer path of the offending key (a parsed
// document no longer has lines). The full schema is documented in README.md.
#pragma once

#include <memory>
#include <optional>
#include <string>

#include "qlstm/model.hpp"
#include "qlstm/optimizer.hpp"
#include "qlstm/schedule.hpp"
#include "qlstm/task.hpp"

namespace qlstm::cli {

struct ModelConfig {
  std::string preset = "dblstm_analog";
  double scale = 1.0;
  int layers = 4;           // analog builders only
  Index hidden = 32;        // per direction
  Index bottleneck = 16;
  Index embed = 8;          // prednet analog
  double dropout = 0.25;
  Index input_dim = 0;   // 0: take the task's feature width
  Index output_dim = 0;  // 0: take the task's class count
  double forget_bias = 1.0;
  double output_bias = 0.0;
};

struct QuantConfig {
  std::string policy = "fp32";
  std::optional<std::string> first_layer;  // "learnable" | "full_precision"
};

struct TaskConfig {
  std::string kind = "patterns";
  train::PatternTaskConfig patterns;
  train::GrammarTaskConfig grammar;
};

struct TrainSection {
  train::OptimizerSpec optimizer;
  train::LRSchedule schedule;
  int epochs = 20;
  Index batch_size = 16;
  std::uint64_t seed = 7;
  std::uint64_t init_seed = 1;
};

struct RunConfig {
  ModelConfig model;
  QuantConfig quant;
  TaskConfig task;
  TrainSection train;
  std::string out = "runs/out";

  std::unique_ptr<train::Task> build_task() const;
  // Model spec with input/output dims adapted to the task.
  models::ModelSpec build_model_spec() const;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

}  // namespace qlstm::cli
