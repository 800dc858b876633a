// task.hpp - seeded synthetic tasks for the desk-scale experiments
//
// Two generated datasets:
//  * patterns - framewise sequence classification for the bidirectional
//    stacks: each frame is a class prototype plus Gaussian noise, classes
//    switch at random segment boundaries, and occasional frames are scaled
//    up hard ("spikes") so the raw input stream has the large dynamic range
//    that makes first-layer quantization interesting.
//  * grammar - next-symbol prediction over strings from a small cyclic
//    automaton, for the unidirectional prediction-network analog.
#pragma once

#include <memory>
#include <vector>

#include "qlstm/tensor.hpp"

namespace qlstm::train {

// One assembled batch, time-major. Stack tasks fill `x`; symbol tasks fill
// `symbols` (steps*batch ints). `targets` matches the logits the model
// produces: frames for stacks, next symbols (steps-1 rows) for prednets.
struct Batch {
  Tensor<float> x;
  std::vector<int> symbols;
  Index steps = 0;
  Index batch = 0;
  std::vector<int> targets;
};

class Task {
 public:
  virtual ~Task() = default;
  virtual std::size_t train_count() const = 0;
  virtual std::size_t holdout_count() const = 0;
  virtual Batch make_batch(const std::vector<std::size_t>& idx, bool holdout) const = 0;
  virtual bool symbol_task() const = 0;
  virtual Index feature_dim() const = 0;  // feature width / vocab size
  virtual Index num_classes() const = 0;
};

struct PatternTaskConfig {
  int classes = 8;
  int feature_dim = 16;
  int seq_len = 20;
  int train_sequences = 192;
  int holdout_sequences = 64;
  double noise = 0.5;
  // 1.0: fully distinct class prototypes; smaller values mix every prototype
  // with a shared direction, shrinking inter-class margins
  double class_separation = 1.0;
  double spike_prob = 0.02;  // per frame: scale the whole frame up
  double spike_scale = 5.0;
  int min_segment = 4;
  int max_segment = 9;
  std::uint64_t seed = 1;
};

std::unique_ptr<Task> make_pattern_task(const PatternTaskConfig& cfg);

struct GrammarTaskConfig {
  int vocab = 12;
  int states = 6;
  int seq_len = 24;
  int train_sequences = 256;
  int holdout_sequences = 64;
  std::uint64_t seed = 1;
};

std::unique_ptr<Task> make_grammar_task(const GrammarTaskConfig& cfg);

}  // namespace qlstm::train
