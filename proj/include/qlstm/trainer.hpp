// trainer.hpp - the QAT training loop over a Network<float> and a Task
#pragma once

#include <vector>

#include "qlstm/checkpoint.hpp"
#include "qlstm/network.hpp"
#include "qlstm/optimizer.hpp"
#include "qlstm/schedule.hpp"
#include "qlstm/task.hpp"

namespace qlstm::train {

struct BoundLog {
  std::string site;
  double pos = 0;
  double neg = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double holdout_loss = 0;
  double accuracy = 0;
  std::vector<BoundLog> bounds;
};

struct TrainOptions {
  OptimizerSpec optimizer;
  LRSchedule schedule;
  int epochs = 20;
  Index batch_size = 16;
  std::uint64_t seed = 7;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  bool diverged = false;
  Checkpoint checkpoint;  // final state, or the last good one on divergence
};

// Builds the task-appropriate forward and returns the logits node.
NodeId task_forward(Graph<float>& g, nn::Network<float>& net,
                    const nn::Network<float>::Binding& bind, const Batch& batch,
                    Rng& dropout_rng, bool training, quant::FqMode mode);

// Full state snapshot: parameters (incl. learned bounds) and optimizer slots.
Checkpoint snapshot(const nn::Network<float>& net, const Optimizer<float>* opt,
                    std::uint32_t epoch, std::uint64_t rng_state);

// Copies matching tensors from a checkpoint into the network. Model
// parameters must all be present with matching shapes; "bounds/" entries are
// optional (an FP32 checkpoint has none - fine-tuning starts them fresh).
void load_into(nn::Network<float>& net, const Checkpoint& c);

// Deterministic epoch loop: seeded shuffling and dropout, per-epoch holdout
// loss/accuracy, bound tracking, divergence abort with the last good state.
TrainResult train_qat(nn::Network<float>& net, const Task& task,
                      const TrainOptions& options);

// Holdout evaluation only (loss, accuracy).
std::pair<double, double> evaluate(nn::Network<float>& net, const Task& task,
                                   Index batch_size);

}  // namespace qlstm::train
