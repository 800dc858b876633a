// trainer.cpp - QAT training loop

#include "qlstm/trainer.hpp"

namespace qlstm::train {

NodeId task_forward(Graph<float>& g, nn::Network<float>& net,
                    const nn::Network<float>::Binding& bind, const Batch& batch,
                    Rng& dropout_rng, bool training, quant::FqMode mode) {
  if (net.spec().prediction && net.spec().lstm.empty()) {
    return net.forward_prednet(g, bind, batch.symbols, batch.steps, batch.batch,
                               dropout_rng, training, mode);
  }
  return net.forward_stack(g, bind, batch.x, dropout_rng, training, mode);
}

Checkpoint snapshot(const nn::Network<float>& net, const Optimizer<float>* opt,
                    std::uint32_t epoch, std::uint64_t rng_state) {
  Checkpoint c;
  c.arch_hash = net.spec().arch_hash();
  c.epoch = epoch;
  c.rng_state = rng_state;
  c.tensors = net.params().tensors;
  if (opt) {
    c.opt_steps = static_cast<std::uint64_t>(opt->step_count());
    for (auto& [k, v] : opt->state()) c.tensors.emplace(k, v);
  }
  return c;
}

void load_into(nn::Network<float>& net, const Checkpoint& c) {
  for (const auto& name : net.param_order()) {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) {
      if (name.rfind("bounds/", 0) == 0) continue;  // fresh clip bounds
      throw ConfigError("checkpoint is missing parameter: " + name);
    }
    Tensor<float>& dst = net.params().at(name);
    if (!dst.same_shape(it->second))
      throw ConfigError("checkpoint shape mismatch for " + name + ": " +
                        shape_str(it->second.shape()) + " vs " +
                        shape_str(dst.shape()));
    dst = it->second;
  }
}

namespace {

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order,
                                            Index batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < order.size();) {
    std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - at);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(at + take));
    at += take;
  }
  return out;
}

double batch_accuracy(const Tensor<float>& logits, const std::vector<int>& targets,
                      long long* correct, long long* total) {
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    *correct += best == targets[static_cast<std::size_t>(r)];
    ++*total;
  }
  return double(*correct) / double(*total);
}

}  // namespace

std::pair<double, double> evaluate(nn::Network<float>& net, const Task& task,
                                   Index batch_size) {
  std::vector<std::size_t> order(task.holdout_count());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double loss_sum = 0;
  long long frames = 0, correct = 0, total = 0;
  Rng unused(0);
  for (const auto& idx : chunk(order, batch_size)) {
    Batch b = task.make_batch(idx, true);
    Graph<float> g;
    auto bind = net.bind(g, false);
    NodeId logits = task_forward(g, net, bind, b, unused, false,
                                 quant::FqMode::kQuantize);
    NodeId loss = g.cross_entropy(logits, b.targets);
    const Index rows = g.value(logits).rows();
    loss_sum += double(g.value(loss)[0]) * double(rows);
    frames += rows;
    batch_accuracy(g.value(logits), b.targets, &correct, &total);
  }
  return {loss_sum / double(frames), double(correct) / double(total)};
}

TrainResult train_qat(nn::Network<float>& net, const Task& task,
                      const TrainOptions& o) {
  o.optimizer.validate();
  o.schedule.validate();
  if (o.epochs < 0 || o.batch_size < 1)
    throw ConfigError("train: epochs >= 0 and batch_size >= 1 required");

  Optimizer<float> opt(o.optimizer);
  Rng data_rng(o.seed);
  TrainResult result;
  result.checkpoint = snapshot(net, &opt, 0, data_rng.state());
  if (o.epochs == 0) return result;

  std::vector<std::size_t> order(task.train_count());
  for (int epoch = 0; epoch < o.epochs; ++epoch) {
    net.reset_clip_counters();
    auto perm = data_rng.fork(static_cast<std::uint64_t>(epoch) + 1)
                    .permutation(task.train_count());
    auto batches = chunk(perm, o.batch_size);
    Rng drop_rng(o.seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));

    double loss_sum = 0;
    long long frames = 0;
    try {
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const double lr =
            lr_at(o.schedule, epoch, double(bi) / double(batches.size()));
        Batch b = task.make_batch(batches[bi], false);
        Graph<float> g;
        auto bind = net.bind(g, true);
        NodeId logits =
            task_forward(g, net, bind, b, drop_rng, true, quant::FqMode::kQuantize);
        NodeId loss = g.cross_entropy(logits, b.targets);
        g.backward(loss);

        std::map<std::string, Tensor<float>> grads;
        for (const auto& [name, leaf] : bind.leaves)
          if (g.has_grad(leaf)) grads.emplace(name, g.grad(leaf));
        opt.step(net.params(), grads, lr);

        const Index rows = g.value(logits).rows();
        loss_sum += double(g.value(loss)[0]) * double(rows);
        frames += rows;
      }
    } catch (const NumericError&) {
      result.diverged = true;  // keep the last good checkpoint
      return result;
    }

    auto [hold_loss, accuracy] = evaluate(net, task, o.batch_size);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr_at(o.schedule, epoch, 0.0);
    m.train_loss = loss_sum / double(frames);
    m.holdout_loss = hold_loss;
    m.accuracy = accuracy;
    for (const auto& [site, bounds] : net.bound_snapshot())
      m.bounds.push_back({site, double(bounds.pos), double(bounds.neg)});
    result.history.push_back(std::move(m));
    result.checkpoint =
        snapshot(net, &opt, static_cast<std::uint32_t>(epoch + 1), data_rng.state());
  }
  return result;
}

}  // namespace qlstm::train
