// test_train.cpp - schedules, optimizers, checkpoints, the QAT loop
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qlstm/trainer.hpp"

using namespace qlstm;
using namespace qlstm::train;
using models::QuantPolicy;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::unique_ptr<Task> small_task(std::uint64_t seed = 3) {
  PatternTaskConfig cfg;
  cfg.classes = 3;
  cfg.feature_dim = 6;
  cfg.seq_len = 8;
  cfg.train_sequences = 24;
  cfg.holdout_sequences = 12;
  cfg.noise = 0.4;
  cfg.seed = seed;
  return make_pattern_task(cfg);
}

nn::Network<float> small_net(const std::string& policy, std::uint64_t seed = 5,
                             double dropout = 0.0) {
  auto spec = models::build_dblstm_analog(6, 3, 2, 8, 8, dropout,
                                          QuantPolicy::preset(policy));
  return nn::Network<float>(spec, seed);
}

TrainOptions quick_options(int epochs, std::uint64_t seed = 11) {
  TrainOptions o;
  o.optimizer.kind = OptKind::kSgdMomentum;
  o.optimizer.lr0 = 0.05;
  o.schedule.kind = ScheduleKind::kConstant;
  o.schedule.lr0 = 0.05;
  o.epochs = epochs;
  o.batch_size = 8;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("schedule worked examples") {
  LRSchedule anneal;
  anneal.kind = ScheduleKind::kStepAnneal;
  anneal.lr0 = 0.1;
  CHECK(lr_at(anneal, 9) == 0.1);
  CHECK(lr_at(anneal, 10) == doctest::Approx(0.1 / std::numbers::sqrt2).epsilon(1e-12));
  CHECK(lr_at(anneal, 12) ==
        doctest::Approx(0.1 * std::pow(1 / std::numbers::sqrt2, 3)).epsilon(1e-12));

  LRSchedule custom;
  custom.kind = ScheduleKind::kCustomDecreasing;
  custom.lr0 = 4e-4;
  custom.lr_min = 1e-5;
  custom.decay_epochs = 8;
  CHECK(lr_at(custom, 0) == 4e-4);
  CHECK(lr_at(custom, 8) == 1e-5);
  CHECK(lr_at(custom, 30) == 1e-5);
  CHECK(lr_at(custom, 4) == doctest::Approx((4e-4 + 1e-5) / 2).epsilon(1e-9));

  LRSchedule c;
  c.lr0 = 0.3;
  for (int e = 0; e < 40; ++e) CHECK(lr_at(c, e) == 0.3);

  CHECK_THROWS_AS(lr_at(c, -1), ConfigError);
}

TEST_CASE("schedule curve shapes: monotone decays, unimodal one-cycle") {
  for (auto kind : {ScheduleKind::kLinearDecayHalf, ScheduleKind::kGeometricDecayHalf,
                    ScheduleKind::kCustomDecreasing}) {
    LRSchedule s;
    s.kind = kind;
    s.lr0 = 0.1;
    s.total_epochs = 20;
    double prev = 1e9;
    for (int e = 0; e < 30; ++e) {
      double lr = lr_at(s, e);
      CHECK(lr > 0);
      CHECK(lr <= prev + 1e-15);
      prev = lr;
    }
  }
  LRSchedule lin;
  lin.kind = ScheduleKind::kLinearDecayHalf;
  lin.lr0 = 0.2;
  lin.total_epochs = 10;
  CHECK(lr_at(lin, 10) == doctest::Approx(0.1).epsilon(1e-12));

  LRSchedule oc;
  oc.kind = ScheduleKind::kOneCycle;
  oc.peak = 0.4;
  oc.total_epochs = 20;
  int sign_changes = 0;
  double prev_delta = 0;
  double prev = lr_at(oc, 0);
  for (int e = 1; e < 20; ++e) {
    double lr = lr_at(oc, e);
    double delta = lr - prev;
    if (prev_delta != 0 && ((delta < 0) != (prev_delta < 0))) ++sign_changes;
    prev_delta = delta;
    prev = lr;
  }
  CHECK(sign_changes == 1);  // up once, down once
  CHECK(lr_at(oc, 10) == doctest::Approx(0.4).epsilon(0.11));

  LRSchedule warm;
  warm.kind = ScheduleKind::kWarmupScaled;
  warm.lr0 = 0.8;
  warm.warmup_epochs = 10;
  CHECK(lr_at(warm, 0) < 0.1 * 0.8 + 1e-12);
  for (int e = 1; e < 10; ++e) CHECK(lr_at(warm, e) > lr_at(warm, e - 1));
  CHECK(lr_at(warm, 10) == 0.8);
}

TEST_CASE("sgd momentum matches the hand-computed closed form exactly") {
  nn::ParamStore<double> params;
  params.tensors.emplace("p", Tensor<double>::scalar(1.0));
  OptimizerSpec spec;
  spec.kind = OptKind::kSgdMomentum;
  spec.momentum = 0.9;
  Optimizer<double> opt(spec);

  // quadratic bowl L = p^2/2, g = p
  std::map<std::string, Tensor<double>> g;
  g.emplace("p", Tensor<double>::scalar(1.0));
  opt.step(params, g, 0.1);
  double v = 0.9 * 0.0 + 1.0;
  double expect = 1.0 - 0.1 * v;
  CHECK(params.at("p")[0] == expect);

  g.at("p")[0] = expect;  // gradient at the new point
  opt.step(params, g, 0.1);
  v = 0.9 * v + expect;
  expect = expect - 0.1 * v;
  CHECK(params.at("p")[0] == expect);
}

TEST_CASE("adamw step matches the hand-computed closed form exactly") {
  nn::ParamStore<double> params;
  params.tensors.emplace("p", Tensor<double>::scalar(1.0));
  OptimizerSpec spec;
  spec.kind = OptKind::kAdamW;
  spec.weight_decay = 0.01;
  Optimizer<double> opt(spec);

  std::map<std::string, Tensor<double>> g;
  g.emplace("p", Tensor<double>::scalar(1.0));
  opt.step(params, g, 0.1);

  double m = (1 - 0.9) * 1.0;
  double v = (1 - 0.999) * 1.0;
  double mhat = m / (1 - 0.9);
  double vhat = v / (1 - 0.999);
  double expect = 1.0 - 0.1 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.01 * 1.0);
  CHECK(params.at("p")[0] == expect);
}

TEST_CASE("bound parameters stay on their side of zero") {
  nn::ParamStore<double> params;
  params.tensors.emplace("bounds/x/pos", Tensor<double>::scalar(0.01));
  OptimizerSpec spec;
  spec.kind = OptKind::kSgdMomentum;
  spec.momentum = 0.0;
  Optimizer<double> opt(spec);
  std::map<std::string, Tensor<double>> g;
  g.emplace("bounds/x/pos", Tensor<double>::scalar(5.0));
  opt.step(params, g, 0.1);  // would push alpha_pos to -0.49
  CHECK(params.at("bounds/x/pos")[0] == 1e-3);
}

TEST_CASE("checkpoint round-trip is bit-exact; corruption is detected") {
  auto net = small_net("int4_sawb_bac", 21);
  Checkpoint c = snapshot(net, nullptr, 7, 0xabcdef);
  std::string path = tmp_path("qlstm_ck_test.qck");
  save_checkpoint(c, path);
  Checkpoint d = load_checkpoint(path, net.spec().arch_hash());
  CHECK(d.epoch == 7);
  CHECK(d.rng_state == 0xabcdef);
  CHECK(d.tensors.size() == c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    const auto& u = d.tensors.at(name);
    REQUIRE(u.same_shape(t));
    for (Index i = 0; i < t.size(); ++i) CHECK(u[i] == t[i]);
  }

  // truncation breaks the checksum
  auto bytes = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, bytes - 5);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  // flipped byte breaks the checksum
  save_checkpoint(c, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char x = 0x5a;
    f.write(&x, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("architecture hash gates loading; override allows it") {
  auto net = small_net("fp32");
  std::string path = tmp_path("qlstm_ck_hash.qck");
  save_checkpoint(snapshot(net, nullptr, 1, 0), path);
  CHECK_THROWS_AS(load_checkpoint(path, 0x1234), ConfigError);
  CHECK(load_checkpoint(path, 0x1234, true).epoch == 1);
  std::filesystem::remove(path);
}

TEST_CASE("fp32 checkpoint loads into a quantized spec of the same shape") {
  auto fp = small_net("fp32", 33);
  std::string path = tmp_path("qlstm_ck_fp32.qck");
  save_checkpoint(snapshot(fp, nullptr, 20, 0), path);

  auto qat = small_net("int4_sawb_bac", 99);
  Checkpoint c = load_checkpoint(path, qat.spec().arch_hash());
  load_into(qat, c);
  for (const auto& name : fp.param_order())
    if (name.rfind("bounds/", 0) != 0)
      CHECK(qat.params().at(name)[0] == fp.params().at(name)[0]);
  // learned bounds keep their fresh initialization (first layer PACT at 4)
  CHECK(qat.params().at("bounds/enc.l0.input/pos")[0] == 4.0f);
  std::filesystem::remove(path);
}

TEST_CASE("training is deterministic and epochs=0 returns initialization") {
  auto task = small_task();
  auto run = [&] {
    auto net = small_net("fp32", 17);
    return train_qat(net, *task, quick_options(3));
  };
  auto r1 = run(), r2 = run();
  REQUIRE(r1.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(r1.history[e].train_loss == r2.history[e].train_loss);
    CHECK(r1.history[e].holdout_loss == r2.history[e].holdout_loss);
    CHECK(r1.history[e].accuracy == r2.history[e].accuracy);
  }

  auto net = small_net("fp32", 17);
  auto r0 = train_qat(net, *task, quick_options(0));
  CHECK(r0.history.empty());
  CHECK(r0.checkpoint.epoch == 0);
  CHECK(!r0.diverged);
}

TEST_CASE("training actually learns the small pattern task") {
  auto task = small_task();
  auto net = small_net("fp32", 17);
  auto r = train_qat(net, *task, quick_options(12));
  REQUIRE(!r.diverged);
  CHECK(r.history.back().accuracy > 0.8);
  CHECK(r.history.back().holdout_loss < r.history.front().holdout_loss);
}

TEST_CASE("gradient flow audit: fixed bounds get none, learnable bounds some") {
  PatternTaskConfig cfg;
  cfg.classes = 3;
  cfg.feature_dim = 6;
  cfg.seq_len = 8;
  cfg.train_sequences = 8;
  cfg.holdout_sequences = 4;
  cfg.spike_prob = 0.2;  // guarantees clipped first-layer inputs
  cfg.spike_scale = 8.0;
  cfg.seed = 5;
  auto task = make_pattern_task(cfg);

  auto net = small_net("int4_sawb_bac", 71, 0.2);
  // fixed-bound sites own no learnable parameters at all
  for (const auto& name : net.param_order())
    if (name.rfind("bounds/", 0) == 0)
      CHECK(name.find(".l0.") != std::string::npos);  // only first layer learns

  Graph<float> g;
  auto bind = net.bind(g, true);
  Rng drop(3);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  Batch b = task->make_batch(idx, false);
  NodeId logits = task_forward(g, net, bind, b, drop, true, quant::FqMode::kQuantize);
  g.backward(g.cross_entropy(logits, b.targets));
  NodeId pos = bind.of("bounds/enc.l0.input/pos");
  REQUIRE(g.has_grad(pos));
  CHECK(g.grad(pos)[0] != 0.0f);
}

TEST_CASE("divergence aborts with the last good checkpoint") {
  auto task = small_task();
  auto net = small_net("fp32", 17);
  auto o = quick_options(6);
  o.optimizer.lr0 = 1e18;  // guaranteed blow-up
  o.schedule.lr0 = 1e18;
  auto r = train_qat(net, *task, o);
  CHECK(r.diverged);
  CHECK(r.checkpoint.epoch == 0);  // nothing completed cleanly
}

TEST_CASE("grammar task: valid symbols, deterministic, prednet trains") {
  GrammarTaskConfig cfg;
  cfg.vocab = 8;
  cfg.states = 4;
  cfg.seq_len = 12;
  cfg.train_sequences = 32;
  cfg.holdout_sequences = 16;
  cfg.seed = 9;
  auto task = make_grammar_task(cfg);
  std::vector<std::size_t> idx{0, 1, 2};
  Batch b = task->make_batch(idx, false);
  CHECK(b.symbols.size() == 12 * 3);
  CHECK(b.targets.size() == 11 * 3);
  for (int s : b.symbols) {
    CHECK(s >= 0);
    CHECK(s < 8);
  }
  // next-symbol targets really are the shifted stream
  for (Index t = 0; t + 1 < 12; ++t)
    for (Index i = 0; i < 3; ++i)
      CHECK(b.targets[static_cast<std::size_t>(t * 3 + i)] ==
            b.symbols[static_cast<std::size_t>((t + 1) * 3 + i)]);

  auto spec = models::build_prednet_analog(8, 6, 12, 0.0, QuantPolicy::preset("fp32"));
  nn::Network<float> net(spec, 13);
  auto o = quick_options(6);
  o.optimizer.lr0 = 0.15;
  o.schedule.lr0 = 0.15;
  auto r = train_qat(net, *task, o);
  REQUIRE(!r.diverged);
  // two admissible next symbols per state: even the stochastic ceiling is
  // beaten by chance-level start, so just require clear improvement
  CHECK(r.history.back().holdout_loss < 0.9 * r.history.front().holdout_loss);
}
