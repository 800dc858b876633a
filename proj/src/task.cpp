// task.cpp - synthetic dataset generators

#include "qlstm/task.hpp"

#include "qlstm/rng.hpp"

namespace qlstm::train {

namespace {

class PatternTask final : public Task {
 public:
  explicit PatternTask(const PatternTaskConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed);
    protos_ = Tensor<float>::gaussian({cfg.classes, cfg.feature_dim}, rng, 1.0f);
    if (cfg.class_separation < 1.0) {
      auto shared = Tensor<float>::gaussian({cfg.feature_dim}, rng, 1.0f);
      const float sep = static_cast<float>(cfg.class_separation);
      const float mix = std::sqrt(std::max(0.0f, 1.0f - sep * sep));
      for (int cl = 0; cl < cfg.classes; ++cl)
        for (int d = 0; d < cfg.feature_dim; ++d)
          protos_.at(cl, d) = sep * protos_.at(cl, d) + mix * shared[d];
    }
    const int n = cfg.train_sequences + cfg.holdout_sequences;
    x_ = Tensor<float>({n, cfg.seq_len, cfg.feature_dim});
    labels_.resize(static_cast<std::size_t>(n) * cfg.seq_len);
    for (int s = 0; s < n; ++s) {
      int t = 0;
      while (t < cfg.seq_len) {
        int cls = static_cast<int>(rng.index(cfg.classes));
        int seg = cfg.min_segment +
                  static_cast<int>(rng.index(cfg.max_segment - cfg.min_segment + 1));
        for (int k = 0; k < seg && t < cfg.seq_len; ++k, ++t) {
          float scale = rng.uniform() < cfg.spike_prob
                            ? static_cast<float>(cfg.spike_scale)
                            : 1.0f;
          for (int d = 0; d < cfg.feature_dim; ++d) {
            float v = protos_.at(cls, d) +
                      static_cast<float>(cfg.noise * rng.normal());
            x_[(Index(s) * cfg.seq_len + t) * cfg.feature_dim + d] = scale * v;
          }
          labels_[static_cast<std::size_t>(s) * cfg.seq_len + t] = cls;
        }
      }
    }
  }

  std::size_t train_count() const override {
    return static_cast<std::size_t>(cfg_.train_sequences);
  }
  std::size_t holdout_count() const override {
    return static_cast<std::size_t>(cfg_.holdout_sequences);
  }
  bool symbol_task() const override { return false; }
  Index feature_dim() const override { return cfg_.feature_dim; }
  Index num_classes() const override { return cfg_.classes; }

  Batch make_batch(const std::vector<std::size_t>& idx, bool holdout) const override {
    Batch b;
    b.steps = cfg_.seq_len;
    b.batch = static_cast<Index>(idx.size());
    b.x = Tensor<float>({b.steps, b.batch, cfg_.feature_dim});
    b.targets.resize(static_cast<std::size_t>(b.steps * b.batch));
    const std::size_t base = holdout ? train_count() : 0;
    for (Index t = 0; t < b.steps; ++t) {
      for (Index i = 0; i < b.batch; ++i) {
        std::size_t seq = base + idx[static_cast<std::size_t>(i)];
        for (Index d = 0; d < cfg_.feature_dim; ++d)
          b.x[(t * b.batch + i) * cfg_.feature_dim + d] =
              x_[(Index(seq) * cfg_.seq_len + t) * cfg_.feature_dim + d];
        b.targets[static_cast<std::size_t>(t * b.batch + i)] =
            labels_[seq * static_cast<std::size_t>(cfg_.seq_len) +
                    static_cast<std::size_t>(t)];
      }
    }
    return b;
  }

 private:
  PatternTaskConfig cfg_;
  Tensor<float> protos_;
  Tensor<float> x_;  // [N x T x D]
  std::vector<int> labels_;
};

// Cyclic automaton: at each state two symbols are admissible; the choice is
// random, the successor state is a deterministic function of (state, pick).
class GrammarTask final : public Task {
 public:
  explicit GrammarTask(const GrammarTaskConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed ^ 0x67726d72ULL);
    emit_.resize(static_cast<std::size_t>(cfg.states) * 2);
    next_.resize(static_cast<std::size_t>(cfg.states) * 2);
    for (int s = 0; s < cfg.states; ++s) {
      int a = static_cast<int>(rng.index(cfg.vocab));
      int b = static_cast<int>(rng.index(cfg.vocab - 1));
      if (b >= a) ++b;  // two distinct admissible symbols
      emit_[2 * s] = a;
      emit_[2 * s + 1] = b;
      next_[2 * s] = static_cast<int>(rng.index(cfg.states));
      next_[2 * s + 1] = static_cast<int>(rng.index(cfg.states));
    }
    const int n = cfg.train_sequences + cfg.holdout_sequences;
    symbols_.resize(static_cast<std::size_t>(n) * cfg.seq_len);
    for (int q = 0; q < n; ++q) {
      int state = static_cast<int>(rng.index(cfg.states));
      for (int t = 0; t < cfg.seq_len; ++t) {
        int pick = rng.bernoulli(0.5) ? 1 : 0;
        symbols_[static_cast<std::size_t>(q) * cfg.seq_len + t] =
            emit_[2 * state + pick];
        state = next_[2 * state + pick];
      }
    }
  }

  std::size_t train_count() const override {
    return static_cast<std::size_t>(cfg_.train_sequences);
  }
  std::size_t holdout_count() const override {
    return static_cast<std::size_t>(cfg_.holdout_sequences);
  }
  bool symbol_task() const override { return true; }
  Index feature_dim() const override { return cfg_.vocab; }
  Index num_classes() const override { return cfg_.vocab; }

  Batch make_batch(const std::vector<std::size_t>& idx, bool holdout) const override {
    Batch b;
    b.steps = cfg_.seq_len;
    b.batch = static_cast<Index>(idx.size());
    b.symbols.resize(static_cast<std::size_t>(b.steps * b.batch));
    b.targets.resize(static_cast<std::size_t>((b.steps - 1) * b.batch));
    const std::size_t base = holdout ? train_count() : 0;
    for (Index t = 0; t < b.steps; ++t) {
      for (Index i = 0; i < b.batch; ++i) {
        std::size_t seq = base + idx[static_cast<std::size_t>(i)];
        int sym = symbols_[seq * static_cast<std::size_t>(cfg_.seq_len) +
                           static_cast<std::size_t>(t)];
        b.symbols[static_cast<std::size_t>(t * b.batch + i)] = sym;
        if (t > 0)
          b.targets[static_cast<std::size_t>((t - 1) * b.batch + i)] = sym;
      }
    }
    return b;
  }

 private:
  GrammarTaskConfig cfg_;
  std::vector<int> emit_, next_;
  std::vector<int> symbols_;
};

}  // namespace

std::unique_ptr<Task> make_pattern_task(const PatternTaskConfig& cfg) {
  if (cfg.classes < 2 || cfg.feature_dim < 1 || cfg.seq_len < 2 ||
      cfg.min_segment < 1 || cfg.max_segment < cfg.min_segment ||
      cfg.class_separation <= 0.0 || cfg.class_separation > 1.0)
    throw ConfigError("invalid pattern task configuration");
  return std::make_unique<PatternTask>(cfg);
}

std::unique_ptr<Task> make_grammar_task(const GrammarTaskConfig& cfg) {
  if (cfg.vocab < 3 || cfg.states < 2 || cfg.seq_len < 3)
    throw ConfigError("invalid grammar task configuration");
  return std::make_unique<GrammarTask>(cfg);
}

}  // namespace qlstm::train
