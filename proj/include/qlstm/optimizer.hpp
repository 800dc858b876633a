// optimizer.hpp - SGD with momentum and AdamW over a named parameter store
//
// Learnable clip bounds ("bounds/...") are ordinary parameters with two
// twists: an optional learning-rate multiplier, and a post-step projection
// keeping alpha_pos > 0 > alpha_neg (the ClipBounds invariant).
#pragma once

#include <map>
#include <string>

#include "qlstm/network.hpp"

namespace qlstm::train {

enum class OptKind { kSgdMomentum, kAdamW };

struct OptimizerSpec {
  OptKind kind = OptKind::kSgdMomentum;
  double lr0 = 0.1;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double bounds_lr_scale = 1.0;
  // largest move a clip bound may make per step; keeps a noisy clipped-set
  // gradient from jumping a bound far past the data edge, where its gradient
  // is identically zero and nothing could pull it back
  double bound_step_limit = 0.05;

  void validate() const {
    if (lr0 <= 0) throw ConfigError("optimizer lr must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw ConfigError("betas must be in (0,1)");
    if (weight_decay < 0 || bounds_lr_scale <= 0 || bound_step_limit <= 0)
      throw ConfigError(
          "weight_decay >= 0, bounds_lr_scale > 0, bound_step_limit > 0 required");
  }
};

template <class S>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec) : spec_(spec) { spec_.validate(); }

  const OptimizerSpec& spec() const { return spec_; }
  long long step_count() const { return steps_; }

  void step(nn::ParamStore<S>& params,
            const std::map<std::string, Tensor<S>>& grads, double lr) {
    ++steps_;
    for (const auto& [name, g] : grads) {
      Tensor<S>& p = params.at(name);
      if (!p.same_shape(g)) throw ShapeError("gradient/parameter shape mismatch");
      const bool is_bound = name.rfind("bounds/", 0) == 0;
      const double eff_lr = is_bound ? lr * spec_.bounds_lr_scale : lr;
      if (spec_.kind == OptKind::kSgdMomentum) {
        sgd_step(name, p, g, eff_lr, is_bound);
      } else {
        adamw_step(name, p, g, eff_lr, is_bound);
      }
      if (is_bound) project_bound(name, p);
    }
  }

  // Flattened state for checkpoints, keyed "opt/<slot>/<param>".
  std::map<std::string, Tensor<S>> state() const {
    std::map<std::string, Tensor<S>> out;
    for (const auto& [k, v] : slots_) out.emplace("opt/" + k, v);
    return out;
  }
  void load_state(const std::map<std::string, Tensor<S>>& st, long long steps) {
    slots_.clear();
    for (const auto& [k, v] : st) {
      if (k.rfind("opt/", 0) == 0) slots_.emplace(k.substr(4), v);
    }
    steps_ = steps;
  }

 private:
  Tensor<S>& slot(const std::string& key, const Shape& shape) {
    auto it = slots_.find(key);
    if (it == slots_.end()) it = slots_.emplace(key, Tensor<S>(shape)).first;
    return it->second;
  }

  // classic momentum with L2-coupled decay: v = mu*v + (g + wd*p); p -= lr*v.
  // Clip bounds take plain gradient steps: their gradient vanishes once the
  // clipped set empties, and momentum would coast them past the data edge
  // into a region where no gradient can ever pull them back.
  void sgd_step(const std::string& name, Tensor<S>& p, const Tensor<S>& g,
                double lr, bool is_bound) {
    if (is_bound) {
      const S cap = static_cast<S>(spec_.bound_step_limit);
      for (Index i = 0; i < p.size(); ++i)
        p[i] -= std::clamp(static_cast<S>(lr) * g[i], -cap, cap);
      return;
    }
    Tensor<S>& v = slot("m/" + name, p.shape());
    const S mu = static_cast<S>(spec_.momentum);
    const S wd = static_cast<S>(spec_.weight_decay);
    v.array() = mu * v.array() + (g.array() + wd * p.array());
    p.array() -= static_cast<S>(lr) * v.array();
  }

  // decoupled weight decay; bias-corrected moments
  void adamw_step(const std::string& name, Tensor<S>& p, const Tensor<S>& g,
                  double lr, bool is_bound) {
    Tensor<S>& m = slot("m/" + name, p.shape());
    Tensor<S>& v = slot("v/" + name, p.shape());
    const S b1 = static_cast<S>(spec_.beta1), b2 = static_cast<S>(spec_.beta2);
    m.array() = b1 * m.array() + (S(1) - b1) * g.array();
    v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
    const S c1 = S(1) - static_cast<S>(std::pow(spec_.beta1, double(steps_)));
    const S c2 = S(1) - static_cast<S>(std::pow(spec_.beta2, double(steps_)));
    const S wd = is_bound ? S(0) : static_cast<S>(spec_.weight_decay);
    p.array() -= static_cast<S>(lr) *
                 ((m.array() / c1) / ((v.array() / c2).sqrt() + static_cast<S>(spec_.eps)) +
                  wd * p.array());
  }

  void project_bound(const std::string& name, Tensor<S>& p) {
    constexpr S kFloor = static_cast<S>(1e-3);
    if (name.size() > 4 && name.substr(name.size() - 4) == "/pos") {
      if (p[0] < kFloor) p[0] = kFloor;
    } else if (name.size() > 4 && name.substr(name.size() - 4) == "/neg") {
      if (p[0] > -kFloor) p[0] = -kFloor;
    }
  }

  OptimizerSpec spec_;
  std::map<std::string, Tensor<S>> slots_;
  long long steps_ = 0;
};

}  // namespace qlstm::train
