// network.hpp - instantiates a ModelSpec: parameters, quantizer sites,
// graph-building forwards, and the placement audit
//
// Parameter names are stable and flat ("enc.l0.fwd.W", "pred.embed", ...);
// learnable clip bounds live in the same store under "bounds/<site>/pos|neg"
// so checkpoints and the optimizer treat them uniformly.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qlstm/lstm.hpp"
#include "qlstm/model.hpp"

namespace qlstm::nn {

template <class S>
struct ParamStore {
  std::map<std::string, Tensor<S>> tensors;

  Tensor<S>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
};

// One row of the quantization placement audit.
struct AuditEntry {
  std::string tensor;
  std::string kind;       // "weight" | "bias" | "activation" | "state"
  std::string quantizer;  // "fp32" or QuantSpec::describe()
  bool quantized = false;
};

template <class S>
class Network {
 public:
  using Site = QuantSite<S>;

  Network(models::ModelSpec spec, std::uint64_t init_seed)
      : spec_(std::move(spec)) {
    Rng rng(init_seed);
    build_params(rng);
    build_sites();
  }

  const models::ModelSpec& spec() const { return spec_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const std::vector<std::string>& param_order() const { return param_order_; }
  std::map<std::string, Site>& sites() { return sites_; }

  // --- graph binding ---------------------------------------------------

  struct Binding {
    std::map<std::string, NodeId> leaves;
    NodeId of(const std::string& name) const {
      auto it = leaves.find(name);
      if (it == leaves.end()) throw ConfigError("unbound parameter: " + name);
      return it->second;
    }
  };

  Binding bind(Graph<S>& g, bool requires_grad = true) {
    Binding b;
    for (const auto& name : param_order_)
      b.leaves[name] = g.leaf(params_.at(name), requires_grad);
    for (auto& [name, site] : sites_) {
      if (site.learnable()) {
        site.alpha_pos_node = b.of("bounds/" + name + "/pos");
        site.alpha_neg_node = site.spec.symmetry == quant::Symmetry::kAsymmetric
                                  ? b.of("bounds/" + name + "/neg")
                                  : -1;
      }
    }
    return b;
  }

  // --- forward builders --------------------------------------------------

  // BiLSTM stack + FC heads. x is [T x B x D]; returns time-major stacked
  // logits [(T*B) x C].
  NodeId forward_stack(Graph<S>& g, const Binding& b, const Tensor<S>& x, Rng& rng,
                       bool training, FqMode mode = FqMode::kQuantize) {
    if (spec_.lstm.empty()) throw ConfigError("model has no LSTM stack");
    if (x.rank() != 3 || x.dim(2) != spec_.input_dim)
      throw ShapeError("forward_stack expects [T x B x " +
                       std::to_string(spec_.input_dim) + "] input");
    std::vector<NodeId> seq(static_cast<std::size_t>(x.dim(0)));
    for (Index t = 0; t < x.dim(0); ++t) seq[static_cast<std::size_t>(t)] =
        g.constant(x.slice0(t));
    for (const auto& l : spec_.lstm) seq = run_lstm_layer(g, b, l, seq, rng, training, mode);
    NodeId flat = g.concat_rows(seq);
    return run_heads(g, b, flat, mode);
  }

  // Prediction-network analog: embedded symbols -> unidirectional LSTM ->
  // readout. symbols are time-major ints [T*B]; logits cover steps 0..T-2.
  NodeId forward_prednet(Graph<S>& g, const Binding& b, const std::vector<int>& symbols,
                         Index steps, Index batch, Rng& rng, bool training,
                         FqMode mode = FqMode::kQuantize) {
    const auto& p = prediction_desc();
    if (static_cast<Index>(symbols.size()) != steps * batch)
      throw ShapeError("symbol buffer does not match steps*batch");
    NodeId embed = b.of("pred.embed");
    std::vector<NodeId> seq;
    for (Index t = 0; t + 1 < steps; ++t) {  // last symbol has no successor
      Tensor<S> onehot({batch, p.vocab});
      for (Index i = 0; i < batch; ++i) {
        int s = symbols[static_cast<std::size_t>(t * batch + i)];
        if (s < 0 || s >= p.vocab) throw ShapeError("symbol out of range");
        onehot.at(i, s) = S(1);
      }
      seq.push_back(g.matmul(g.constant(onehot), embed));
    }
    LayerGraph<S> layer;
    layer.bidirectional = false;
    layer.dropout = p.dropout;
    layer.fwd = cell_nodes(g, b, "pred", p.hidden, mode);
    layer.input_site = site_ptr("pred.input");
    layer.hidden_site = site_ptr("pred.hidden");
    seq = run_layer(g, seq, layer, rng, training, mode);
    return run_heads(g, b, g.concat_rows(seq), mode);
  }

  // --- introspection -----------------------------------------------------

  std::vector<AuditEntry> audit() const {
    std::vector<AuditEntry> out;
    auto desc = [](const Site* s) {
      return s ? s->spec.describe() : std::string("fp32");
    };
    for (const auto& name : param_order_) {
      if (name.rfind("bounds/", 0) == 0) continue;
      bool bias = name.size() > 2 && name.substr(name.size() - 2) == ".b";
      const Site* s = site_ptr_const(name);
      out.push_back({name, bias ? "bias" : "weight", desc(s), s != nullptr});
    }
    for (const auto& l : spec_.lstm) {
      std::string base = "enc.l" + std::to_string(l.index);
      const Site* in = site_ptr_const(base + ".input");
      const Site* hid = site_ptr_const(base + ".hidden");
      out.push_back({base + ".input", "activation", desc(in), in != nullptr});
      out.push_back({base + ".hidden", "activation", desc(hid), hid != nullptr});
      out.push_back({base + ".cell_state", "state", "fp32", false});
    }
    if (spec_.prediction) {
      const Site* in = site_ptr_const("pred.input");
      const Site* hid = site_ptr_const("pred.hidden");
      out.push_back({"pred.input", "activation", desc(in), in != nullptr});
      out.push_back({"pred.hidden", "activation", desc(hid), hid != nullptr});
      out.push_back({"pred.cell_state", "state", "fp32", false});
    }
    for (const auto& f : spec_.fc) {
      const Site* in = site_ptr_const(f.name + ".input");
      out.push_back({f.name + ".input", "activation", desc(in), in != nullptr});
    }
    out.push_back({"output.softmax", "activation", "fp32", false});
    return out;
  }

  void reset_clip_counters() {
    for (auto& [_, s] : sites_) s.clip_count = 0;
  }

  // Activation bound snapshot in a stable order (for metrics logging).
  std::vector<std::pair<std::string, quant::ClipBounds<S>>> bound_snapshot() const {
    std::vector<std::pair<std::string, quant::ClipBounds<S>>> out;
    for (const auto& [name, site] : sites_) {
      if (name.size() > 2 && name.substr(name.size() - 2) == ".W") continue;
      if (name.size() > 2 && name.substr(name.size() - 2) == ".R") continue;
      quant::ClipBounds<S> b = site.last_bounds;
      if (site.learnable()) {
        b.pos = params_.at("bounds/" + name + "/pos")[0];
        b.neg = site.spec.symmetry == quant::Symmetry::kAsymmetric
                    ? params_.at("bounds/" + name + "/neg")[0]
                    : -b.pos;
      } else if (site.spec.scheme == quant::Scheme::kBacFixed) {
        b = site.fixed;
      }
      out.emplace_back(name, b);
    }
    return out;
  }

  Site* site_ptr(const std::string& name) {
    auto it = sites_.find(name);
    return it == sites_.end() ? nullptr : &it->second;
  }
  const Site* site_ptr_const(const std::string& name) const {
    auto it = sites_.find(name);
    return it == sites_.end() ? nullptr : &it->second;
  }

 private:
  const models::PredictionDesc& prediction_desc() const {
    if (!spec_.prediction) throw ConfigError("model has no prediction network");
    return *spec_.prediction;
  }

  void add_param(const std::string& name, Tensor<S> t) {
    params_.tensors.emplace(name, std::move(t));
    param_order_.push_back(name);
  }

  void build_params(Rng& rng) {
    auto lstm_params = [&](const std::string& base, Index in, Index h) {
      const S wstd = S(1) / std::sqrt(S(in));
      const S rstd = S(1) / std::sqrt(S(h));
      add_param(base + ".W", Tensor<S>::gaussian({4 * h, in}, rng, wstd));
      add_param(base + ".R", Tensor<S>::gaussian({4 * h, h}, rng, rstd));
      Tensor<S> bias({4 * h});
      for (Index i = h; i < 2 * h; ++i)
        bias[i] = static_cast<S>(spec_.init.forget_bias);
      for (Index i = 3 * h; i < 4 * h; ++i)
        bias[i] = static_cast<S>(spec_.init.output_bias);
      add_param(base + ".b", std::move(bias));
    };
    for (const auto& l : spec_.lstm) {
      std::string base = "enc.l" + std::to_string(l.index);
      lstm_params(base + ".fwd", l.in_dim, l.hidden);
      if (l.bidirectional) lstm_params(base + ".bwd", l.in_dim, l.hidden);
    }
    if (spec_.prediction) {
      const auto& p = *spec_.prediction;
      add_param("pred.embed", Tensor<S>::gaussian({p.vocab, p.embed}, rng, S(0.5)));
      lstm_params("pred", p.embed, p.hidden);
    }
    for (const auto& f : spec_.fc) {
      const S wstd = S(1) / std::sqrt(S(f.in_dim));
      add_param(f.name + ".W", Tensor<S>::gaussian({f.out_dim, f.in_dim}, rng, wstd));
      add_param(f.name + ".b", Tensor<S>({f.out_dim}));
    }
    if (spec_.joint) {
      const auto& j = *spec_.joint;
      auto proj = [&](const std::string& name, Index out, Index in) {
        add_param(name + ".W",
                  Tensor<S>::gaussian({out, in}, rng, S(1) / std::sqrt(S(in))));
        add_param(name + ".b", Tensor<S>({out}));
      };
      proj("joint.enc_proj", j.proj, j.enc_dim);
      proj("joint.pred_proj", j.proj, j.pred_dim);
      proj("joint.out", j.classes, j.proj);
    }
  }

  void add_weight_site(const std::string& pname, bool first_layer) {
    const auto& pw = spec_.policy.weights;
    if (pw.scheme == quant::Scheme::kNone) return;
    if (first_layer && spec_.policy.first_layer_weights_fp) return;
    Site s;
    s.name = pname;
    s.spec = pw;
    sites_.emplace(pname, std::move(s));
  }

  void add_learnable_site(const std::string& name, const quant::QuantSpec& base,
                          double init_alpha, bool asymmetric) {
    Site s;
    s.name = name;
    s.spec = base;
    s.spec.scheme = quant::Scheme::kPact;
    s.spec.symmetry =
        asymmetric ? quant::Symmetry::kAsymmetric : quant::Symmetry::kSymmetric;
    sites_.emplace(name, std::move(s));
    add_param("bounds/" + name + "/pos", Tensor<S>::scalar(S(init_alpha)));
    if (asymmetric)
      add_param("bounds/" + name + "/neg", Tensor<S>::scalar(S(-init_alpha)));
  }

  void add_fixed_site(const std::string& name, const quant::QuantSpec& base,
                      double alpha) {
    Site s;
    s.name = name;
    s.spec = base;
    s.spec.scheme = quant::Scheme::kBacFixed;
    s.spec.symmetry = quant::Symmetry::kSymmetric;
    s.fixed = quant::ClipBounds<S>::symmetric(static_cast<S>(alpha));
    sites_.emplace(name, std::move(s));
  }

  void add_dynamic_site(const std::string& name, const quant::QuantSpec& base) {
    Site s;
    s.name = name;
    s.spec = base;
    s.spec.scheme = quant::Scheme::kMax;
    sites_.emplace(name, std::move(s));
  }

  // Activation sites for one LSTM layer, per the policy. PACT bounds start
  // at +-4 on the first layer's raw-feature inputs (large dynamic range) and
  // at +-0.6 deeper in the stack: below the dropout-scaled data edge, so the
  // clipped-set STE gradient engages immediately and walks them up to it.
  // Hidden-state bounds start at the cell's own range, +-1.
  void add_activation_sites(const std::string& base, int layer_index, double dropout) {
    const auto& pa = spec_.policy.activations;
    switch (pa.scheme) {
      case quant::Scheme::kNone:
        return;
      case quant::Scheme::kMax:
        add_dynamic_site(base + ".input", pa);
        add_dynamic_site(base + ".hidden", pa);
        return;
      case quant::Scheme::kPact:
        add_learnable_site(base + ".input", pa, layer_index == 0 ? 4.0 : 0.6,
                           pa.symmetry == quant::Symmetry::kAsymmetric);
        add_learnable_site(base + ".hidden", pa, 1.0,
                           pa.symmetry == quant::Symmetry::kAsymmetric);
        return;
      case quant::Scheme::kBacFixed: {
        for (auto role : {quant::TensorRole::kInput, quant::TensorRole::kHidden}) {
          std::string name =
              base + (role == quant::TensorRole::kInput ? ".input" : ".hidden");
          auto d = quant::bounds_bac(layer_index, role, dropout,
                                     spec_.policy.first_layer);
          switch (d.kind) {
            case quant::BacDecision::kFixedBounds:
              add_fixed_site(name, pa, d.alpha);
              break;
            case quant::BacDecision::kLearnable:
              add_learnable_site(name, pa,
                                 role == quant::TensorRole::kInput ? 4.0 : 1.0,
                                 true);
              break;
            case quant::BacDecision::kFullPrecision:
              break;
          }
        }
        return;
      }
      case quant::Scheme::kSawb:
        throw ConfigError("SAWB is a weight-bound scheme, not an activation scheme");
    }
  }

  void build_sites() {
    for (const auto& l : spec_.lstm) {
      std::string base = "enc.l" + std::to_string(l.index);
      const bool first = l.index == 0;
      add_weight_site(base + ".fwd.W", first);
      add_weight_site(base + ".fwd.R", first);
      if (l.bidirectional) {
        add_weight_site(base + ".bwd.W", first);
        add_weight_site(base + ".bwd.R", first);
      }
      add_activation_sites(base, l.index, l.dropout);
    }
    if (spec_.prediction) {
      const auto& pa = spec_.policy.activations;
      add_weight_site("pred.W", false);
      add_weight_site("pred.R", false);
      if (pa.scheme != quant::Scheme::kNone) {
        // embedded symbols have no dropout-pinned range: dynamic input scale
        if (pa.scheme == quant::Scheme::kPact) {
          add_learnable_site("pred.input", pa, 1.0, true);
          add_learnable_site("pred.hidden", pa, 1.0, true);
        } else {
          add_dynamic_site("pred.input", pa);
          add_fixed_site("pred.hidden", pa, 1.0);
        }
      }
    }
    for (const auto& f : spec_.fc) {
      const auto& pa = spec_.policy.activations;
      const bool fc_q = spec_.policy.fc_quantized &&
                        f.comp != models::Component::kJoint &&
                        spec_.policy.weights.scheme != quant::Scheme::kNone;
      if (fc_q) add_weight_site(f.name + ".W", false);
      if (spec_.policy.fc_quantized && f.comp != models::Component::kJoint &&
          pa.scheme != quant::Scheme::kNone) {
        // FC inputs are tanh-bounded; fixed unit clip under BAC
        if (pa.scheme == quant::Scheme::kBacFixed) {
          add_fixed_site(f.name + ".input", pa, 1.0);
        } else if (pa.scheme == quant::Scheme::kPact) {
          add_learnable_site(f.name + ".input", pa, 1.0,
                             pa.symmetry == quant::Symmetry::kAsymmetric);
        } else {
          add_dynamic_site(f.name + ".input", pa);
        }
      }
    }
  }

  CellNodes cell_nodes(Graph<S>& g, const Binding& b, const std::string& base,
                       Index hidden, FqMode mode) {
    CellNodes c;
    c.hidden = hidden;
    c.w = weight_node(g, b, base + ".W", mode);
    c.r = weight_node(g, b, base + ".R", mode);
    c.b = b.of(base + ".b");
    return c;
  }

  NodeId weight_node(Graph<S>& g, const Binding& b, const std::string& name,
                     FqMode mode) {
    NodeId n = b.of(name);
    Site* s = site_ptr(name);
    return s ? fake_quant(g, n, *s, mode) : n;
  }

  std::vector<NodeId> run_lstm_layer(Graph<S>& g, const Binding& b,
                                     const models::LstmLayerDesc& l,
                                     const std::vector<NodeId>& xs, Rng& rng,
                                     bool training, FqMode mode) {
    std::string base = "enc.l" + std::to_string(l.index);
    LayerGraph<S> layer;
    layer.bidirectional = l.bidirectional;
    layer.dropout = l.dropout;
    layer.fwd = cell_nodes(g, b, base + ".fwd", l.hidden, mode);
    if (l.bidirectional) layer.bwd = cell_nodes(g, b, base + ".bwd", l.hidden, mode);
    layer.input_site = site_ptr(base + ".input");
    layer.hidden_site = site_ptr(base + ".hidden");
    return run_layer(g, xs, layer, rng, training, mode);
  }

  NodeId run_heads(Graph<S>& g, const Binding& b, NodeId x, FqMode mode) {
    for (const auto& f : spec_.fc) {
      NodeId w = weight_node(g, b, f.name + ".W", mode);
      x = run_fc(g, x, w, b.of(f.name + ".b"), site_ptr(f.name + ".input"),
                 f.tanh_act, mode);
    }
    return x;
  }

  models::ModelSpec spec_;
  ParamStore<S> params_;
  std::vector<std::string> param_order_;
  std::map<std::string, Site> sites_;
};

}  // namespace qlstm::nn
