// model.cpp - preset construction, policy presets, parameter/MAC accounting

#include "qlstm/model.hpp"

#include <cmath>

namespace qlstm::models {

namespace {

Index scale_dim(Index d, double s) {
  if (s == 1.0) return d;
  double scaled = double(d) * s;
  Index m = static_cast<Index>(std::llround(scaled / 8.0)) * 8;
  return std::max<Index>(8, m);
}

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

}  // namespace

QuantPolicy QuantPolicy::preset(const std::string& name) {
  using quant::LevelMode;
  using quant::Scheme;
  using quant::Symmetry;
  QuantPolicy p;
  p.name = name;
  auto weights = [&](Scheme s, int bits, LevelMode lm) {
    p.weights.scheme = s;
    p.weights.bits = bits;
    p.weights.level_mode = lm;
    p.weights.symmetry = Symmetry::kSymmetric;
  };
  auto acts = [&](Scheme s, int bits, Symmetry sym) {
    p.activations.scheme = s;
    p.activations.bits = bits;
    p.activations.level_mode = LevelMode::kOdd;  // zero stays representable
    p.activations.symmetry = sym;
  };
  if (name == "fp32") {
    // all schemes stay kNone
  } else if (name == "int8_max") {
    weights(Scheme::kMax, 8, LevelMode::kFull);
    acts(Scheme::kMax, 8, Symmetry::kSymmetric);
  } else if (name == "int4_max") {
    weights(Scheme::kMax, 4, LevelMode::kFull);
    acts(Scheme::kMax, 4, Symmetry::kSymmetric);
  } else if (name == "int4_sawb_max") {
    weights(Scheme::kSawb, 4, LevelMode::kFull);
    acts(Scheme::kMax, 4, Symmetry::kSymmetric);
  } else if (name == "int4_sawb_pact") {
    weights(Scheme::kSawb, 4, LevelMode::kFull);
    acts(Scheme::kPact, 4, Symmetry::kAsymmetric);
  } else if (name == "int4_sawb_pact_sym") {
    weights(Scheme::kSawb, 4, LevelMode::kFull);
    acts(Scheme::kPact, 4, Symmetry::kSymmetric);
  } else if (name == "int4_sawb_bac") {
    weights(Scheme::kSawb, 4, LevelMode::kFull);
    acts(Scheme::kBacFixed, 4, Symmetry::kSymmetric);
    p.first_layer = quant::FirstLayerPolicy::kLearnable;
  } else if (name == "int4_deploy") {
    // packed-runtime compatible: odd weight grid, fixed activation bounds,
    // first layer and FC heads in full precision
    weights(Scheme::kSawb, 4, LevelMode::kOdd);
    acts(Scheme::kBacFixed, 4, Symmetry::kSymmetric);
    p.first_layer = quant::FirstLayerPolicy::kFullPrecision;
    p.first_layer_weights_fp = true;
    p.fc_quantized = false;
  } else {
    throw ConfigError("unknown quantization policy preset: " + name);
  }
  return p;
}

ModelSpec build_preset(const std::string& name, double scale,
                       const QuantPolicy& policy) {
  if (scale <= 0.0 || scale > 1.0)
    throw ConfigError("preset scale must be in (0, 1]");
  ModelSpec m;
  m.name = name;
  m.scale = scale;
  m.policy = policy;

  auto dblstm = [&](int layers, Index in_dim) {
    m.input_dim = scale_dim(in_dim, scale);
    m.output_dim = 32000;
    const Index h = scale_dim(512, scale);
    const Index bottleneck = scale_dim(256, scale);
    for (int i = 0; i < layers; ++i) {
      LstmLayerDesc l;
      l.index = i;
      l.in_dim = i == 0 ? m.input_dim : 2 * h;
      l.hidden = h;
      l.bidirectional = true;
      l.dropout = 0.25;
      m.lstm.push_back(l);
    }
    m.fc.push_back({"fc0", 2 * h, bottleneck, true, Component::kEncoder});
    m.fc.push_back({"fc1", bottleneck, m.output_dim, false, Component::kEncoder});
  };

  if (name == "hmm300") {
    dblstm(4, 140);
  } else if (name == "hmm2000") {
    dblstm(6, 260);
  } else if (name == "rnnt") {
    m.input_dim = scale_dim(340, scale);  // 240 features + 100-dim i-vectors
    m.output_dim = 46;                    // character inventory
    const Index h = scale_dim(640, scale);
    for (int i = 0; i < 6; ++i) {
      LstmLayerDesc l;
      l.index = i;
      l.in_dim = i == 0 ? m.input_dim : 2 * h;
      l.hidden = h;
      l.bidirectional = true;
      l.dropout = 0.2;
      m.lstm.push_back(l);
    }
    PredictionDesc p;
    p.vocab = 46;
    p.embed = scale_dim(10, scale);
    p.hidden = scale_dim(768, scale);
    p.dropout = 0.2;
    m.prediction = p;
    JointDesc j;
    j.enc_dim = 2 * h;
    j.pred_dim = p.hidden;
    j.proj = scale_dim(256, scale);
    j.classes = 46;
    m.joint = j;
  } else {
    throw ConfigError("unknown model preset: " + name);
  }
  return m;
}

ModelSpec build_dblstm_analog(Index input_dim, Index classes, int layers,
                              Index hidden, Index bottleneck, double dropout,
                              const QuantPolicy& policy) {
  ModelSpec m;
  m.name = "dblstm_analog";
  m.input_dim = input_dim;
  m.output_dim = classes;
  m.policy = policy;
  for (int i = 0; i < layers; ++i) {
    LstmLayerDesc l;
    l.index = i;
    l.in_dim = i == 0 ? input_dim : 2 * hidden;
    l.hidden = hidden;
    l.bidirectional = true;
    l.dropout = dropout;
    m.lstm.push_back(l);
  }
  m.fc.push_back({"fc0", 2 * hidden, bottleneck, true, Component::kEncoder});
  m.fc.push_back({"fc1", bottleneck, classes, false, Component::kEncoder});
  return m;
}

ModelSpec build_prednet_analog(Index vocab, Index embed, Index hidden,
                               double dropout, const QuantPolicy& policy) {
  ModelSpec m;
  m.name = "prednet_analog";
  m.input_dim = embed;
  m.output_dim = vocab;
  m.policy = policy;
  PredictionDesc p;
  p.vocab = vocab;
  p.embed = embed;
  p.hidden = hidden;
  p.dropout = dropout;
  m.prediction = p;
  // FP32 readout head (plays the role the joint plays at full scale)
  m.fc.push_back({"head", hidden, vocab, false, Component::kJoint});
  return m;
}

std::uint64_t ModelSpec::arch_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv_mix(h, static_cast<std::uint64_t>(input_dim));
  fnv_mix(h, static_cast<std::uint64_t>(output_dim));
  for (const auto& l : lstm) {
    fnv_mix(h, 1);
    fnv_mix(h, static_cast<std::uint64_t>(l.in_dim));
    fnv_mix(h, static_cast<std::uint64_t>(l.hidden));
    fnv_mix(h, l.bidirectional ? 2 : 1);
  }
  for (const auto& f : fc) {
    fnv_mix(h, 2);
    fnv_mix(h, static_cast<std::uint64_t>(f.in_dim));
    fnv_mix(h, static_cast<std::uint64_t>(f.out_dim));
    fnv_mix(h, f.tanh_act ? 1 : 0);
  }
  if (prediction) {
    fnv_mix(h, 3);
    fnv_mix(h, static_cast<std::uint64_t>(prediction->vocab));
    fnv_mix(h, static_cast<std::uint64_t>(prediction->embed));
    fnv_mix(h, static_cast<std::uint64_t>(prediction->hidden));
  }
  if (joint) {
    fnv_mix(h, 4);
    fnv_mix(h, static_cast<std::uint64_t>(joint->enc_dim));
    fnv_mix(h, static_cast<std::uint64_t>(joint->pred_dim));
    fnv_mix(h, static_cast<std::uint64_t>(joint->proj));
    fnv_mix(h, static_cast<std::uint64_t>(joint->classes));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

namespace {

int weight_bits(const ModelSpec& m, bool first_lstm_layer) {
  if (m.policy.weights.scheme == quant::Scheme::kNone) return 32;
  if (first_lstm_layer && m.policy.first_layer_weights_fp) return 32;
  return m.policy.weights.bits;
}

}  // namespace

ParamReport param_report(const ModelSpec& m) {
  ParamReport r;
  auto push = [&](const std::string& name, Shape shape, int bits, Component comp,
                  bool bias) {
    ParamRow row;
    row.name = name;
    row.count = shape_numel(shape);
    row.shape = std::move(shape);
    row.precision_bits = bits;
    row.comp = comp;
    row.is_bias = bias;
    r.total += row.count;
    r.rows.push_back(std::move(row));
  };

  for (const auto& l : m.lstm) {
    const int wb = weight_bits(m, l.index == 0);
    const std::string base = "enc.l" + std::to_string(l.index);
    for (const char* dir : {"fwd", "bwd"}) {
      if (!l.bidirectional && std::string(dir) == "bwd") continue;
      push(base + "." + dir + ".W", {4 * l.hidden, l.in_dim}, wb, l.comp, false);
      push(base + "." + dir + ".R", {4 * l.hidden, l.hidden}, wb, l.comp, false);
      push(base + "." + dir + ".b", {4 * l.hidden}, 32, l.comp, true);
    }
  }
  for (const auto& f : m.fc) {
    const int wb = (m.policy.fc_quantized && f.comp != Component::kJoint)
                       ? weight_bits(m, false)
                       : 32;
    push(f.name + ".W", {f.out_dim, f.in_dim}, wb, f.comp, false);
    push(f.name + ".b", {f.out_dim}, 32, f.comp, true);
  }
  if (m.prediction) {
    const auto& p = *m.prediction;
    const int wb =
        m.policy.weights.scheme == quant::Scheme::kNone ? 32 : m.policy.weights.bits;
    push("pred.embed", {p.vocab, p.embed}, 32, Component::kPrediction, false);
    push("pred.W", {4 * p.hidden, p.embed}, wb, Component::kPrediction, false);
    push("pred.R", {4 * p.hidden, p.hidden}, wb, Component::kPrediction, false);
    push("pred.b", {4 * p.hidden}, 32, Component::kPrediction, true);
  }
  if (m.joint) {
    const auto& j = *m.joint;  // always full precision (<1% of parameters)
    push("joint.enc_proj.W", {j.proj, j.enc_dim}, 32, Component::kJoint, false);
    push("joint.enc_proj.b", {j.proj}, 32, Component::kJoint, true);
    push("joint.pred_proj.W", {j.proj, j.pred_dim}, 32, Component::kJoint, false);
    push("joint.pred_proj.b", {j.proj}, 32, Component::kJoint, true);
    push("joint.out.W", {j.classes, j.proj}, 32, Component::kJoint, false);
    push("joint.out.b", {j.classes}, 32, Component::kJoint, true);
  }
  return r;
}

double ParamReport::fraction_component(Component c) const {
  Index n = 0;
  for (const auto& row : rows)
    if (row.comp == c) n += row.count;
  return double(n) / double(total);
}

double ParamReport::fraction_bits(int bits) const {
  Index n = 0;
  for (const auto& row : rows)
    if (row.precision_bits == bits) n += row.count;
  return double(n) / double(total);
}

double ParamReport::fraction_quantized() const {
  Index n = 0;
  for (const auto& row : rows)
    if (row.precision_bits < 32) n += row.count;
  return double(n) / double(total);
}

double ParamReport::first_lstm_layer_fraction() const {
  Index n = 0;
  for (const auto& row : rows)
    if (row.name.rfind("enc.l0.", 0) == 0) n += row.count;
  return double(n) / double(total);
}

// ---------------------------------------------------------------------------
// MAC accounting
// ---------------------------------------------------------------------------

MacCounts mac_counts(const ModelSpec& m, Index seq_len, Index beam,
                     double expansion) {
  if (seq_len < 1 || beam < 1)
    throw ConfigError("mac_counts needs seq_len >= 1 and beam >= 1");
  MacCounts mc;
  const double t = double(seq_len);
  for (const auto& l : m.lstm) {
    MacRow row;
    row.name = "enc.l" + std::to_string(l.index);
    row.comp = l.comp;
    row.calls = t * (l.bidirectional ? 2.0 : 1.0);
    row.macs = l.macs_per_step() * t;
    row.macs_per_call = row.macs / row.calls;
    row.lstm_index = l.index;
    mc.rows.push_back(row);
  }
  for (const auto& f : m.fc) {
    MacRow row;
    row.name = f.name;
    row.comp = f.comp;
    row.calls = t;
    row.macs = double(f.in_dim) * double(f.out_dim) * t;
    row.macs_per_call = row.macs / row.calls;
    mc.rows.push_back(row);
  }
  if (m.prediction) {
    const auto& p = *m.prediction;
    MacRow row;
    row.name = "pred.lstm";
    row.comp = Component::kPrediction;
    row.calls = double(beam) * t * expansion;
    row.macs = row.calls * 4.0 * double(p.hidden) * double(p.embed + p.hidden);
    row.macs_per_call = row.macs / row.calls;
    mc.rows.push_back(row);
  }
  if (m.joint) {
    const auto& j = *m.joint;
    MacRow row;
    row.name = "joint";
    row.comp = Component::kJoint;
    row.calls = double(beam) * t;
    row.macs = row.calls * (double(j.enc_dim) * double(j.proj) +
                            double(j.pred_dim) * double(j.proj) +
                            double(j.proj) * double(j.classes));
    row.macs_per_call = row.macs / row.calls;
    mc.rows.push_back(row);
  }
  return mc;
}

double MacCounts::component(Component c) const {
  double s = 0;
  for (const auto& r : rows)
    if (r.comp == c) s += r.macs;
  return s;
}

double MacCounts::total() const {
  double s = 0;
  for (const auto& r : rows) s += r.macs;
  return s;
}

double MacCounts::first_lstm_layer() const {
  for (const auto& r : rows)
    if (r.lstm_index == 0) return r.macs;
  return 0;
}

}  // namespace qlstm::models
