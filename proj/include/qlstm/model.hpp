// model.hpp - architecture descriptions, presets, parameter/MAC accounting
//
// A ModelSpec is pure description: layer dimensions, component labels and the
// quantization policy. Networks are instantiated from it (network.hpp), and
// the accounting below works directly on the description so paper-scale
// models can be analyzed without allocating their parameters.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qlstm/quant.hpp"
#include "qlstm/tensor.hpp"

namespace qlstm::models {

enum class Component { kEncoder, kPrediction, kJoint };

inline const char* component_name(Component c) {
  switch (c) {
    case Component::kEncoder: return "encoder";
    case Component::kPrediction: return "prediction";
    case Component::kJoint: return "joint";
  }
  return "?";
}

// Which tensors get which quantizer. Weight specs use full 2^k grids during
// training; deployable policies switch them to odd grids so the packed
// runtime can express every level as code * scale.
struct QuantPolicy {
  std::string name = "fp32";
  quant::QuantSpec weights;      // scheme kNone = FP32 weights
  quant::QuantSpec activations;  // inputs / hidden states / FC inputs
  quant::FirstLayerPolicy first_layer = quant::FirstLayerPolicy::kLearnable;
  bool first_layer_weights_fp = false;  // keep the whole first LSTM layer FP
  bool fc_quantized = true;             // DBLSTM heads; joint stays FP always

  static QuantPolicy preset(const std::string& name);
};

struct LstmLayerDesc {
  int index = 0;
  Index in_dim = 0;
  Index hidden = 0;  // per direction
  bool bidirectional = true;
  double dropout = 0.0;  // on layer inputs
  Component comp = Component::kEncoder;

  Index out_dim() const { return bidirectional ? 2 * hidden : hidden; }
  // one time step, both directions: 4h x (in + h) MACs per direction
  double macs_per_step() const {
    return (bidirectional ? 2.0 : 1.0) * 4.0 * double(hidden) *
           double(in_dim + hidden);
  }
};

struct FcDesc {
  std::string name;
  Index in_dim = 0;
  Index out_dim = 0;
  bool tanh_act = false;
  Component comp = Component::kEncoder;
};

struct PredictionDesc {
  Index vocab = 0;
  Index embed = 0;
  Index hidden = 0;
  double dropout = 0.0;
};

struct JointDesc {
  Index enc_dim = 0;   // encoder output feeding the joint
  Index pred_dim = 0;  // prediction output feeding the joint
  Index proj = 0;      // shared projection width (combined multiplicatively)
  Index classes = 0;
};

// Gate-bias initialization. A positive forget bias lets cell states
// integrate from the start; a positive output bias exposes them, putting
// hidden states into their full (-1,1) range early.
struct InitConfig {
  double forget_bias = 1.0;
  double output_bias = 0.0;
};

struct ModelSpec {
  std::string name;
  double scale = 1.0;
  InitConfig init;
  Index input_dim = 0;
  Index output_dim = 0;
  std::vector<LstmLayerDesc> lstm;
  std::vector<FcDesc> fc;
  std::optional<PredictionDesc> prediction;
  std::optional<JointDesc> joint;
  QuantPolicy policy;

  // Hash of the architecture skeleton (dims and layer structure). The quant
  // policy and dropout are deliberately excluded: an FP32 checkpoint is a
  // valid starting point for QAT fine-tuning of the same architecture.
  std::uint64_t arch_hash() const;
};

// Paper presets: hmm300, hmm2000, rnnt. scale in (0,1] shrinks hidden/input
// dims proportionally, rounded to multiples of 8 (scale=1 keeps the exact
// paper dimensions); symbol inventories and output dims are unscaled.
ModelSpec build_preset(const std::string& name, double scale,
                       const QuantPolicy& policy);

// Desk-scale builders for the toy experiments (not paper presets).
ModelSpec build_dblstm_analog(Index input_dim, Index classes, int layers,
                              Index hidden, Index bottleneck, double dropout,
                              const QuantPolicy& policy);
ModelSpec build_prednet_analog(Index vocab, Index embed, Index hidden,
                               double dropout, const QuantPolicy& policy);

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

struct ParamRow {
  std::string name;
  Shape shape;
  Index count = 0;
  int precision_bits = 32;  // 32 = full precision
  Component comp = Component::kEncoder;
  bool is_bias = false;
};

struct ParamReport {
  std::vector<ParamRow> rows;
  Index total = 0;

  double fraction_component(Component c) const;
  double fraction_bits(int bits) const;  // over precision classes; sums to 1
  double fraction_quantized() const;     // anything below 32 bits
  double first_lstm_layer_fraction() const;
};

// Exact parameter counts by direct summation over the spec.
ParamReport param_report(const ModelSpec& spec);

// Per-layer multiply-accumulate counts for one utterance: encoder work is
// proportional to T; the prediction network runs beam * T * expansion steps
// (the beam expands ~`expansion` symbols per frame on average); the joint is
// evaluated once per (hypothesis, frame).
struct MacRow {
  std::string name;
  Component comp;
  double macs = 0;
  double calls = 0;           // kernel invocations (for per-call overheads)
  double macs_per_call = 0;   // utilization lookup key
  int lstm_index = -1;        // >= 0 for LSTM layers
};

struct MacCounts {
  std::vector<MacRow> rows;
  double component(Component c) const;
  double total() const;
  double first_lstm_layer() const;
};

MacCounts mac_counts(const ModelSpec& spec, Index seq_len, Index beam,
                     double expansion = 1.0);

}  // namespace qlstm::models
