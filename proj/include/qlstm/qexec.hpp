// qexec.hpp - true low-precision inference: packed weights + integer GEMM
//
// The executor mirrors the training-path forward op for op: full-precision
// layers run the identical float expressions, quantized layers replace the
// two GEMMs of the LSTM cell (and the FC products) with integer accumulation
// over activation/weight codes followed by one scale multiply. Weight
// matrices are packed pre-transposed ([in x 4h]) so the runtime consumes the
// canonical a[m x k] * w[k x n] integer GEMM.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "qlstm/network.hpp"
#include "qlstm/pack.hpp"

namespace qlstm::int4 {

// On-disk payload of a packed model (checkpoint container extended with
// packed sections). Learned bounds travel in `dense` alongside biases and
// any full-precision weights.
struct PackedFile {
  std::uint32_t version = 1;
  std::uint64_t arch_hash = 0;
  std::map<std::string, Tensor<float>> dense;
  std::map<std::string, PackedNibbleMatrix> packed;
};

void save_packed(const PackedFile& f, const std::string& path);
PackedFile load_packed(const std::string& path,
                       std::optional<std::uint64_t> expect_hash = std::nullopt,
                       bool allow_mismatch = false);

// Packs a trained network according to its quantization policy. Requires a
// runtime-compatible policy: 4-bit odd symmetric weight grids on every
// quantized tensor and symmetric activation bounds.
PackedFile pack_network(nn::Network<float>& net);

// Greedy decode through the training-path (fake-quant) forward, for
// cross-path agreement measurements. Re-runs the prefix each step, which is
// fine at desk scale and exercises exactly the training code.
std::vector<int> reference_greedy_decode(nn::Network<float>& net, int start_symbol,
                                         int steps);

class QuantizedExecutor {
 public:
  QuantizedExecutor(const models::ModelSpec& spec, const PackedFile& file);

  // Mirrors Network::forward_stack in eval mode: [T x B x D] in,
  // [(T*B) x out_dim] out (time-major rows).
  Tensor<float> forward_stack(const Tensor<float>& x) const;

  // Greedy autoregressive decode of the prediction-network analog.
  std::vector<int> greedy_decode(int start_symbol, int steps) const;

  const models::ModelSpec& spec() const { return spec_; }

 private:
  struct Direction {
    bool quantized = false;
    PackedNibbleMatrix wt, rt;  // [in x 4h], [h x 4h]
    Tensor<float> w, r;         // [4h x in], [4h x h] when full precision
    Tensor<float> bias;
    Index hidden = 0;
  };
  struct Layer {
    Direction fwd, bwd;
    bool bidirectional = false;
    ActQuantizer input_q;
    ActQuantizer hidden_q;
  };
  struct Fc {
    bool quantized = false;
    PackedNibbleMatrix wt;
    Tensor<float> w;
    Tensor<float> bias;
    ActQuantizer input_q;
    bool tanh_act = false;
  };

  Tensor<float> cell_pre(const Direction& d, const Tensor<float>& x_fp,
                         const QuantizedActivation* x_codes, const Tensor<float>& h,
                         const ActQuantizer& hidden_q) const;
  std::vector<Tensor<float>> run_layer_rt(const Layer& l,
                                          std::vector<Tensor<float>> xs) const;
  Tensor<float> run_fc_rt(const Fc& f, const Tensor<float>& x) const;

  models::ModelSpec spec_;
  std::vector<Layer> layers_;
  std::vector<Fc> fcs_;
  Tensor<float> embed_;  // prednet only
  Layer pred_;
  bool has_pred_ = false;
};

}  // namespace qlstm::int4
