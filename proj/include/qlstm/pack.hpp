// pack.hpp - nibble-packed INT4 weights, integer activations, integer GEMM
//
// The deployed weight form: signed 4-bit codes in [-7, +7] (15-level
// symmetric grid; -8 never occurs), two codes per byte with the low nibble
// holding the even flattened index, and one real scale per tensor such that
// value = code * scale. Packing uses the same grid arithmetic as the
// training-time fake quantizer, so unpack(pack(w)) reproduces fake_quant(w)
// bit for bit.
#pragma once

#include <cstdint>
#include <vector>

#include "qlstm/quant.hpp"

namespace qlstm::int4 {

struct PackedNibbleMatrix {
  Index rows = 0;
  Index cols = 0;
  float scale = 0;
  std::vector<std::uint8_t> bytes;  // ceil(rows*cols/2)

  static PackedNibbleMatrix pack(const Tensor<float>& w,
                                 const quant::ClipBounds<float>& bounds,
                                 int bits = 4);
  Tensor<float> unpack() const;

  int code_at(Index flat) const {
    std::uint8_t b = bytes[static_cast<std::size_t>(flat >> 1)];
    int nib = (flat & 1) ? (b >> 4) : (b & 0x0f);
    return nib >= 8 ? nib - 16 : nib;  // sign-extend
  }
  int code_at(Index r, Index c) const { return code_at(r * cols + c); }
};

// Integer activation codes on an odd symmetric grid (value = code * scale).
// Codes are carried as int8 regardless of bit-width; 4-bit level counts use
// the same storage (the footprint claim lives with the weights).
struct QuantizedActivation {
  Index rows = 0;
  Index cols = 0;
  float scale = 0;
  int levels = 0;
  std::vector<std::int8_t> codes;

  static QuantizedActivation quantize(const Tensor<float>& x,
                                      const quant::ClipBounds<float>& bounds,
                                      int bits);
  Tensor<float> dequantize() const;
  int max_code() const { return (levels - 1) / 2; }
};

// a [m x k] times w [k x n] with 32-bit integer accumulation and a single
// final multiply by scale_a * scale_w. The inner dimension is bounded so the
// accumulator provably cannot overflow given the operand code ranges.
Tensor<float> int_gemm(const QuantizedActivation& a, const PackedNibbleMatrix& w);

// How a runtime layer quantizes its activation stream.
struct ActQuantizer {
  enum Kind { kNone, kFixed, kDynamicMax } kind = kNone;
  float alpha = 1.0f;  // kFixed clip
  int bits = 4;

  QuantizedActivation apply(const Tensor<float>& x) const;
};

}  // namespace qlstm::int4
