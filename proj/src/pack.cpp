// pack.cpp - nibble packing and the integer GEMM

#include "qlstm/pack.hpp"

namespace qlstm::int4 {

PackedNibbleMatrix PackedNibbleMatrix::pack(const Tensor<float>& w,
                                            const quant::ClipBounds<float>& bounds,
                                            int bits) {
  if (bits != 4) throw ConfigError("nibble packing is defined for 4-bit codes");
  if (w.rank() != 2) throw ShapeError("pack expects a matrix");
  if (bounds.neg != -bounds.pos)
    throw ConfigError("asymmetric bounds unsupported in the runtime path");
  quant::QuantSpec spec;
  spec.bits = 4;
  spec.level_mode = quant::LevelMode::kOdd;
  spec.symmetry = quant::Symmetry::kSymmetric;
  auto r = quant::quantize_codes(w, bounds, spec);

  PackedNibbleMatrix p;
  p.rows = w.rows();
  p.cols = w.cols();
  p.scale = r.step;
  p.bytes.assign(static_cast<std::size_t>((w.size() + 1) / 2), 0);
  for (Index f = 0; f < w.size(); ++f) {
    int code = r.codes[static_cast<std::size_t>(f)];
    std::uint8_t nib = static_cast<std::uint8_t>(code & 0x0f);
    if (f & 1)
      p.bytes[static_cast<std::size_t>(f >> 1)] |= static_cast<std::uint8_t>(nib << 4);
    else
      p.bytes[static_cast<std::size_t>(f >> 1)] |= nib;
  }
  return p;
}

Tensor<float> PackedNibbleMatrix::unpack() const {
  Tensor<float> out({rows, cols});
  for (Index f = 0; f < out.size(); ++f)
    out[f] = static_cast<float>(code_at(f)) * scale;
  return out;
}

QuantizedActivation QuantizedActivation::quantize(
    const Tensor<float>& x, const quant::ClipBounds<float>& bounds, int bits) {
  if (x.rank() != 2) throw ShapeError("activation quantization expects a matrix");
  quant::QuantSpec spec;
  spec.bits = bits;
  spec.level_mode = quant::LevelMode::kOdd;
  spec.symmetry = quant::Symmetry::kSymmetric;
  auto r = quant::quantize_codes(x, bounds, spec);
  QuantizedActivation a;
  a.rows = x.rows();
  a.cols = x.cols();
  a.scale = r.step;
  a.levels = spec.levels();
  a.codes = std::move(r.codes);
  return a;
}

Tensor<float> QuantizedActivation::dequantize() const {
  Tensor<float> out({rows, cols});
  for (Index f = 0; f < out.size(); ++f)
    out[f] = static_cast<float>(codes[static_cast<std::size_t>(f)]) * scale;
  return out;
}

Tensor<float> int_gemm(const QuantizedActivation& a, const PackedNibbleMatrix& w) {
  if (a.cols != w.rows)
    throw ShapeError("int_gemm inner dimensions disagree: " + std::to_string(a.cols) +
                     " vs " + std::to_string(w.rows));
  // |sum| <= k * max|a_code| * 7 must stay below 2^31
  const long long bound =
      static_cast<long long>(a.cols) * a.max_code() * 7;
  if (bound >= (1LL << 31))
    throw NumericError("int_gemm inner dimension too large for 32-bit accumulation");

  Tensor<float> out({a.rows, w.cols});
  const float s = a.scale * w.scale;
  std::vector<std::int8_t> wcol(static_cast<std::size_t>(w.rows));
  for (Index n = 0; n < w.cols; ++n) {
    for (Index k = 0; k < w.rows; ++k)
      wcol[static_cast<std::size_t>(k)] = static_cast<std::int8_t>(w.code_at(k, n));
    for (Index m = 0; m < a.rows; ++m) {
      const std::int8_t* arow = a.codes.data() + m * a.cols;
      std::int32_t acc = 0;
      for (Index k = 0; k < a.cols; ++k)
        acc += static_cast<std::int32_t>(arow[k]) *
               static_cast<std::int32_t>(wcol[static_cast<std::size_t>(k)]);
      out.at(m, n) = static_cast<float>(acc) * s;
    }
  }
  return out;
}

QuantizedActivation ActQuantizer::apply(const Tensor<float>& x) const {
  switch (kind) {
    case kFixed:
      return QuantizedActivation::quantize(
          x, quant::ClipBounds<float>::symmetric(alpha), bits);
    case kDynamicMax:
      return QuantizedActivation::quantize(x, quant::bounds_max(x), bits);
    case kNone:
      break;
  }
  throw ConfigError("activation quantizer not configured");
}

}  // namespace qlstm::int4
