// quant.hpp - linear quantizers: MAX, SAWB, PACT, fixed bound-aware clipping
//
// A quantizer maps a real tensor onto L uniformly spaced levels spanning a
// clip interval [alpha_neg, alpha_pos]:
//   L = 2^k        ("full")  - the classic k-bit grid
//   L = 2^k - 1    ("odd")   - one level fewer, so symmetric intervals put a
//                              level exactly at zero (dropout produces a large
//                              zero mass; misaligned grids turn it into bias)
// Elements are clamped to the interval and snapped to the nearest level,
// ties rounding away from zero. The backward rule is the straight-through
// estimator: identity inside the open clip interval, zero outside, with the
// boundary gradients routed to the (possibly learnable) clip bounds.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "qlstm/graph.hpp"
#include "qlstm/tensor.hpp"

namespace qlstm::quant {

enum class Scheme { kNone, kMax, kSawb, kPact, kBacFixed };
enum class LevelMode { kFull, kOdd };
enum class Symmetry { kSymmetric, kAsymmetric };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kNone: return "none";
    case Scheme::kMax: return "max";
    case Scheme::kSawb: return "sawb";
    case Scheme::kPact: return "pact";
    case Scheme::kBacFixed: return "bac_fixed";
  }
  return "?";
}

struct QuantSpec {
  int bits = 4;
  LevelMode level_mode = LevelMode::kFull;
  Symmetry symmetry = Symmetry::kSymmetric;
  Scheme scheme = Scheme::kNone;

  int levels() const {
    return level_mode == LevelMode::kFull ? (1 << bits) : (1 << bits) - 1;
  }
  void validate() const {
    if (bits < 2 || bits > 8)
      throw ConfigError("quantizer bits must be in 2..8, got " + std::to_string(bits));
  }
  std::string describe() const {
    if (scheme == Scheme::kNone) return "fp32";
    return std::string("int") + std::to_string(bits) + "/" + scheme_name(scheme) +
           (level_mode == LevelMode::kOdd ? "/odd" : "/full") +
           (symmetry == Symmetry::kAsymmetric ? "/asym" : "");
  }
};

template <class S>
struct ClipBounds {
  S pos = S(1);
  S neg = S(-1);

  static ClipBounds symmetric(S alpha) { return {alpha, -alpha}; }
  static ClipBounds asymmetric(S neg, S pos) { return {pos, neg}; }

  void validate() const {
    if (!(neg < S(0)) || !(S(0) < pos))
      throw ConfigError("clip bounds must satisfy alpha_neg < 0 < alpha_pos");
  }
};

template <class S>
struct QuantStats {
  S mean_abs = 0;  // E|y|
  S mean_sq = 0;   // E y^2
  S max_abs = 0;

  static QuantStats compute(const Tensor<S>& y) {
    if (y.size() == 0) throw ShapeError("stats of empty tensor");
    QuantStats s;
    s.mean_abs = y.array().abs().mean();
    s.mean_sq = y.array().square().mean();
    s.max_abs = y.array().abs().maxCoeff();
    return s;
  }
};

// ---------------------------------------------------------------------------
// Level grid and snapping
// ---------------------------------------------------------------------------

// Symmetric grids are zero-centered: levels are c * (step/2) for signed
// integers c of fixed parity (even for odd-level grids, odd for full grids),
// so negation maps the level set onto itself bit-exactly and odd-grid values
// reconstruct as signed_code * step - the identity the packed runtime relies
// on. The price is that the extreme levels sit within one ulp of the clip
// bound rather than exactly on it. Asymmetric grids anchor at the lower
// bound: level_i = lo + i * step.
template <class S>
struct LevelGrid {
  S lo, hi, step, halfstep;
  int levels;
  bool symmetric;

  static LevelGrid make(const ClipBounds<S>& b, const QuantSpec& spec) {
    spec.validate();
    b.validate();
    if (spec.symmetry == Symmetry::kSymmetric && b.neg != -b.pos)
      throw ConfigError("symmetric quantizer requires alpha_neg == -alpha_pos");
    LevelGrid g;
    g.levels = spec.levels();
    g.lo = b.neg;
    g.hi = b.pos;
    g.step = (g.hi - g.lo) / static_cast<S>(g.levels - 1);
    g.halfstep = g.step / 2;
    g.symmetric = spec.symmetry == Symmetry::kSymmetric;
    return g;
  }

  // level value from a doubled code (symmetric) or an index (asymmetric)
  S level_sym(int c2) const { return static_cast<S>(c2) * halfstep; }
  S level_asym(int i) const { return lo + step * static_cast<S>(i); }

  // True when candidate level a beats b for input y: smaller distance wins,
  // exact ties go to the level farther from zero, then to the positive one.
  static bool prefers(S y, S a, S b) {
    S da = std::abs(y - a), db = std::abs(y - b);
    if (da != db) return da < db;
    S ma = std::abs(a), mb = std::abs(b);
    if (ma != mb) return ma > mb;
    return a > b;
  }

  // Snap one value to the grid. The arithmetic index is only a seed; the
  // final choice compares real-domain distances, so behavior matches a
  // brute-force nearest-level search over the explicit level set bit for
  // bit. code_out receives the doubled code (symmetric) or index.
  S snap(S y, int* code_out = nullptr) const {
    S c = std::clamp(y, lo, hi);
    if (symmetric) {
      const int cmax = levels - 1;
      const int parity = cmax & 1;
      double s2 = static_cast<double>(c) / static_cast<double>(halfstep);
      int a = 2 * static_cast<int>(std::floor((s2 - parity) / 2.0)) + parity;
      int b = a + 2;
      a = std::clamp(a, -cmax, cmax);
      b = std::clamp(b, -cmax, cmax);
      int best = prefers(c, level_sym(a), level_sym(b)) ? a : b;
      if (code_out) *code_out = best;
      return level_sym(best);
    }
    int i0 = static_cast<int>(std::floor((c - lo) / step));
    i0 = std::clamp(i0, 0, levels - 2);
    int best = prefers(c, level_asym(i0), level_asym(i0 + 1)) ? i0 : i0 + 1;
    if (code_out) *code_out = best;
    return level_asym(best);
  }
};

template <class S>
Tensor<S> quantize_linear(const Tensor<S>& y, const ClipBounds<S>& bounds,
                          const QuantSpec& spec) {
  require_finite(y, "quantize_linear input");
  LevelGrid<S> g = LevelGrid<S>::make(bounds, spec);
  Tensor<S> out(y.shape());
  for (Index i = 0; i < y.size(); ++i) out[i] = g.snap(y[i]);
  return out;
}

// Quantize to signed integer codes (value = code * step). Requires an odd
// symmetric grid; this is the form the packed integer runtime consumes.
template <class S>
struct CodeResult {
  Tensor<S> values;
  std::vector<std::int8_t> codes;
  S step;
};

template <class S>
CodeResult<S> quantize_codes(const Tensor<S>& y, const ClipBounds<S>& bounds,
                             const QuantSpec& spec) {
  if (spec.level_mode != LevelMode::kOdd || spec.symmetry != Symmetry::kSymmetric)
    throw ConfigError("integer codes require an odd symmetric quantizer");
  require_finite(y, "quantize_codes input");
  LevelGrid<S> g = LevelGrid<S>::make(bounds, spec);
  CodeResult<S> r{Tensor<S>(y.shape()), std::vector<std::int8_t>(
                                            static_cast<std::size_t>(y.size())),
                  g.step};
  for (Index i = 0; i < y.size(); ++i) {
    int c2;  // doubled code; even for odd-level grids, so c2/2 is the code
    r.values[i] = g.snap(y[i], &c2);
    r.codes[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(c2 / 2);
  }
  return r;
}

template <class S>
Tensor<S> clamp_only(const Tensor<S>& y, const ClipBounds<S>& bounds) {
  bounds.validate();
  Tensor<S> out(y.shape());
  for (Index i = 0; i < y.size(); ++i) out[i] = std::clamp(y[i], bounds.neg, bounds.pos);
  return out;
}

template <class S>
long long count_clipped(const Tensor<S>& y, const ClipBounds<S>& bounds) {
  long long n = 0;
  for (Index i = 0; i < y.size(); ++i)
    if (y[i] > bounds.pos || y[i] < bounds.neg) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Straight-through estimator
// ---------------------------------------------------------------------------

template <class S>
struct SteGrads {
  Tensor<S> grad_y;
  S grad_alpha_pos = 0;  // sum of upstream over y >= alpha_pos
  S grad_alpha_neg = 0;  // sum of upstream over y <= alpha_neg
};

// dL/dy passes through on the open interval (alpha_neg, alpha_pos) and is
// zero on the clipped sets; the clipped sums are the bound gradients
// (d yq / d y~ estimated as 1, d y~ / d alpha = 1 on the respective set).
template <class S>
SteGrads<S> ste_backward(const Tensor<S>& upstream, const Tensor<S>& y,
                         const ClipBounds<S>& bounds) {
  if (!upstream.same_shape(y)) throw ShapeError("ste_backward shape mismatch");
  SteGrads<S> g{Tensor<S>(y.shape())};
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] >= bounds.pos) {
      g.grad_alpha_pos += upstream[i];
    } else if (y[i] <= bounds.neg) {
      g.grad_alpha_neg += upstream[i];
    } else {
      g.grad_y[i] = upstream[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Bound selection schemes
// ---------------------------------------------------------------------------

inline constexpr double kDegenerateAlpha = 1e-8;

// MAX: symmetric bounds at the dynamic range, recomputed every call.
template <class S>
ClipBounds<S> bounds_max(const Tensor<S>& y) {
  if (y.size() == 0) throw ShapeError("bounds_max of empty tensor");
  S a = y.max_abs();
  if (a <= S(0)) a = static_cast<S>(kDegenerateAlpha);
  return ClipBounds<S>::symmetric(a);
}

struct SawbTable {
  struct Entry {
    double c1 = 0;  // weight on sqrt(E y^2)
    double c2 = 0;  // weight on E|y|
  };
  int version = 0;
  std::array<Entry, 7> coeffs{};  // bits 2..8

  const Entry& entry(int bits) const {
    if (bits < 2 || bits > 8) throw ConfigError("SAWB table covers bits 2..8");
    return coeffs[static_cast<std::size_t>(bits - 2)];
  }

  static const SawbTable& builtin();
  static SawbTable load(const std::string& path);
  void save(const std::string& path) const;
};

// SAWB: alpha = c1*sqrt(E y^2) + c2*E|y| with bit-width-dependent fitted
// coefficients, floored at E|y| so degenerate (near-constant) tensors land
// on a representable level instead of extrapolating the fit.
template <class S>
ClipBounds<S> bounds_sawb(const QuantStats<S>& stats, int bits,
                          const SawbTable& table = SawbTable::builtin()) {
  const SawbTable::Entry& e = table.entry(bits);
  double a = e.c1 * std::sqrt(static_cast<double>(stats.mean_sq)) +
             e.c2 * static_cast<double>(stats.mean_abs);
  a = std::max(a, static_cast<double>(stats.mean_abs));
  if (a <= 0) a = kDegenerateAlpha;
  return ClipBounds<S>::symmetric(static_cast<S>(a));
}

// BAC: layer 0 follows the configured first-layer policy; every later layer
// gets fixed bounds - inputs at the dropout scaling 1/(1-p), hidden states
// at 1 (the LSTM cell output range). Fixed bounds never receive gradient.
enum class TensorRole { kInput, kHidden };
enum class FirstLayerPolicy { kLearnable, kFullPrecision };

struct BacDecision {
  enum Kind { kFixedBounds, kLearnable, kFullPrecision } kind;
  double alpha = 0;  // for kFixedBounds
};

inline BacDecision bounds_bac(int layer_index, TensorRole role, double dropout_p,
                              FirstLayerPolicy first_layer) {
  if (layer_index < 0) throw ConfigError("bounds_bac: negative layer index");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ConfigError("bounds_bac: dropout must be in [0,1)");
  if (layer_index == 0) {
    return {first_layer == FirstLayerPolicy::kLearnable ? BacDecision::kLearnable
                                                        : BacDecision::kFullPrecision,
            0.0};
  }
  return {BacDecision::kFixedBounds,
          role == TensorRole::kInput ? 1.0 / (1.0 - dropout_p) : 1.0};
}

// ---------------------------------------------------------------------------
// Fake quantization as a tape op
// ---------------------------------------------------------------------------

// One quantization site: a fixed place in the network (a weight tensor, a
// layer's input stream, ...) with its spec, its bound source and telemetry.
// Learnable sites are bound to fresh alpha leaf nodes each time a graph is
// built; fixed/dynamic sites own their bounds directly.
template <class S>
struct QuantSite {
  std::string name;
  QuantSpec spec;
  ClipBounds<S> fixed;                  // kBacFixed (and PACT fallback display)
  const SawbTable* sawb = &SawbTable::builtin();

  // per-graph learnable binding (PACT / BAC first layer)
  NodeId alpha_pos_node = -1;
  NodeId alpha_neg_node = -1;  // -1: symmetric, single learnable alpha

  // telemetry, reset per epoch by the training loop
  long long clip_count = 0;
  ClipBounds<S> last_bounds;

  bool learnable() const { return spec.scheme == Scheme::kPact; }
};

// Forward flavor: kQuantize snaps to levels (training semantics); kClampOnly
// clamps without rounding, which is exactly the function the STE backward
// differentiates - finite-difference tests run this flavor.
enum class FqMode { kQuantize, kClampOnly };

template <class S>
ClipBounds<S> resolve_bounds(Graph<S>& g, NodeId x, QuantSite<S>& site) {
  switch (site.spec.scheme) {
    case Scheme::kMax:
      return bounds_max(g.value(x));
    case Scheme::kSawb:
      return bounds_sawb(QuantStats<S>::compute(g.value(x)), site.spec.bits,
                         *site.sawb);
    case Scheme::kPact: {
      if (site.alpha_pos_node < 0)
        throw ConfigError("learnable site '" + site.name + "' has no bound leaves");
      S pos = g.value(site.alpha_pos_node)[0];
      S neg = site.alpha_neg_node >= 0 ? g.value(site.alpha_neg_node)[0] : -pos;
      return ClipBounds<S>{pos, neg};
    }
    case Scheme::kBacFixed:
      return site.fixed;
    case Scheme::kNone:
      break;
  }
  throw ConfigError("resolve_bounds on a pass-through site");
}

template <class S>
NodeId fake_quant(Graph<S>& g, NodeId x, QuantSite<S>& site,
                  FqMode mode = FqMode::kQuantize) {
  if (site.spec.scheme == Scheme::kNone) return x;  // identity, nothing taped
  ClipBounds<S> bounds = resolve_bounds(g, x, site);
  const Tensor<S>& y = g.value(x);
  site.clip_count += count_clipped(y, bounds);
  site.last_bounds = bounds;

  Tensor<S> out = mode == FqMode::kQuantize ? quantize_linear(y, bounds, site.spec)
                                            : clamp_only(y, bounds);
  std::vector<NodeId> inputs{x};
  if (site.learnable()) {
    inputs.push_back(site.alpha_pos_node);
    if (site.alpha_neg_node >= 0) inputs.push_back(site.alpha_neg_node);
  }
  const NodeId apos = site.learnable() ? site.alpha_pos_node : -1;
  const NodeId aneg = site.learnable() ? site.alpha_neg_node : -1;
  return g.apply(std::move(out), std::move(inputs),
                 [x, bounds, apos, aneg](Graph<S>& gr, NodeId self) {
                   SteGrads<S> sg = ste_backward(gr.grad(self), gr.value(x), bounds);
                   gr.accumulate(x, sg.grad_y);
                   if (apos >= 0) {
                     if (aneg >= 0) {
                       gr.accumulate(apos, Tensor<S>::scalar(sg.grad_alpha_pos));
                       gr.accumulate(aneg, Tensor<S>::scalar(sg.grad_alpha_neg));
                     } else {
                       // symmetric learnable alpha: d(-alpha)/d(alpha) = -1
                       gr.accumulate(apos, Tensor<S>::scalar(sg.grad_alpha_pos -
                                                             sg.grad_alpha_neg));
                     }
                   }
                 },
                 "fake_quant");
}

}  // namespace qlstm::quant
