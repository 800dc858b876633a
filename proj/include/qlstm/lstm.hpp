// lstm.hpp - quantized LSTM cell, layer driver and FC layer on the tape
//
// Gate order is fixed as (input, forget, cell, output); weight layout is
// W [4h x d_in], R [4h x h], bias [4h] with gates stacked along the first
// axis. Sequences are time-major. Cell states are never quantized; biases
// are never quantized; inputs and hidden states pass through their sites at
// every time step.
#pragma once

#include <utility>
#include <vector>

#include "qlstm/graph.hpp"
#include "qlstm/quant.hpp"

namespace qlstm::nn {

using quant::FqMode;
using quant::QuantSite;

// One direction's parameters, already bound into the graph. w/r are expected
// to be the (fake-quantized, when the policy says so) weight nodes.
struct CellNodes {
  NodeId w = -1;
  NodeId r = -1;
  NodeId b = -1;
  Index hidden = 0;
};

struct CellState {
  NodeId h = -1;
  NodeId c = -1;
};

// One step of the recurrence. input_site/hidden_site may be null (full
// precision); the cell state flows through untouched. h_t = sigma(o) *
// tanh(c_t) lands strictly inside (-1, 1).
template <class S>
CellState lstm_cell_step(Graph<S>& g, NodeId x_t, NodeId h_prev, NodeId c_prev,
                         const CellNodes& cell, QuantSite<S>* input_site,
                         QuantSite<S>* hidden_site, FqMode mode = FqMode::kQuantize) {
  NodeId xq = input_site ? fake_quant(g, x_t, *input_site, mode) : x_t;
  NodeId hq = hidden_site ? fake_quant(g, h_prev, *hidden_site, mode) : h_prev;
  NodeId z = g.add_rowvec(g.add(g.matmul_nt(xq, cell.w), g.matmul_nt(hq, cell.r)),
                          cell.b);
  const Index h = cell.hidden;
  NodeId gi = g.sigmoid(g.slice_cols(z, 0, h));
  NodeId gf = g.sigmoid(g.slice_cols(z, h, h));
  NodeId gc = g.tanh(g.slice_cols(z, 2 * h, h));
  NodeId go = g.sigmoid(g.slice_cols(z, 3 * h, h));
  NodeId c_t = g.add(g.mul(gf, c_prev), g.mul(gi, gc));
  NodeId h_t = g.mul(go, g.tanh(c_t));
  return {h_t, c_t};
}

// A layer bound into one graph build. The input site is applied once per
// step (after dropout) and feeds both directions; the hidden site is shared
// by the directions, which also share clip telemetry and learned bounds.
template <class S>
struct LayerGraph {
  CellNodes fwd;
  CellNodes bwd;  // unused when !bidirectional
  bool bidirectional = false;
  double dropout = 0.0;
  QuantSite<S>* input_site = nullptr;
  QuantSite<S>* hidden_site = nullptr;
};

// Runs a layer over a time-major sequence of [B x d_in] nodes; the backward
// direction consumes the sequence reversed, and outputs are concatenated
// [fwd | bwd] per step.
template <class S>
std::vector<NodeId> run_layer(Graph<S>& g, const std::vector<NodeId>& xs,
                              LayerGraph<S>& layer, Rng& rng, bool training,
                              FqMode mode = FqMode::kQuantize) {
  if (xs.empty()) throw ShapeError("run_layer on an empty sequence");
  const Index batch = g.value(xs[0]).rows();
  const std::size_t steps = xs.size();

  std::vector<NodeId> xq(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    NodeId d = g.dropout(xs[t], layer.dropout, rng, training);
    xq[t] = layer.input_site ? fake_quant(g, d, *layer.input_site, mode) : d;
  }

  auto run_direction = [&](const CellNodes& cell, bool reverse) {
    std::vector<NodeId> hs(steps);
    CellState s;
    s.h = g.constant(Tensor<S>::zeros({batch, cell.hidden}));
    s.c = s.h;
    for (std::size_t i = 0; i < steps; ++i) {
      std::size_t t = reverse ? steps - 1 - i : i;
      s = lstm_cell_step<S>(g, xq[t], s.h, s.c, cell, nullptr, layer.hidden_site, mode);
      hs[t] = s.h;
    }
    return hs;
  };

  std::vector<NodeId> out = run_direction(layer.fwd, false);
  if (layer.bidirectional) {
    std::vector<NodeId> back = run_direction(layer.bwd, true);
    for (std::size_t t = 0; t < steps; ++t) out[t] = g.concat_cols(out[t], back[t]);
  }
  return out;
}

// Fake-quantized affine map: the activation quantizer applies to the input,
// the (already quantized) weight node multiplies, bias adds unquantized.
template <class S>
NodeId run_fc(Graph<S>& g, NodeId x, NodeId w, NodeId b, QuantSite<S>* input_site,
              bool tanh_act, FqMode mode = FqMode::kQuantize) {
  NodeId xq = input_site ? fake_quant(g, x, *input_site, mode) : x;
  NodeId y = g.add_rowvec(g.matmul_nt(xq, w), b);
  return tanh_act ? g.tanh(y) : y;
}

}  // namespace qlstm::nn
