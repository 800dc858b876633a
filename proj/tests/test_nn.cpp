// test_nn.cpp - quantized LSTM cells/layers/FC and model accounting
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "qlstm/network.hpp"

using namespace qlstm;
using namespace qlstm::nn;
using oracles::central_diff;
using oracles::close_rel;
using models::build_dblstm_analog;
using models::build_preset;
using models::build_prednet_analog;
using models::QuantPolicy;

namespace {

// Plain LSTM sequence forward written with free tensor functions only; the
// quantized stack under a NONE policy must reproduce it bit for bit.
template <class S>
std::vector<Tensor<S>> reference_layer(const std::vector<Tensor<S>>& xs,
                                       const Tensor<S>& Wf, const Tensor<S>& Rf,
                                       const Tensor<S>& bf, const Tensor<S>& Wb,
                                       const Tensor<S>& Rb, const Tensor<S>& bb,
                                       Index hidden, bool bidir) {
  const Index batch = xs[0].rows();
  auto dir = [&](const Tensor<S>& W, const Tensor<S>& R, const Tensor<S>& b,
                 bool reverse) {
    std::vector<Tensor<S>> hs(xs.size());
    Tensor<S> h({batch, hidden}), c({batch, hidden});
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::size_t t = reverse ? xs.size() - 1 - i : i;
      Tensor<S> z = add_rowvec(add(matmul_nt(xs[t], W), matmul_nt(h, R)), b);
      Tensor<S> gi = sigmoid(slice_cols(z, Index(0), hidden));
      Tensor<S> gf = sigmoid(slice_cols(z, hidden, hidden));
      Tensor<S> gc = qlstm::tanh(slice_cols(z, 2 * hidden, hidden));
      Tensor<S> go = sigmoid(slice_cols(z, 3 * hidden, hidden));
      c = add(mul(gf, c), mul(gi, gc));
      h = mul(go, qlstm::tanh(c));
      hs[t] = h;
    }
    return hs;
  };
  auto out = dir(Wf, Rf, bf, false);
  if (bidir) {
    auto back = dir(Wb, Rb, bb, true);
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = concat_cols(out[t], back[t]);
  }
  return out;
}

Tensor<float> random_seq(Index T, Index B, Index D, Rng& rng, float stddev = 1.0f) {
  return Tensor<float>::gaussian({T, B, D}, rng, stddev);
}

}  // namespace

TEST_CASE("cell: all-zero parameters and states produce zero h and c") {
  Graph<float> g;
  CellNodes cell;
  cell.hidden = 4;
  cell.w = g.constant(Tensor<float>::zeros({16, 3}));
  cell.r = g.constant(Tensor<float>::zeros({16, 4}));
  cell.b = g.constant(Tensor<float>::zeros({16}));
  NodeId x = g.constant(Tensor<float>::zeros({2, 3}));
  NodeId h0 = g.constant(Tensor<float>::zeros({2, 4}));
  auto s = lstm_cell_step<float>(g, x, h0, h0, cell, nullptr, nullptr);
  for (Index i = 0; i < 8; ++i) {
    CHECK(g.value(s.h)[i] == 0.0f);
    CHECK(g.value(s.c)[i] == 0.0f);
  }
}

TEST_CASE("cell keeps |h| strictly below 1 under any quantizer") {
  Rng rng(211);
  for (int trial = 0; trial < 5; ++trial) {
    Graph<float> g;
    CellNodes cell;
    cell.hidden = 6;
    cell.w = g.constant(Tensor<float>::gaussian({24, 5}, rng, 3.0f));
    cell.r = g.constant(Tensor<float>::gaussian({24, 6}, rng, 3.0f));
    cell.b = g.constant(Tensor<float>::gaussian({24}, rng, 2.0f));
    NodeId x = g.constant(Tensor<float>::gaussian({3, 5}, rng, 4.0f));
    NodeId h0 = g.constant(Tensor<float>::gaussian({3, 6}, rng, 0.9f));
    NodeId c0 = g.constant(Tensor<float>::gaussian({3, 6}, rng, 2.0f));

    quant::QuantSite<float> in_site, hid_site;
    in_site.spec = {4, quant::LevelMode::kOdd, quant::Symmetry::kSymmetric,
                    quant::Scheme::kMax};
    hid_site.spec = {4, quant::LevelMode::kOdd, quant::Symmetry::kSymmetric,
                     quant::Scheme::kBacFixed};
    hid_site.fixed = quant::ClipBounds<float>::symmetric(1.0f);
    auto s = lstm_cell_step<float>(g, x, h0, c0, cell, &in_site, &hid_site);
    for (Index i = 0; i < g.value(s.h).size(); ++i)
      CHECK(std::abs(g.value(s.h)[i]) < 1.0f);
  }
}

TEST_CASE("stack with NONE policy is bit-identical to the plain reference") {
  Rng rng(223);
  auto spec = build_dblstm_analog(6, 5, 2, 8, 8, 0.0, QuantPolicy::preset("fp32"));
  Network<float> net(spec, 777);

  auto x = random_seq(5, 3, 6, rng);
  Graph<float> g;
  auto bind = net.bind(g, false);
  Rng drop(1);
  NodeId logits = net.forward_stack(g, bind, x, drop, false);

  // reference path: layers then heads, same parameter tensors
  std::vector<Tensor<float>> seq;
  for (Index t = 0; t < 5; ++t) seq.push_back(x.slice0(t));
  auto& P = net.params();
  for (int l = 0; l < 2; ++l) {
    std::string base = "enc.l" + std::to_string(l);
    seq = reference_layer(seq, P.at(base + ".fwd.W"), P.at(base + ".fwd.R"),
                          P.at(base + ".fwd.b"), P.at(base + ".bwd.W"),
                          P.at(base + ".bwd.R"), P.at(base + ".bwd.b"), 8, true);
  }
  Tensor<float> flat({5 * 3, 16});
  for (Index t = 0; t < 5; ++t)
    flat.matrix().middleRows(t * 3, 3) = seq[static_cast<std::size_t>(t)].matrix();
  Tensor<float> h1 = qlstm::tanh(add_rowvec(matmul_nt(flat, P.at("fc0.W")), P.at("fc0.b")));
  Tensor<float> ref = add_rowvec(matmul_nt(h1, P.at("fc1.W")), P.at("fc1.b"));

  const Tensor<float>& got = g.value(logits);
  REQUIRE(got.same_shape(ref));
  for (Index i = 0; i < ref.size(); ++i) CHECK(got[i] == ref[i]);
}

TEST_CASE("layer: T=1 unidirectional equals a single cell step") {
  Rng rng(227);
  Graph<float> g;
  CellNodes cell;
  cell.hidden = 5;
  cell.w = g.constant(Tensor<float>::gaussian({20, 4}, rng, 0.5f));
  cell.r = g.constant(Tensor<float>::gaussian({20, 5}, rng, 0.5f));
  cell.b = g.constant(Tensor<float>::gaussian({20}, rng, 0.5f));
  NodeId x = g.constant(Tensor<float>::gaussian({2, 4}, rng, 1.0f));

  LayerGraph<float> layer;
  layer.fwd = cell;
  Rng drop(3);
  auto out = run_layer(g, std::vector<NodeId>{x}, layer, drop, false);

  NodeId zero = g.constant(Tensor<float>::zeros({2, 5}));
  auto s = lstm_cell_step<float>(g, x, zero, zero, cell, nullptr, nullptr);
  for (Index i = 0; i < g.value(s.h).size(); ++i)
    CHECK(g.value(out[0])[i] == g.value(s.h)[i]);
}

TEST_CASE("layer: bidirectional halves equal independent directional runs") {
  Rng rng(229);
  Graph<float> g;
  auto mk = [&](Index rows, Index cols, float s) {
    return g.constant(Tensor<float>::gaussian({rows, cols}, rng, s));
  };
  CellNodes fwd{mk(20, 4, 0.5f), mk(20, 5, 0.5f), -1, 5};
  CellNodes bwd{mk(20, 4, 0.5f), mk(20, 5, 0.5f), -1, 5};
  fwd.b = g.constant(Tensor<float>::gaussian({20}, rng, 0.3f));
  bwd.b = g.constant(Tensor<float>::gaussian({20}, rng, 0.3f));

  std::vector<NodeId> xs;
  for (int t = 0; t < 4; ++t) xs.push_back(mk(2, 4, 1.0f));

  LayerGraph<float> layer;
  layer.fwd = fwd;
  layer.bwd = bwd;
  layer.bidirectional = true;
  Rng drop(5);
  auto out = run_layer(g, xs, layer, drop, false);

  LayerGraph<float> fonly;
  fonly.fwd = fwd;
  Rng d2(5);
  auto fw = run_layer(g, xs, fonly, d2, false);

  std::vector<NodeId> rev(xs.rbegin(), xs.rend());
  LayerGraph<float> bonly;
  bonly.fwd = bwd;
  Rng d3(5);
  auto bw = run_layer(g, rev, bonly, d3, false);

  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto& full = g.value(out[t]);
    const auto& f = g.value(fw[t]);
    const auto& b = g.value(bw[xs.size() - 1 - t]);
    for (Index i = 0; i < 2; ++i) {
      for (Index j = 0; j < 5; ++j) {
        CHECK(full.at(i, j) == f.at(i, j));
        CHECK(full.at(i, 5 + j) == b.at(i, j));
      }
    }
  }
}

TEST_CASE("BAC layer: quantized inputs never exceed the 1.25 dropout bound") {
  Rng rng(233);
  auto spec =
      build_dblstm_analog(8, 4, 3, 8, 8, 0.2, QuantPolicy::preset("int4_sawb_bac"));
  Network<float> net(spec, 31);
  auto x = random_seq(6, 4, 8, rng, 2.0f);
  Graph<float> g;
  auto bind = net.bind(g, false);
  Rng drop(7);
  (void)net.forward_stack(g, bind, x, drop, true);

  for (int l = 1; l < 3; ++l) {
    auto* site = net.site_ptr("enc.l" + std::to_string(l) + ".input");
    REQUIRE(site != nullptr);
    CHECK(site->last_bounds.pos == doctest::Approx(1.25).epsilon(1e-6));
    // hidden states are bounded by 1, so the unit clip never fires
    CHECK(net.site_ptr("enc.l" + std::to_string(l) + ".hidden")->clip_count == 0);
  }
}

TEST_CASE("fc: identity and zero-weight cases, gradient vs finite differences") {
  Graph<float> g;
  auto eye = Tensor<float>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto x = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  NodeId out = run_fc<float>(g, g.constant(x), g.constant(eye),
                             g.constant(Tensor<float>::zeros({3})), nullptr, false);
  for (Index i = 0; i < 6; ++i) CHECK(g.value(out)[i] == x[i]);

  auto bias = Tensor<float>::from({3}, {1.5f, -2.0f, 0.25f});
  NodeId out2 = run_fc<float>(g, g.constant(x), g.constant(Tensor<float>::zeros({3, 3})),
                              g.constant(bias), nullptr, false);
  for (Index r = 0; r < 2; ++r)
    for (Index c = 0; c < 3; ++c) CHECK(g.value(out2).at(r, c) == bias[c]);

  // gradient through quantized FC in clamp mode, away from kinks
  Rng rng(239);
  auto xd = Tensor<double>::gaussian({4, 5}, rng, 0.4);
  auto wd = Tensor<double>::gaussian({3, 5}, rng, 0.4);
  auto bd = Tensor<double>::gaussian({3}, rng, 0.4);
  std::vector<int> targets{0, 2, 1, 0};
  quant::QuantSite<double> in_site;
  in_site.spec = {4, quant::LevelMode::kOdd, quant::Symmetry::kSymmetric,
                  quant::Scheme::kBacFixed};
  in_site.fixed = quant::ClipBounds<double>::symmetric(1.0);

  auto build = [&](Graph<double>& h, bool rg) {
    quant::QuantSite<double> site = in_site;
    NodeId nx = h.leaf(xd, rg), nw = h.leaf(wd, rg), nb = h.leaf(bd, rg);
    NodeId y = run_fc<double>(h, nx, nw, nb, &site, false, FqMode::kClampOnly);
    return h.cross_entropy(y, targets);
  };
  Graph<double> gd;
  gd.backward(build(gd, true));
  auto loss = [&] {
    Graph<double> h;
    return static_cast<double>(h.value(build(h, false))[0]);
  };
  for (Index i = 0; i < xd.size(); ++i) {
    if (std::abs(std::abs(xd[i]) - 1.0) < 1e-3) continue;
    CHECK(close_rel(gd.grad(0)[i], central_diff<double>(xd, i, loss), 1e-4));
  }
  for (Index i = 0; i < wd.size(); ++i)
    CHECK(close_rel(gd.grad(1)[i], central_diff<double>(wd, i, loss), 1e-4));
}

TEST_CASE("placement audit: exactly the specified tensors are quantized") {
  auto spec =
      build_dblstm_analog(8, 4, 2, 8, 8, 0.25, QuantPolicy::preset("int4_sawb_bac"));
  Network<float> net(spec, 5);
  auto audit = net.audit();

  std::vector<std::string> quantized, fp;
  for (const auto& e : audit) (e.quantized ? quantized : fp).push_back(e.tensor);

  auto has = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  // quantized: LSTM W/R, FC weights, LSTM inputs and hidden states, FC inputs
  for (const auto& t :
       {"enc.l0.fwd.W", "enc.l0.fwd.R", "enc.l1.bwd.W", "enc.l1.bwd.R", "fc0.W",
        "fc1.W", "enc.l0.input", "enc.l0.hidden", "enc.l1.input", "enc.l1.hidden",
        "fc0.input", "fc1.input"})
    CHECK_MESSAGE(has(quantized, t), t);
  // full precision: biases, cell states, final softmax
  for (const auto& t : {"enc.l0.fwd.b", "enc.l1.bwd.b", "fc0.b", "fc1.b",
                        "enc.l0.cell_state", "enc.l1.cell_state", "output.softmax"})
    CHECK_MESSAGE(has(fp, t), t);
  // and nothing else is quantized
  CHECK(quantized.size() == 16);  // 2 layers * (4 weights + 2 acts) + 2 FC W + 2 FC in
}

TEST_CASE("full quantized stack gradient matches finite differences (clamp mode)") {
  Rng rng(241);
  auto spec =
      build_dblstm_analog(5, 3, 2, 6, 6, 0.0, QuantPolicy::preset("int4_sawb_pact"));
  Network<double> net(spec, 97);

  // Freeze the statistics-derived weight bounds at the base point: STE
  // treats them as constants, so the differentiable surrogate must too.
  for (auto& [name, site] : net.sites()) {
    if (site.spec.scheme == quant::Scheme::kSawb) {
      site.fixed = quant::bounds_sawb(
          quant::QuantStats<double>::compute(net.params().at(name)), site.spec.bits);
      site.spec.scheme = quant::Scheme::kBacFixed;
    }
  }
  auto x = Tensor<double>::gaussian({4, 2, 5}, rng, 1.0);
  std::vector<int> targets;
  for (int i = 0; i < 8; ++i) targets.push_back(i % 3);

  auto loss_value = [&] {
    Graph<double> g;
    auto bind = net.bind(g, false);
    Rng drop(11);
    NodeId logits = net.forward_stack(g, bind, x, drop, false, FqMode::kClampOnly);
    return static_cast<double>(g.value(g.cross_entropy(logits, targets))[0]);
  };

  Graph<double> g;
  auto bind = net.bind(g, true);
  Rng drop(11);
  NodeId logits = net.forward_stack(g, bind, x, drop, false, FqMode::kClampOnly);
  g.backward(g.cross_entropy(logits, targets));

  Rng pick(43);
  const char* names[] = {"enc.l0.fwd.W", "enc.l1.bwd.R", "fc0.W", "fc1.W",
                         "enc.l0.fwd.b"};
  for (const char* name : names) {
    auto& t = net.params().at(name);
    NodeId leaf = bind.of(name);
    for (int k = 0; k < 4; ++k) {
      Index i = static_cast<Index>(pick.index(static_cast<std::uint64_t>(t.size())));
      double analytic = g.has_grad(leaf) ? g.grad(leaf)[i] : 0.0;
      CHECK(close_rel(analytic, central_diff<double>(t, i, loss_value), 1e-3, 1e-7));
    }
  }
}

TEST_CASE("param accounting reproduces the reported fractions at scale 1") {
  auto deploy = QuantPolicy::preset("int4_deploy");
  auto rnnt = build_preset("rnnt", 1.0, deploy);
  auto rep = models::param_report(rnnt);

  CHECK(rep.first_lstm_layer_fraction() == doctest::Approx(0.088).epsilon(0.06));
  CHECK(rep.fraction_component(models::Component::kPrediction) ==
        doctest::Approx(0.041).epsilon(0.13));
  CHECK(rep.fraction_bits(4) == doctest::Approx(0.902).epsilon(0.01));

  auto bac = QuantPolicy::preset("int4_sawb_bac");
  for (const char* name : {"hmm300", "hmm2000"}) {
    auto m = build_preset(name, 1.0, bac);
    auto r = models::param_report(m);
    CHECK(r.fraction_quantized() >= 0.995);
    CHECK(r.fraction_quantized() <= 0.9995);
  }

  // fractions over precision classes sum to one
  auto r300 = models::param_report(build_preset("hmm300", 1.0, bac));
  CHECK(r300.fraction_bits(4) + r300.fraction_bits(32) == doctest::Approx(1.0));
}

TEST_CASE("preset dimensions and scaling") {
  auto p = QuantPolicy::preset("fp32");
  auto rnnt = build_preset("rnnt", 1.0, p);
  CHECK(rnnt.lstm.size() == 6);
  CHECK(rnnt.input_dim == 340);  // 240 features + 100 i-vector dims
  CHECK(rnnt.lstm[0].hidden == 640);
  CHECK(rnnt.prediction->hidden == 768);
  CHECK(rnnt.output_dim == 46);

  auto hmm = build_preset("hmm300", 1.0, p);
  CHECK(hmm.lstm.size() == 4);
  CHECK(hmm.input_dim == 140);
  CHECK(hmm.lstm[0].hidden == 512);
  CHECK(hmm.fc[1].out_dim == 32000);

  auto scaled = build_preset("hmm300", 0.125, p);
  CHECK(scaled.lstm.size() == 4);
  CHECK(scaled.lstm[0].hidden == 64);  // 512/8
  CHECK(scaled.lstm[1].in_dim == 128);

  CHECK_THROWS_AS(build_preset("nope", 1.0, p), ConfigError);
  CHECK_THROWS_AS(build_preset("rnnt", 0.0, p), ConfigError);

  // quantized fractions are ratio-stable under scaling
  auto deploy = QuantPolicy::preset("int4_deploy");
  auto f1 = models::param_report(build_preset("rnnt", 1.0, deploy)).fraction_bits(4);
  auto f4 = models::param_report(build_preset("rnnt", 0.25, deploy)).fraction_bits(4);
  CHECK(std::abs(f1 - f4) < 0.01);
}

TEST_CASE("introspection totals equal the accounting report exactly") {
  auto spec = build_preset("rnnt", 0.25, QuantPolicy::preset("int4_sawb_bac"));
  Network<float> net(spec, 1);
  Index instantiated = 0;
  for (const auto& name : net.param_order()) {
    if (name.rfind("bounds/", 0) == 0) continue;  // learned bounds, not model params
    instantiated += net.params().at(name).size();
  }
  auto rep = models::param_report(spec);
  CHECK(instantiated == rep.total);
}

TEST_CASE("mac accounting: linearity in T, beam behavior, first-layer share") {
  auto spec = build_preset("rnnt", 1.0, QuantPolicy::preset("int4_deploy"));
  auto m1 = models::mac_counts(spec, 152, 16);
  auto m2 = models::mac_counts(spec, 304, 16);
  CHECK(m2.component(models::Component::kEncoder) ==
        doctest::Approx(2 * m1.component(models::Component::kEncoder)));

  // first encoder layer compute share at beam 16: ~4.8% of total
  CHECK(m1.first_lstm_layer() / m1.total() == doctest::Approx(0.048).epsilon(0.21));

  // beam 1: prediction runs one pass over the expected output length
  auto b1 = models::mac_counts(spec, 100, 1);
  const auto& p = *spec.prediction;
  double per_step = 4.0 * double(p.hidden) * double(p.embed + p.hidden);
  CHECK(b1.component(models::Component::kPrediction) ==
        doctest::Approx(100.0 * per_step));

  CHECK_THROWS_AS(models::mac_counts(spec, 0, 1), ConfigError);
}
