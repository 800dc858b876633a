// qexec.cpp - packed-model file I/O and the integer-path executor

#include "qlstm/qexec.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qlstm/checkpoint.hpp"  // crc32_ieee

namespace qlstm::int4 {

static_assert(std::endian::native == std::endian::little,
              "packed-model format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'Q', 'L', 'P', 'K'};

struct Writer {
  std::string buf;
  void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

struct Reader {
  const char* p;
  const char* end;
  std::string path;
  void raw(void* out, std::size_t n) {
    if (static_cast<std::size_t>(end - p) < n)
      throw IoError(path + ": truncated packed model");
    std::memcpy(out, p, n);
    p += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  float f32() {
    float v;
    raw(&v, 4);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
};

}  // namespace

void save_packed(const PackedFile& f, const std::string& path) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(f.version);
  w.u64(f.arch_hash);
  w.u32(static_cast<std::uint32_t>(f.dense.size()));
  w.u32(static_cast<std::uint32_t>(f.packed.size()));
  for (const auto& [name, t] : f.dense) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
  }
  for (const auto& [name, p] : f.packed) {
    w.str(name);
    w.u64(static_cast<std::uint64_t>(p.rows));
    w.u64(static_cast<std::uint64_t>(p.cols));
    w.f32(p.scale);
  }
  for (const auto& [name, t] : f.dense)
    w.raw(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
  for (const auto& [name, p] : f.packed) w.raw(p.bytes.data(), p.bytes.size());
  w.u32(train::crc32_ieee(w.buf.data(), w.buf.size()));

  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write packed model: " + tmp.string());
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw IoError("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

PackedFile load_packed(const std::string& path,
                       std::optional<std::uint64_t> expect_hash,
                       bool allow_mismatch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open packed model: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 24) throw IoError(path + ": truncated packed model");
  std::uint32_t file_crc;
  std::memcpy(&file_crc, buf.data() + buf.size() - 4, 4);
  if (train::crc32_ieee(buf.data(), buf.size() - 4) != file_crc)
    throw IoError(path + ": checksum mismatch (corrupt or truncated file)");

  Reader r{buf.data(), buf.data() + buf.size() - 4, path};
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": not a packed model file");
  PackedFile f;
  f.version = r.u32();
  if (f.version != 1)
    throw IoError(path + ": unsupported packed-model version");
  f.arch_hash = r.u64();
  if (expect_hash && *expect_hash != f.arch_hash && !allow_mismatch)
    throw ConfigError(path + ": model architecture hash mismatch");
  const std::uint32_t nd = r.u32(), np = r.u32();
  std::vector<std::pair<std::string, Shape>> ddir;
  for (std::uint32_t i = 0; i < nd; ++i) {
    std::string name = r.str();
    std::uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<Index>(r.u64());
    ddir.emplace_back(std::move(name), std::move(shape));
  }
  std::vector<std::pair<std::string, PackedNibbleMatrix>> pdir;
  for (std::uint32_t i = 0; i < np; ++i) {
    std::string name = r.str();
    PackedNibbleMatrix p;
    p.rows = static_cast<Index>(r.u64());
    p.cols = static_cast<Index>(r.u64());
    p.scale = r.f32();
    pdir.emplace_back(std::move(name), std::move(p));
  }
  for (auto& [name, shape] : ddir) {
    Tensor<float> t(shape);
    r.raw(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
    f.dense.emplace(std::move(name), std::move(t));
  }
  for (auto& [name, p] : pdir) {
    p.bytes.resize(static_cast<std::size_t>((p.rows * p.cols + 1) / 2));
    r.raw(p.bytes.data(), p.bytes.size());
    f.packed.emplace(std::move(name), std::move(p));
  }
  if (r.p != r.end) throw IoError(path + ": trailing bytes");
  return f;
}

// ---------------------------------------------------------------------------
// Packing a trained network
// ---------------------------------------------------------------------------

namespace {

quant::ClipBounds<float> weight_bounds(const nn::Network<float>& net,
                                       const quant::QuantSite<float>& site,
                                       const Tensor<float>& w) {
  using quant::Scheme;
  switch (site.spec.scheme) {
    case Scheme::kSawb:
      return quant::bounds_sawb(quant::QuantStats<float>::compute(w), site.spec.bits,
                                *site.sawb);
    case Scheme::kMax:
      return quant::bounds_max(w);
    case Scheme::kBacFixed:
      return site.fixed;
    case Scheme::kPact: {
      float pos = net.params().at("bounds/" + site.name + "/pos")[0];
      return quant::ClipBounds<float>::symmetric(pos);
    }
    case Scheme::kNone:
      break;
  }
  throw ConfigError("cannot derive pack bounds for site " + site.name);
}

}  // namespace

PackedFile pack_network(nn::Network<float>& net) {
  PackedFile f;
  f.arch_hash = net.spec().arch_hash();
  for (const auto& name : net.param_order()) {
    const Tensor<float>& t = net.params().at(name);
    const auto* site = net.site_ptr_const(name);
    if (site == nullptr) {
      f.dense.emplace(name, t);
      continue;
    }
    if (site->spec.bits != 4 || site->spec.level_mode != quant::LevelMode::kOdd)
      throw ConfigError(
          "packing requires 4-bit odd-level weight quantizers (deployable "
          "policy such as int4_deploy); site " +
          name + " is " + site->spec.describe());
    auto bounds = weight_bounds(net, *site, t);
    f.packed.emplace(name + "t", PackedNibbleMatrix::pack(transposed(t), bounds, 4));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Executor
// ---------------------------------------------------------------------------

namespace {

ActQuantizer make_input_quantizer(const models::ModelSpec& spec, int layer_index,
                                  double dropout, const PackedFile& file,
                                  const std::string& site_name) {
  using quant::Scheme;
  const auto& pa = spec.policy.activations;
  ActQuantizer q;
  q.bits = pa.bits;
  switch (pa.scheme) {
    case Scheme::kNone:
      q.kind = ActQuantizer::kNone;
      return q;
    case Scheme::kMax:
      q.kind = ActQuantizer::kDynamicMax;
      return q;
    case Scheme::kPact:
    case Scheme::kBacFixed: {
      if (pa.scheme == Scheme::kBacFixed) {
        auto d = quant::bounds_bac(
            layer_index,
            site_name.size() >= 6 &&
                    site_name.compare(site_name.size() - 6, 6, ".input") == 0
                ? quant::TensorRole::kInput
                : quant::TensorRole::kHidden,
            dropout, spec.policy.first_layer);
        if (d.kind == quant::BacDecision::kFullPrecision) {
          q.kind = ActQuantizer::kNone;
          return q;
        }
        if (d.kind == quant::BacDecision::kFixedBounds) {
          q.kind = ActQuantizer::kFixed;
          q.alpha = static_cast<float>(d.alpha);
          return q;
        }
      }
      // learned bounds, frozen at their trained values; must be symmetric
      auto pos = file.dense.find("bounds/" + site_name + "/pos");
      if (pos == file.dense.end())
        throw ConfigError("packed model is missing learned bounds for " + site_name);
      auto neg = file.dense.find("bounds/" + site_name + "/neg");
      if (neg != file.dense.end() && neg->second[0] != -pos->second[0])
        throw ConfigError(
            "asymmetric learned bounds at " + site_name +
            " are unsupported in the runtime path (use the int4_deploy policy)");
      q.kind = ActQuantizer::kFixed;
      q.alpha = pos->second[0];
      return q;
    }
    case Scheme::kSawb:
      break;
  }
  throw ConfigError("unsupported activation scheme in the runtime path");
}

const Tensor<float>& dense_at(const PackedFile& f, const std::string& name) {
  auto it = f.dense.find(name);
  if (it == f.dense.end())
    throw ConfigError("packed model is missing tensor " + name);
  return it->second;
}

}  // namespace

std::vector<int> reference_greedy_decode(nn::Network<float>& net, int start_symbol,
                                         int steps) {
  if (!net.spec().prediction) throw ConfigError("model has no prediction network");
  const Index vocab = net.spec().prediction->vocab;
  if (start_symbol < 0 || start_symbol >= vocab)
    throw ConfigError("start symbol out of range");
  std::vector<int> prefix{start_symbol};
  std::vector<int> out;
  Rng unused(0);
  for (int s = 0; s < steps; ++s) {
    // trailing placeholder so the forward consumes the whole prefix
    std::vector<int> fed = prefix;
    fed.push_back(0);
    Graph<float> g;
    auto bind = net.bind(g, false);
    NodeId logits = net.forward_prednet(g, bind, fed,
                                        static_cast<Index>(fed.size()), 1, unused,
                                        false);
    const auto& lv = g.value(logits);
    const Index last = lv.rows() - 1;
    Index best = 0;
    for (Index c = 1; c < lv.cols(); ++c)
      if (lv.at(last, c) > lv.at(last, best)) best = c;
    out.push_back(static_cast<int>(best));
    prefix.push_back(static_cast<int>(best));
  }
  return out;
}

QuantizedExecutor::QuantizedExecutor(const models::ModelSpec& spec,
                                     const PackedFile& file)
    : spec_(spec) {
  if (file.arch_hash != spec.arch_hash())
    throw ConfigError("packed model does not match the model spec");

  auto build_direction = [&](const std::string& base, Index hidden) {
    Direction d;
    d.hidden = hidden;
    d.bias = dense_at(file, base + ".b");
    auto wp = file.packed.find(base + ".Wt");
    auto rp = file.packed.find(base + ".Rt");
    if (wp != file.packed.end() && rp != file.packed.end()) {
      d.quantized = true;
      d.wt = wp->second;
      d.rt = rp->second;
    } else {
      d.w = dense_at(file, base + ".W");
      d.r = dense_at(file, base + ".R");
    }
    return d;
  };

  for (const auto& l : spec_.lstm) {
    std::string base = "enc.l" + std::to_string(l.index);
    Layer layer;
    layer.bidirectional = l.bidirectional;
    layer.fwd = build_direction(base + ".fwd", l.hidden);
    if (l.bidirectional) layer.bwd = build_direction(base + ".bwd", l.hidden);
    layer.input_q =
        make_input_quantizer(spec_, l.index, l.dropout, file, base + ".input");
    layer.hidden_q =
        make_input_quantizer(spec_, l.index, l.dropout, file, base + ".hidden");
    layers_.push_back(std::move(layer));
  }
  if (spec_.prediction) {
    const auto& p = *spec_.prediction;
    embed_ = dense_at(file, "pred.embed");
    pred_.bidirectional = false;
    pred_.fwd = build_direction("pred", p.hidden);
    const auto& pa = spec_.policy.activations;
    pred_.input_q.bits = pa.bits;
    pred_.input_q.kind = pa.scheme == quant::Scheme::kNone ? ActQuantizer::kNone
                                                           : ActQuantizer::kDynamicMax;
    pred_.hidden_q.bits = pa.bits;
    pred_.hidden_q.kind =
        pa.scheme == quant::Scheme::kNone ? ActQuantizer::kNone : ActQuantizer::kFixed;
    pred_.hidden_q.alpha = 1.0f;
    has_pred_ = true;
  }
  for (const auto& fdesc : spec_.fc) {
    Fc fc;
    fc.tanh_act = fdesc.tanh_act;
    fc.bias = dense_at(file, fdesc.name + ".b");
    auto wp = file.packed.find(fdesc.name + ".Wt");
    if (wp != file.packed.end()) {
      fc.quantized = true;
      fc.wt = wp->second;
    } else {
      fc.w = dense_at(file, fdesc.name + ".W");
    }
    const bool act_q = spec_.policy.fc_quantized &&
                       fdesc.comp != models::Component::kJoint &&
                       spec_.policy.activations.scheme != quant::Scheme::kNone;
    fc.input_q.bits = spec_.policy.activations.bits;
    fc.input_q.kind = act_q ? ActQuantizer::kFixed : ActQuantizer::kNone;
    fc.input_q.alpha = 1.0f;
    fcs_.push_back(std::move(fc));
  }
}

Tensor<float> QuantizedExecutor::cell_pre(const Direction& d, const Tensor<float>& x_fp,
                                          const QuantizedActivation* x_codes,
                                          const Tensor<float>& h,
                                          const ActQuantizer& hidden_q) const {
  if (d.quantized && x_codes != nullptr) {
    Tensor<float> zx = int_gemm(*x_codes, d.wt);
    Tensor<float> zh = int_gemm(hidden_q.apply(h), d.rt);
    return add_rowvec(add(zx, zh), d.bias);
  }
  if (d.quantized) {
    // weight-only quantization: dequantized weights, float arithmetic
    Tensor<float> h_use2 =
        hidden_q.kind == ActQuantizer::kNone ? h : hidden_q.apply(h).dequantize();
    return add_rowvec(add(matmul(x_fp, d.wt.unpack()), matmul(h_use2, d.rt.unpack())),
                      d.bias);
  }
  Tensor<float> h_use =
      hidden_q.kind == ActQuantizer::kNone ? h : hidden_q.apply(h).dequantize();
  return add_rowvec(add(matmul_nt(x_fp, d.w), matmul_nt(h_use, d.r)), d.bias);
}

std::vector<Tensor<float>> QuantizedExecutor::run_layer_rt(
    const Layer& l, std::vector<Tensor<float>> xs) const {
  const Index batch = xs[0].rows();
  const std::size_t steps = xs.size();

  std::vector<QuantizedActivation> codes(steps);
  std::vector<Tensor<float>> x_fp(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (l.input_q.kind == ActQuantizer::kNone) {
      x_fp[t] = std::move(xs[t]);
    } else {
      codes[t] = l.input_q.apply(xs[t]);
      x_fp[t] = codes[t].dequantize();
    }
  }

  auto run_dir = [&](const Direction& d, bool reverse) {
    std::vector<Tensor<float>> hs(steps);
    Tensor<float> h({batch, d.hidden}), c({batch, d.hidden});
    for (std::size_t i = 0; i < steps; ++i) {
      std::size_t t = reverse ? steps - 1 - i : i;
      const QuantizedActivation* xc =
          l.input_q.kind == ActQuantizer::kNone ? nullptr : &codes[t];
      Tensor<float> z = cell_pre(d, x_fp[t], xc, h, l.hidden_q);
      Tensor<float> gi = sigmoid(slice_cols(z, Index(0), d.hidden));
      Tensor<float> gf = sigmoid(slice_cols(z, d.hidden, d.hidden));
      Tensor<float> gc = qlstm::tanh(slice_cols(z, 2 * d.hidden, d.hidden));
      Tensor<float> go = sigmoid(slice_cols(z, 3 * d.hidden, d.hidden));
      c = add(mul(gf, c), mul(gi, gc));
      h = mul(go, qlstm::tanh(c));
      hs[t] = h;
    }
    return hs;
  };

  auto out = run_dir(l.fwd, false);
  if (l.bidirectional) {
    auto back = run_dir(l.bwd, true);
    for (std::size_t t = 0; t < steps; ++t) out[t] = concat_cols(out[t], back[t]);
  }
  return out;
}

Tensor<float> QuantizedExecutor::run_fc_rt(const Fc& f, const Tensor<float>& x) const {
  Tensor<float> y;
  if (f.input_q.kind == ActQuantizer::kNone) {
    y = f.quantized ? matmul(x, f.wt.unpack()) : matmul_nt(x, f.w);
  } else {
    QuantizedActivation codes = f.input_q.apply(x);
    y = f.quantized ? int_gemm(codes, f.wt) : matmul_nt(codes.dequantize(), f.w);
  }
  y = add_rowvec(y, f.bias);
  return f.tanh_act ? qlstm::tanh(y) : y;
}

Tensor<float> QuantizedExecutor::forward_stack(const Tensor<float>& x) const {
  if (layers_.empty()) throw ConfigError("model has no LSTM stack");
  if (x.rank() != 3 || x.dim(2) != spec_.input_dim)
    throw ShapeError("forward_stack expects [T x B x in_dim] input");
  std::vector<Tensor<float>> seq;
  for (Index t = 0; t < x.dim(0); ++t) seq.push_back(x.slice0(t));
  for (const auto& l : layers_) seq = run_layer_rt(l, std::move(seq));

  Tensor<float> flat({x.dim(0) * x.dim(1), seq[0].cols()});
  for (Index t = 0; t < x.dim(0); ++t)
    flat.matrix().middleRows(t * x.dim(1), x.dim(1)) =
        seq[static_cast<std::size_t>(t)].matrix();
  for (const auto& f : fcs_) flat = run_fc_rt(f, flat);
  return flat;
}

std::vector<int> QuantizedExecutor::greedy_decode(int start_symbol, int steps) const {
  if (!has_pred_) throw ConfigError("model has no prediction network");
  const auto& p = *spec_.prediction;
  if (start_symbol < 0 || start_symbol >= p.vocab)
    throw ConfigError("start symbol out of range");

  Tensor<float> h({1, p.hidden}), c({1, p.hidden});
  std::vector<int> out;
  int sym = start_symbol;
  for (int s = 0; s < steps; ++s) {
    Tensor<float> emb({1, p.embed});
    for (Index d = 0; d < p.embed; ++d) emb[d] = embed_.at(sym, d);

    const QuantizedActivation* xc = nullptr;
    QuantizedActivation codes;
    Tensor<float> x_fp = emb;
    if (pred_.input_q.kind != ActQuantizer::kNone) {
      codes = pred_.input_q.apply(emb);
      x_fp = codes.dequantize();
      xc = &codes;
    }
    Tensor<float> z = cell_pre(pred_.fwd, x_fp, xc, h, pred_.hidden_q);
    const Index hd = pred_.fwd.hidden;
    Tensor<float> gi = sigmoid(slice_cols(z, Index(0), hd));
    Tensor<float> gf = sigmoid(slice_cols(z, hd, hd));
    Tensor<float> gc = qlstm::tanh(slice_cols(z, 2 * hd, hd));
    Tensor<float> go = sigmoid(slice_cols(z, 3 * hd, hd));
    c = add(mul(gf, c), mul(gi, gc));
    h = mul(go, qlstm::tanh(c));

    Tensor<float> logits = h;
    for (const auto& f : fcs_) logits = run_fc_rt(f, logits);
    Index best = 0;
    for (Index k = 1; k < logits.cols(); ++k)
      if (logits.at(0, k) > logits.at(0, best)) best = k;
    sym = static_cast<int>(best);
    out.push_back(sym);
  }
  return out;
}

}  // namespace qlstm::int4
