// commands.cpp - CLI command bodies

#include "qlstm/commands.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qlstm/perf.hpp"
#include "qlstm/qexec.hpp"

namespace qlstm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void apply_overrides(RunConfig& cfg, const Overrides& ov) {
  if (ov.seed) cfg.train.seed = *ov.seed;
  if (ov.epochs) cfg.train.epochs = *ov.epochs;
  if (ov.out) cfg.out = *ov.out;
}

}  // namespace

std::string metrics_csv(const std::vector<train::EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,holdout_loss,accuracy";
  if (!history.empty()) {
    for (const auto& b : history.front().bounds)
      os << ",bound." << b.site << ".pos,bound." << b.site << ".neg";
  }
  os << "\n";
  for (const auto& m : history) {
    os << m.epoch << "," << fmt_g9(m.lr) << "," << fmt_g9(m.train_loss) << ","
       << fmt_g9(m.holdout_loss) << "," << fmt_g9(m.accuracy);
    for (const auto& b : m.bounds) os << "," << fmt_g9(b.pos) << "," << fmt_g9(b.neg);
    os << "\n";
  }
  return os.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

int run_train(const std::string& config_path, const Overrides& ov,
              const std::optional<std::string>& from_checkpoint,
              bool allow_mismatch) {
  RunConfig cfg = parse_config_file(config_path);
  apply_overrides(cfg, ov);

  auto task = cfg.build_task();
  auto spec = cfg.build_model_spec();
  if (spec.joint)
    throw ConfigError("the transducer preset is not trainable here (no transducer "
                      "loss); use dblstm_analog, prednet_analog or a DBLSTM preset");
  nn::Network<float> net(spec, cfg.train.init_seed);

  if (from_checkpoint) {
    auto ck = train::load_checkpoint(*from_checkpoint, spec.arch_hash(),
                                     allow_mismatch);
    train::load_into(net, ck);
    std::printf("initialized from %s (epoch %u)\n", from_checkpoint->c_str(),
                ck.epoch);
  }

  train::TrainOptions opt;
  opt.optimizer = cfg.train.optimizer;
  opt.schedule = cfg.train.schedule;
  opt.epochs = cfg.train.epochs;
  opt.batch_size = cfg.train.batch_size;
  opt.seed = cfg.train.seed;

  auto result = train::train_qat(net, *task, opt);
  for (const auto& m : result.history)
    std::printf("epoch %d lr %.5g train %.5g holdout %.5g acc %.4f\n", m.epoch, m.lr,
                m.train_loss, m.holdout_loss, m.accuracy);

  write_file_atomic((fs::path(cfg.out) / "metrics.csv").string(),
                    metrics_csv(result.history));
  train::save_checkpoint(result.checkpoint,
                         (fs::path(cfg.out) / "checkpoint.qck").string());
  std::printf("wrote %s/{metrics.csv,checkpoint.qck}\n", cfg.out.c_str());
  if (result.diverged) {
    std::fprintf(stderr, "training diverged; artifacts hold the last good state\n");
    return 2;
  }
  return 0;
}

void run_eval(const std::string& config_path, const std::string& checkpoint) {
  RunConfig cfg = parse_config_file(config_path);
  auto task = cfg.build_task();
  auto spec = cfg.build_model_spec();
  nn::Network<float> net(spec, cfg.train.init_seed);
  train::load_into(net, train::load_checkpoint(checkpoint, spec.arch_hash()));
  auto [loss, acc] = train::evaluate(net, *task, cfg.train.batch_size);
  std::printf("holdout_loss %.9g\naccuracy %.9g\n", loss, acc);
}

void run_params(const std::string& preset, double scale, const std::string& policy,
                Index seq_len, Index beam,
                const std::optional<std::string>& json_out) {
  auto spec = models::build_preset(preset, scale, models::QuantPolicy::preset(policy));
  auto rep = models::param_report(spec);
  auto macs = models::mac_counts(spec, seq_len, beam);

  std::printf("%-22s %-14s %10s %6s\n", "tensor", "shape", "params", "bits");
  for (const auto& r : rep.rows)
    std::printf("%-22s %-14s %10lld %6d\n", r.name.c_str(),
                shape_str(r.shape).c_str(), static_cast<long long>(r.count),
                r.precision_bits);
  std::printf("total parameters      %lld\n", static_cast<long long>(rep.total));
  auto pct = [](double f) { return 100.0 * f; };
  std::printf("first LSTM layer      %.2f%%\n", pct(rep.first_lstm_layer_fraction()));
  if (spec.prediction)
    std::printf("prediction network    %.2f%%\n",
                pct(rep.fraction_component(models::Component::kPrediction)));
  std::printf("int4 fraction         %.2f%%\n", pct(rep.fraction_bits(4)));
  std::printf("int8 fraction         %.2f%%\n", pct(rep.fraction_bits(8)));
  std::printf("quantized fraction    %.2f%%\n", pct(rep.fraction_quantized()));
  std::printf("first-layer compute   %.2f%%  (T=%lld, beam=%lld)\n",
              pct(macs.first_lstm_layer() / macs.total()),
              static_cast<long long>(seq_len), static_cast<long long>(beam));

  if (json_out) {
    json j;
    j["preset"] = preset;
    j["scale"] = scale;
    j["policy"] = policy;
    j["total_params"] = rep.total;
    j["first_lstm_layer_fraction"] = rep.first_lstm_layer_fraction();
    j["prediction_fraction"] =
        spec.prediction ? rep.fraction_component(models::Component::kPrediction) : 0.0;
    j["int4_fraction"] = rep.fraction_bits(4);
    j["int8_fraction"] = rep.fraction_bits(8);
    j["fp32_fraction"] = rep.fraction_bits(32);
    j["quantized_fraction"] = rep.fraction_quantized();
    j["first_layer_compute_fraction"] = macs.first_lstm_layer() / macs.total();
    j["rows"] = json::array();
    for (const auto& r : rep.rows)
      j["rows"].push_back({{"name", r.name},
                           {"count", r.count},
                           {"bits", r.precision_bits},
                           {"component", models::component_name(r.comp)}});
    write_file_atomic(*json_out, j.dump(2) + "\n");
  }
}

void run_pack(const std::string& config_path, const std::string& checkpoint,
              const std::string& out_path) {
  RunConfig cfg = parse_config_file(config_path);
  auto spec = cfg.build_model_spec();
  nn::Network<float> net(spec, cfg.train.init_seed);
  train::load_into(net, train::load_checkpoint(checkpoint, spec.arch_hash()));
  auto packed = int4::pack_network(net);
  int4::save_packed(packed, out_path);
  std::size_t packed_bytes = 0;
  for (const auto& [_, p] : packed.packed) packed_bytes += p.bytes.size();
  std::printf("packed %zu weight tensors (%zu nibble bytes) -> %s\n",
              packed.packed.size(), packed_bytes, out_path.c_str());
}

void run_infer(const std::string& config_path, const std::string& packed_path,
               const std::optional<std::string>& compare_checkpoint,
               const std::optional<std::string>& out_path, int decode_steps) {
  RunConfig cfg = parse_config_file(config_path);
  auto spec = cfg.build_model_spec();
  auto file = int4::load_packed(packed_path, spec.arch_hash());
  int4::QuantizedExecutor exec(spec, file);

  if (spec.prediction && spec.lstm.empty()) {
    auto symbols = exec.greedy_decode(0, decode_steps);
    std::ostringstream os;
    for (std::size_t i = 0; i < symbols.size(); ++i)
      os << (i ? " " : "") << symbols[i];
    os << "\n";
    if (out_path) write_file_atomic(*out_path, os.str());
    std::printf("decoded %d steps\n", decode_steps);
    if (compare_checkpoint) {
      nn::Network<float> net(spec, cfg.train.init_seed);
      train::load_into(net, train::load_checkpoint(*compare_checkpoint,
                                                   spec.arch_hash()));
      auto ref = int4::reference_greedy_decode(net, 0, decode_steps);
      int agree = 0;
      for (int i = 0; i < decode_steps; ++i)
        agree += ref[static_cast<std::size_t>(i)] == symbols[static_cast<std::size_t>(i)];
      std::printf("decode agreement: %d/%d (%.2f%%)\n", agree, decode_steps,
                  100.0 * agree / decode_steps);
    }
    return;
  }

  auto task = cfg.build_task();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min<std::size_t>(4, task->holdout_count()); ++i)
    idx.push_back(i);
  auto batch = task->make_batch(idx, true);
  auto out = exec.forward_stack(batch.x);

  std::ostringstream os;
  for (Index r = 0; r < out.rows(); ++r) {
    for (Index c = 0; c < out.cols(); ++c) os << (c ? "," : "") << fmt_g9(out.at(r, c));
    os << "\n";
  }
  if (out_path) write_file_atomic(*out_path, os.str());
  std::printf("ran %lld holdout sequences through the integer path\n",
              static_cast<long long>(idx.size()));

  if (compare_checkpoint) {
    nn::Network<float> net(spec, cfg.train.init_seed);
    train::load_into(net,
                     train::load_checkpoint(*compare_checkpoint, spec.arch_hash()));
    Graph<float> g;
    auto bind = net.bind(g, false);
    Rng drop(1);
    auto want = g.value(net.forward_stack(g, bind, batch.x, drop, false));
    float worst = 0;
    for (Index i = 0; i < out.size(); ++i)
      worst = std::max(worst, std::abs(out[i] - want[i]));
    std::printf("max |int4 - fake-quant| deviation: %.3g\n", double(worst));
  }
}

void run_perf(const std::string& preset, double scale,
              const std::optional<std::string>& device_path, Index seq_len,
              const std::vector<Index>& beams, const std::string& out_csv) {
  auto spec = models::build_preset(preset, scale, models::QuantPolicy::preset("fp32"));
  perf::DeviceProfile dev =
      device_path ? perf::DeviceProfile::load(*device_path) : perf::DeviceProfile{};
  auto rows = perf::sweep(spec, seq_len, beams,
                          {perf::PrecisionPolicy::all(perf::Precision::kFp16, "fp16"),
                           perf::PrecisionPolicy::int4_deployed()},
                          dev);
  write_file_atomic(out_csv, perf::sweep_csv(rows));
  std::printf("%-6s %-10s %-10s %-10s\n", "beam", "encoder", "prediction",
              "end_to_end");
  for (Index b : beams) {
    auto s = perf::int4_speedups(spec, seq_len, b, dev);
    std::printf("%-6lld %-10.3f %-10.3f %-10.3f\n", static_cast<long long>(b),
                s.encoder, s.prediction, s.end_to_end);
  }
  std::printf("wrote %s\n", out_csv.c_str());
}

}  // namespace qlstm::cli
