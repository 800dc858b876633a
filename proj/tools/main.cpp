// main.cpp - qlstm command line: train, finetune, eval, params, pack, infer,
// perf. Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "qlstm/commands.hpp"

using namespace qlstm;

int main(int argc, char** argv) {
  CLI::App app{"qlstm - 4-bit quantization-aware LSTM training and inference"};
  app.require_subcommand(1);

  std::string config, from, out, preset = "rnnt", policy = "int4_deploy", device;
  std::string json_out, out_csv = "perf.csv";
  double scale = 1.0;
  bool allow_mismatch = false;
  long long seed = -1;
  int epochs = -1, decode_steps = 200;
  long long seq_len = 152, beam = 16;
  std::vector<long long> beams{4, 8, 16};

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
  };
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override train.seed");
    cmd->add_option("--epochs", epochs, "override train.epochs");
    cmd->add_option("--out", out, "override output directory");
  };
  auto overrides = [&] {
    cli::Overrides ov;
    if (seed >= 0) ov.seed = static_cast<std::uint64_t>(seed);
    if (epochs >= 0) ov.epochs = epochs;
    if (!out.empty()) ov.out = out;
    return ov;
  };

  auto* ctrain = app.add_subcommand("train", "QAT training from scratch");
  add_config(ctrain);
  add_overrides(ctrain);
  ctrain->add_option("--from", from, "optional warm-start checkpoint");
  ctrain->add_flag("--allow-spec-mismatch", allow_mismatch,
                   "load a checkpoint with a different architecture hash");

  auto* cfinetune = app.add_subcommand("finetune", "QAT fine-tuning from a checkpoint");
  add_config(cfinetune);
  add_overrides(cfinetune);
  cfinetune->add_option("--from", from, "pretrained checkpoint")->required();
  cfinetune->add_flag("--allow-spec-mismatch", allow_mismatch);

  auto* ceval = app.add_subcommand("eval", "holdout loss/accuracy of a checkpoint");
  add_config(ceval);
  ceval->add_option("--from", from, "checkpoint")->required();

  auto* cparams = app.add_subcommand("params", "parameter/compute accounting");
  cparams->add_option("--preset", preset, "hmm300 | hmm2000 | rnnt")->required();
  cparams->add_option("--scale", scale, "dimension scale in (0,1]");
  cparams->add_option("--policy", policy, "quantization policy preset");
  cparams->add_option("--seq-len", seq_len, "sequence length for compute shares");
  cparams->add_option("--beam", beam, "beam width for compute shares");
  cparams->add_option("--json", json_out, "also write a JSON report");

  auto* cpack = app.add_subcommand("pack", "pack a checkpoint into INT4 form");
  add_config(cpack);
  cpack->add_option("--from", from, "trained checkpoint")->required();
  cpack->add_option("--out", out, "packed model path")->required();

  auto* cinfer = app.add_subcommand("infer", "run the packed integer path");
  add_config(cinfer);
  cinfer->add_option("--model", device, "packed model file")->required();
  cinfer->add_option("--compare", from,
                     "checkpoint for a fake-quant cross-path comparison");
  cinfer->add_option("--out", out, "write outputs (CSV / symbol stream)");
  cinfer->add_option("--decode-steps", decode_steps, "greedy decode length");

  auto* cperf = app.add_subcommand("perf", "analytical runtime estimates");
  cperf->add_option("--preset", preset, "model preset");
  cperf->add_option("--scale", scale, "dimension scale");
  cperf->add_option("--device", device, "device profile JSON (default: built-in)");
  cperf->add_option("--seq-len", seq_len, "average sequence length");
  cperf->add_option("--beams", beams, "beam widths to sweep");
  cperf->add_option("--out", out_csv, "breakdown CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (ctrain->parsed()) {
      return cli::run_train(config, overrides(),
                            from.empty() ? std::nullopt
                                         : std::make_optional(from),
                            allow_mismatch);
    }
    if (cfinetune->parsed()) {
      return cli::run_train(config, overrides(), from, allow_mismatch);
    }
    if (ceval->parsed()) {
      cli::run_eval(config, from);
    } else if (cparams->parsed()) {
      cli::run_params(preset, scale, policy, seq_len, beam,
                      json_out.empty() ? std::nullopt
                                       : std::make_optional(json_out));
    } else if (cpack->parsed()) {
      cli::run_pack(config, from, out);
    } else if (cinfer->parsed()) {
      cli::run_infer(config, device,
                     from.empty() ? std::nullopt : std::make_optional(from),
                     out.empty() ? std::nullopt : std::make_optional(out),
                     decode_steps);
    } else if (cperf->parsed()) {
      std::vector<Index> bs(beams.begin(), beams.end());
      cli::run_perf(preset, scale,
                    device.empty() ? std::nullopt : std::make_optional(device),
                    seq_len, bs, out_csv);
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
