// commands.hpp - CLI command implementations (library-level, testable)
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qlstm/config.hpp"
#include "qlstm/trainer.hpp"

namespace qlstm::cli {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> out;
};

// Frozen metrics CSV: epoch,lr,train_loss,holdout_loss,accuracy followed by
// one pos/neg column pair per activation bound site.
std::string metrics_csv(const std::vector<train::EpochMetrics>& history);

void write_file_atomic(const std::string& path, const std::string& content);

// train/finetune: returns 0, or 2 when training diverged (artifacts of the
// last good state are still written).
int run_train(const std::string& config_path, const Overrides& ov,
              const std::optional<std::string>& from_checkpoint,
              bool allow_mismatch);

void run_eval(const std::string& config_path, const std::string& checkpoint);

void run_params(const std::string& preset, double scale, const std::string& policy,
                Index seq_len, Index beam,
                const std::optional<std::string>& json_out);

void run_pack(const std::string& config_path, const std::string& checkpoint,
              const std::string& out_path);

void run_infer(const std::string& config_path, const std::string& packed_path,
               const std::optional<std::string>& compare_checkpoint,
               const std::optional<std::string>& out_path, int decode_steps);

void run_perf(const std::string& preset, double scale,
              const std::optional<std::string>& device_path, Index seq_len,
              const std::vector<Index>& beams, const std::string& out_csv);

}  // namespace qlstm::cli
