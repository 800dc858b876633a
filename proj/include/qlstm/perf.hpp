// perf.hpp - analytical inference runtime model
//
// A two-parameter-per-precision co-processor model: peak throughput and an
// efficiency (utilization) factor per precision, an additional per-layer
// utilization keyed by work per kernel call, a host rate for the
// control-heavy joint/beam bookkeeping, and fixed per-call overheads:
//
//   time(layer)  = macs / (throughput(prec) * eff(prec) * layer_util(layer))
//                + overhead * calls
//   time(joint)  = macs / host_rate + overhead * calls     (precision-blind)
//
// The shipped default profile (data/device_default.json) is calibrated so an
// INT4 deployment of the full-scale transducer preset reproduces the target
// ratios documented in the README; the fit procedure is in calibrate().
#pragma once

#include <array>
#include <string>
#include <vector>

#include "qlstm/model.hpp"

namespace qlstm::perf {

enum class Precision { kFp16 = 0, kInt8 = 1, kInt4 = 2 };

inline const char* precision_name(Precision p) {
  switch (p) {
    case Precision::kFp16: return "fp16";
    case Precision::kInt8: return "int8";
    case Precision::kInt4: return "int4";
  }
  return "?";
}

struct DeviceProfile {
  std::string name = "default";
  // co-processor peak ops/s per precision, FP16/INT8/INT4 order
  std::array<double, 3> throughput{2.0e12, 4.0e12, 8.0e12};
  // precision efficiency in (0,1]
  std::array<double, 3> efficiency{0.60, 0.55, 0.495};
  // size-dependent utilization: thresholds on MACs per kernel call, with the
  // multiplier of the largest threshold <= work applying (ascending order)
  std::vector<std::pair<double, double>> size_utilization{
      {0.0, 0.55}, {1e6, 0.80}, {4e6, 1.00}};
  double host_ops_per_s = 2.0e12;  // control-heavy work mapped to the host
  double per_call_overhead_s = 1.0e-8;

  double throughput_of(Precision p) const {
    return throughput[static_cast<std::size_t>(p)];
  }
  double efficiency_of(Precision p) const {
    return efficiency[static_cast<std::size_t>(p)];
  }
  double layer_utilization(double macs_per_call) const;

  // throughput and effective throughput must not decrease with precision
  void validate() const;

  static DeviceProfile load(const std::string& path);
  void save(const std::string& path) const;
};

// Per-component precision assignment. The joint component always executes on
// the host and ignores its precision label.
struct PrecisionPolicy {
  std::string name = "fp16";
  Precision encoder_first = Precision::kFp16;
  Precision encoder_rest = Precision::kFp16;
  Precision prediction = Precision::kFp16;
  Precision fc = Precision::kFp16;

  static PrecisionPolicy all(Precision p, const std::string& name);
  // the deployed INT4 configuration: first encoder layer kept FP16
  static PrecisionPolicy int4_deployed();
};

struct WorkloadSpec {
  const models::ModelSpec* model = nullptr;
  Index seq_len = 152;
  Index beam = 16;
  double expansion = 1.0;
  PrecisionPolicy precision;
};

struct ComponentTime {
  std::string name;
  models::Component comp;
  Precision precision = Precision::kFp16;
  double seconds = 0;
  bool host = false;
};

struct RuntimeBreakdown {
  double encoder_time = 0;
  double prediction_time = 0;
  double joint_time = 0;
  std::vector<ComponentTime> rows;

  double total() const { return encoder_time + prediction_time + joint_time; }
};

// MAC counts -> seconds under a device profile.
RuntimeBreakdown estimate(const WorkloadSpec& workload, const DeviceProfile& device);

// One row per (beam, policy) pair; emitted by the CLI as CSV.
struct SweepRow {
  Index beam = 0;
  std::string policy;
  RuntimeBreakdown breakdown;
};

std::vector<SweepRow> sweep(const models::ModelSpec& model, Index seq_len,
                            const std::vector<Index>& beams,
                            const std::vector<PrecisionPolicy>& policies,
                            const DeviceProfile& device);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// Speedups of the deployed INT4 policy over all-FP16 at a given beam.
struct SpeedupReport {
  double encoder = 0;
  double prediction = 0;
  double end_to_end = 0;
};
SpeedupReport int4_speedups(const models::ModelSpec& model, Index seq_len, Index beam,
                            const DeviceProfile& device);

}  // namespace qlstm::perf
