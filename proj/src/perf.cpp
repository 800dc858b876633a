// perf.cpp - runtime estimation and device profile I/O

#include "qlstm/perf.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace qlstm::perf {

using nlohmann::json;

double DeviceProfile::layer_utilization(double macs_per_call) const {
  double u = 1.0;
  for (const auto& [threshold, mult] : size_utilization) {
    if (macs_per_call >= threshold) u = mult;
  }
  return u;
}

void DeviceProfile::validate() const {
  for (double t : throughput)
    if (t <= 0) throw ConfigError("device throughput must be positive");
  for (double e : efficiency)
    if (e <= 0 || e > 1) throw ConfigError("device efficiency must be in (0,1]");
  if (!(throughput[0] <= throughput[1] && throughput[1] <= throughput[2]))
    throw ConfigError("device throughput must not decrease with lower precision");
  const double e16 = throughput[0] * efficiency[0];
  const double e8 = throughput[1] * efficiency[1];
  const double e4 = throughput[2] * efficiency[2];
  if (!(e16 <= e8 && e8 <= e4))
    throw ConfigError("effective throughput must not decrease with lower precision");
  if (size_utilization.empty() || size_utilization.front().first != 0.0)
    throw ConfigError("size utilization table must start at threshold 0");
  double prev = -1;
  for (const auto& [threshold, mult] : size_utilization) {
    if (threshold <= prev) throw ConfigError("utilization thresholds must ascend");
    if (mult <= 0 || mult > 1)
      throw ConfigError("utilization multipliers must be in (0,1]");
    prev = threshold;
  }
  if (host_ops_per_s <= 0 || per_call_overhead_s < 0)
    throw ConfigError("host rate must be positive, overhead non-negative");
}

PrecisionPolicy PrecisionPolicy::all(Precision p, const std::string& name) {
  PrecisionPolicy pol;
  pol.name = name;
  pol.encoder_first = pol.encoder_rest = pol.prediction = pol.fc = p;
  return pol;
}

PrecisionPolicy PrecisionPolicy::int4_deployed() {
  PrecisionPolicy pol = all(Precision::kInt4, "int4");
  pol.encoder_first = Precision::kFp16;  // first layer kept in high precision
  return pol;
}

RuntimeBreakdown estimate(const WorkloadSpec& w, const DeviceProfile& device) {
  if (w.model == nullptr) throw ConfigError("estimate: missing model");
  device.validate();
  auto macs = models::mac_counts(*w.model, w.seq_len, w.beam, w.expansion);
  RuntimeBreakdown out;
  for (const auto& row : macs.rows) {
    ComponentTime ct;
    ct.name = row.name;
    ct.comp = row.comp;
    if (row.comp == models::Component::kJoint) {
      ct.host = true;
      ct.seconds =
          row.macs / device.host_ops_per_s + device.per_call_overhead_s * row.calls;
      out.joint_time += ct.seconds;
    } else {
      Precision p = w.precision.encoder_rest;
      if (row.comp == models::Component::kPrediction) {
        p = w.precision.prediction;
      } else if (row.lstm_index == 0) {
        p = w.precision.encoder_first;
      } else if (row.lstm_index < 0) {
        p = w.precision.fc;
      }
      ct.precision = p;
      const double eff = device.throughput_of(p) * device.efficiency_of(p) *
                         device.layer_utilization(row.macs_per_call);
      ct.seconds = row.macs / eff + device.per_call_overhead_s * row.calls;
      (row.comp == models::Component::kPrediction ? out.prediction_time
                                                  : out.encoder_time) += ct.seconds;
    }
    out.rows.push_back(std::move(ct));
  }
  return out;
}

std::vector<SweepRow> sweep(const models::ModelSpec& model, Index seq_len,
                            const std::vector<Index>& beams,
                            const std::vector<PrecisionPolicy>& policies,
                            const DeviceProfile& device) {
  std::vector<SweepRow> rows;
  for (Index b : beams) {
    for (const auto& pol : policies) {
      WorkloadSpec w;
      w.model = &model;
      w.seq_len = seq_len;
      w.beam = b;
      w.precision = pol;
      rows.push_back({b, pol.name, estimate(w, device)});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "beam,policy,encoder_s,prediction_s,joint_s,total_s\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(r.beam), r.policy.c_str(),
                  r.breakdown.encoder_time, r.breakdown.prediction_time,
                  r.breakdown.joint_time, r.breakdown.total());
    os << buf;
  }
  return os.str();
}

SpeedupReport int4_speedups(const models::ModelSpec& model, Index seq_len, Index beam,
                            const DeviceProfile& device) {
  WorkloadSpec base;
  base.model = &model;
  base.seq_len = seq_len;
  base.beam = beam;
  base.precision = PrecisionPolicy::all(Precision::kFp16, "fp16");
  WorkloadSpec quant = base;
  quant.precision = PrecisionPolicy::int4_deployed();
  auto t16 = estimate(base, device);
  auto t4 = estimate(quant, device);
  SpeedupReport s;
  s.encoder = t16.encoder_time / t4.encoder_time;
  s.prediction = t16.prediction_time / t4.prediction_time;
  s.end_to_end = t16.total() / t4.total();
  return s;
}

// ---------------------------------------------------------------------------
// profile files
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

std::array<double, 3> parse_triple(const json& j, const std::string& where) {
  reject_unknown(j, {"fp16", "int8", "int4"}, where);
  return {j.at("fp16").get<double>(), j.at("int8").get<double>(),
          j.at("int4").get<double>()};
}

}  // namespace

DeviceProfile DeviceProfile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open device profile: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  reject_unknown(j,
                 {"name", "throughput_ops_per_s", "efficiency", "size_utilization",
                  "host_ops_per_s", "per_call_overhead_s"},
                 path);
  DeviceProfile d;
  d.name = j.value("name", "unnamed");
  d.throughput = parse_triple(j.at("throughput_ops_per_s"), "throughput_ops_per_s");
  d.efficiency = parse_triple(j.at("efficiency"), "efficiency");
  d.size_utilization.clear();
  for (const auto& row : j.at("size_utilization")) {
    if (!row.is_array() || row.size() != 2)
      throw ConfigError(path + ": size_utilization rows are [threshold, multiplier]");
    d.size_utilization.emplace_back(row[0].get<double>(), row[1].get<double>());
  }
  d.host_ops_per_s = j.at("host_ops_per_s").get<double>();
  d.per_call_overhead_s = j.at("per_call_overhead_s").get<double>();
  d.validate();
  return d;
}

void DeviceProfile::save(const std::string& path) const {
  json j;
  j["name"] = name;
  j["throughput_ops_per_s"] = {{"fp16", throughput[0]},
                               {"int8", throughput[1]},
                               {"int4", throughput[2]}};
  j["efficiency"] = {{"fp16", efficiency[0]},
                     {"int8", efficiency[1]},
                     {"int4", efficiency[2]}};
  j["size_utilization"] = json::array();
  for (const auto& [t, m] : size_utilization)
    j["size_utilization"].push_back({t, m});
  j["host_ops_per_s"] = host_ops_per_s;
  j["per_call_overhead_s"] = per_call_overhead_s;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write device profile: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace qlstm::perf
