// test_perf.cpp - analytical runtime model: calibration targets + invariants
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qlstm/perf.hpp"
#include "qlstm/rng.hpp"

using namespace qlstm;
using namespace qlstm::perf;

namespace {

models::ModelSpec transducer() {
  return models::build_preset("rnnt", 1.0, models::QuantPolicy::preset("fp32"));
}

DeviceProfile random_profile(Rng& rng) {
  DeviceProfile d;
  d.name = "random";
  d.throughput[0] = 1e11 * std::pow(10.0, 2.0 * rng.uniform());
  d.throughput[1] = d.throughput[0] * (1.0 + 2.0 * rng.uniform());
  d.throughput[2] = d.throughput[1] * (1.0 + 2.0 * rng.uniform());
  d.efficiency[0] = 0.3 + 0.7 * rng.uniform();
  // keep effective throughput non-decreasing while efficiency can drop
  double lo8 = d.efficiency[0] * d.throughput[0] / d.throughput[1];
  d.efficiency[1] = lo8 + (d.efficiency[0] - lo8) * rng.uniform();
  double lo4 = d.efficiency[1] * d.throughput[1] / d.throughput[2];
  d.efficiency[2] = lo4 + (d.efficiency[1] - lo4) * rng.uniform();
  d.size_utilization = {{0.0, 0.4 + 0.3 * rng.uniform()},
                        {5e5 + 1e6 * rng.uniform(), 0.75 + 0.2 * rng.uniform()},
                        {4e6 + 4e6 * rng.uniform(), 1.0}};
  d.host_ops_per_s = 1e11 * std::pow(10.0, 2.0 * rng.uniform());
  d.per_call_overhead_s = 1e-9 * std::pow(10.0, 2.0 * rng.uniform());
  d.validate();
  return d;
}

}  // namespace

TEST_CASE("calibrated profile reproduces the target speedup ratios") {
  auto model = transducer();
  DeviceProfile dev;  // built-in calibrated default
  for (Index beam : {Index(4), Index(8), Index(16)}) {
    auto s = int4_speedups(model, 152, beam, dev);
    CHECK(s.encoder == doctest::Approx(2.6).epsilon(0.10));
    CHECK(s.prediction == doctest::Approx(3.3).epsilon(0.10));
    CHECK(s.end_to_end == doctest::Approx(2.6).epsilon(0.10));
  }
}

TEST_CASE("joint time is exactly precision-blind") {
  auto model = transducer();
  DeviceProfile dev;
  WorkloadSpec w16;
  w16.model = &model;
  w16.precision = PrecisionPolicy::all(Precision::kFp16, "fp16");
  WorkloadSpec w4 = w16;
  w4.precision = PrecisionPolicy::int4_deployed();
  WorkloadSpec w8 = w16;
  w8.precision = PrecisionPolicy::all(Precision::kInt8, "int8");
  CHECK(estimate(w16, dev).joint_time == estimate(w4, dev).joint_time);
  CHECK(estimate(w16, dev).joint_time == estimate(w8, dev).joint_time);
}

TEST_CASE("sweep: prediction share grows with beam, e2e ratio stays flat") {
  auto model = transducer();
  DeviceProfile dev;
  auto rows = sweep(model, 152, {4, 8, 16},
                    {PrecisionPolicy::all(Precision::kFp16, "fp16"),
                     PrecisionPolicy::int4_deployed()},
                    dev);
  REQUIRE(rows.size() == 6);

  double prev_share16 = -1, prev_share4 = -1;
  double min_ratio = 1e9, max_ratio = 0;
  for (std::size_t i = 0; i < rows.size(); i += 2) {
    const auto& t16 = rows[i].breakdown;
    const auto& t4 = rows[i + 1].breakdown;
    double share16 = t16.prediction_time / t16.total();
    double share4 = t4.prediction_time / t4.total();
    CHECK(share16 > prev_share16);
    CHECK(share4 > prev_share4);
    prev_share16 = share16;
    prev_share4 = share4;
    double ratio = t16.total() / t4.total();
    min_ratio = std::min(min_ratio, ratio);
    max_ratio = std::max(max_ratio, ratio);
  }
  CHECK((max_ratio - min_ratio) / max_ratio < 0.15);

  // single-row sweep equals a direct estimate
  auto one = sweep(model, 152, {16}, {PrecisionPolicy::int4_deployed()}, dev);
  WorkloadSpec w;
  w.model = &model;
  w.beam = 16;
  w.precision = PrecisionPolicy::int4_deployed();
  CHECK(one[0].breakdown.total() == estimate(w, dev).total());

  auto csv = sweep_csv(rows);
  CHECK(csv.find("beam,policy,encoder_s,prediction_s,joint_s,total_s") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("structural invariants hold for random valid profiles") {
  auto model = transducer();
  Rng rng(401);
  for (int trial = 0; trial < 200; ++trial) {
    DeviceProfile dev = random_profile(rng);

    auto s = int4_speedups(model, 64, 8, dev);
    const double cap = dev.throughput[2] / dev.throughput[0];
    CHECK(s.encoder <= cap + 1e-12);
    CHECK(s.prediction <= cap + 1e-12);

    // Amdahl: end-to-end speedup between min and max component speedups
    double mn = std::min({s.encoder, s.prediction, 1.0});
    double mx = std::max({s.encoder, s.prediction, 1.0});
    CHECK(s.end_to_end >= mn - 1e-12);
    CHECK(s.end_to_end <= mx + 1e-12);

    // monotonicity: quantizing strictly more layers never increases time
    WorkloadSpec w;
    w.model = &model;
    w.beam = 8;
    std::vector<PrecisionPolicy> chain;
    chain.push_back(PrecisionPolicy::all(Precision::kFp16, "p0"));
    PrecisionPolicy p1 = chain.back();
    p1.encoder_rest = Precision::kInt4;
    chain.push_back(p1);
    PrecisionPolicy p2 = p1;
    p2.prediction = Precision::kInt4;
    chain.push_back(p2);
    PrecisionPolicy p3 = p2;
    p3.encoder_first = Precision::kInt4;
    chain.push_back(p3);
    double prev = 1e300;
    for (const auto& pol : chain) {
      w.precision = pol;
      double t = estimate(w, dev).total();
      CHECK(t <= prev + 1e-15);
      prev = t;
    }
  }
}

TEST_CASE("profile validation rejects inconsistent hardware") {
  DeviceProfile d;
  d.throughput = {4e12, 2e12, 8e12};  // int8 below fp16
  CHECK_THROWS_AS(d.validate(), ConfigError);

  DeviceProfile e;
  e.efficiency = {0.9, 0.2, 0.2};  // effective throughput drops at int8
  CHECK_THROWS_AS(e.validate(), ConfigError);

  DeviceProfile f;
  f.size_utilization = {{1e5, 0.5}};  // must start at 0
  CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("device profile file round-trip and the shipped default") {
  DeviceProfile d;  // built-in calibrated values
  std::string tmp = "/tmp/qlstm_dev_test.json";
  d.save(tmp);
  auto e = DeviceProfile::load(tmp);
  CHECK(e.throughput == d.throughput);
  CHECK(e.efficiency == d.efficiency);
  CHECK(e.host_ops_per_s == d.host_ops_per_s);

  auto shipped = DeviceProfile::load(std::string(QLSTM_DATA_DIR) +
                                     "/device_default.json");
  CHECK(shipped.throughput == d.throughput);
  CHECK(shipped.efficiency == d.efficiency);
  CHECK(shipped.size_utilization == d.size_utilization);
  CHECK(shipped.host_ops_per_s == d.host_ops_per_s);
  CHECK(shipped.per_call_overhead_s == d.per_call_overhead_s);
}
