// fit_sawb.cpp - fits the SAWB coefficient table
//
// For each bit-width, finds the MSE-optimal symmetric clip bound by brute
// sweep on three unit-variance sample families (Gaussian, Laplace, uniform),
// then least-squares fits alpha* ~ c1*sqrt(E y^2) + c2*E|y| across the
// families. Prints the achieved-vs-optimal MSE ratios (the fit residuals that
// matter) and writes the table to the given path.
//
// Usage: fit_sawb [output_path]

#include <Eigen/Dense>

#include <cstdio>
#include <string>
#include <vector>

#include "qlstm/quant.hpp"
#include "qlstm/rng.hpp"

using qlstm::Rng;

namespace {

using Vec = Eigen::ArrayXd;

Vec sample_family(const std::string& family, int n, Rng& rng) {
  Vec y(n);
  if (family == "gaussian") {
    for (int i = 0; i < n; ++i) y[i] = rng.normal();
  } else if (family == "laplace") {
    const double b = 1.0 / std::sqrt(2.0);  // unit variance
    for (int i = 0; i < n; ++i) {
      double u = rng.uniform() - 0.5;
      y[i] = -b * (u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
    }
  } else if (family == "uniform") {
    const double a = std::sqrt(3.0);  // unit variance
    for (int i = 0; i < n; ++i) y[i] = a * (2.0 * rng.uniform() - 1.0);
  } else {
    throw std::runtime_error("unknown family " + family);
  }
  return y;
}

// Fast arithmetic quantization MSE for the sweep (tie behavior is
// irrelevant under a continuous distribution).
double quant_mse(const Vec& y, double alpha, int levels) {
  const double step = 2.0 * alpha / (levels - 1);
  Vec c = y.min(alpha).max(-alpha);
  Vec q = (((c + alpha) / step).round() * step) - alpha;
  return (y - q).square().mean();
}

struct SweepResult {
  double alpha;
  double mse;
};

SweepResult sweep_alpha(const Vec& y, int levels, double lo, double hi, int steps) {
  SweepResult best{lo, 1e300};
  for (int i = 0; i < steps; ++i) {
    double a = lo + (hi - lo) * i / (steps - 1);
    double m = quant_mse(y, a, levels);
    if (m < best.mse) best = {a, m};
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string out_path = argc > 1 ? argv[1] : "data/sawb_coefficients.txt";
  const int n = 1'000'000;
  const std::vector<std::string> families = {"gaussian", "laplace", "uniform"};

  qlstm::quant::SawbTable table;
  table.version = 1;

  std::printf("%-5s %-10s %-10s | per-family MSE ratio vs sweep optimum\n", "bits",
              "c1", "c2");
  for (int bits = 2; bits <= 8; ++bits) {
    const int levels = 1 << bits;
    Eigen::MatrixXd X(3, 2);
    Eigen::VectorXd target(3);
    std::vector<Vec> samples;
    for (std::size_t f = 0; f < families.size(); ++f) {
      Rng r(1000 + 17 * static_cast<std::uint64_t>(f) + static_cast<std::uint64_t>(bits));
      Vec y = sample_family(families[f], n, r);
      double rms = std::sqrt(y.square().mean());
      double mabs = y.abs().mean();
      // coarse-to-fine brute sweep for the optimal clip
      SweepResult coarse = sweep_alpha(y, levels, 0.05 * rms, 6.0 * rms, 150);
      double span = (6.0 - 0.05) * rms / 149.0;
      SweepResult fine =
          sweep_alpha(y, levels, std::max(0.01 * rms, coarse.alpha - span),
                      coarse.alpha + span, 200);
      X(static_cast<Eigen::Index>(f), 0) = rms;
      X(static_cast<Eigen::Index>(f), 1) = mabs;
      target(static_cast<Eigen::Index>(f)) = fine.alpha;
      samples.push_back(std::move(y));
    }
    Eigen::Vector2d c = (X.transpose() * X).ldlt().solve(X.transpose() * target);
    table.coeffs[static_cast<std::size_t>(bits - 2)] = {c(0), c(1)};

    std::printf("%-5d %-10.4f %-10.4f |", bits, c(0), c(1));
    for (std::size_t f = 0; f < families.size(); ++f) {
      double fitted = c(0) * X(static_cast<Eigen::Index>(f), 0) +
                      c(1) * X(static_cast<Eigen::Index>(f), 1);
      double opt_mse = quant_mse(samples[f], target(static_cast<Eigen::Index>(f)),
                                 levels);
      double fit_mse = quant_mse(samples[f], fitted, levels);
      std::printf(" %s=%.4f", families[f].c_str(), fit_mse / opt_mse);
    }
    std::printf("\n");
  }

  table.save(out_path);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}
