// sawb.cpp - SAWB coefficient table: built-in values and plain-text file I/O
//
// alpha = c1 * sqrt(E[y^2]) + c2 * E[|y|], one coefficient pair per bit-width,
// for full 2^k-level symmetric grids. The numbers are produced by
// tools/fit_sawb (least squares of the sweep-optimal clip bound over
// Gaussian, Laplace and uniform sample families) and shipped both here and
// in data/sawb_coefficients.txt; a unit test keeps the two in sync.

#include "qlstm/quant.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace qlstm::quant {

const SawbTable& SawbTable::builtin() {
  static const SawbTable table = [] {
    SawbTable t;
    t.version = 1;
    t.coeffs = {{
        {3.0999, -2.0565},    // 2 bits
        {7.1943, -6.5183},    // 3 bits
        {11.5608, -11.4276},  // 4 bits
        {16.2430, -16.7755},  // 5 bits
        {20.6227, -21.8080},  // 6 bits
        {25.2227, -27.1021},  // 7 bits
        {25.2258, -26.9993},  // 8 bits
    }};
    return t;
  }();
  return table;
}

SawbTable SawbTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open SAWB table: " + path);
  SawbTable t;
  std::array<bool, 7> seen{};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string trimmed = line.substr(line.find_first_not_of(" \t") == std::string::npos
                                          ? line.size()
                                          : line.find_first_not_of(" \t"));
    if (trimmed.empty() || trimmed[0] == '#') continue;
    std::istringstream ls(trimmed);
    std::string head;
    ls >> head;
    if (head == "version") {
      if (!(ls >> t.version))
        throw IoError(path + ":" + std::to_string(lineno) + ": bad version line");
      continue;
    }
    int bits = 0;
    double c1 = 0, c2 = 0;
    std::istringstream row(trimmed);
    if (!(row >> bits >> c1 >> c2) || bits < 2 || bits > 8)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected 'bits c1 c2'");
    t.coeffs[static_cast<std::size_t>(bits - 2)] = {c1, c2};
    seen[static_cast<std::size_t>(bits - 2)] = true;
  }
  if (t.version <= 0) throw IoError(path + ": missing version line");
  for (int b = 2; b <= 8; ++b)
    if (!seen[static_cast<std::size_t>(b - 2)])
      throw IoError(path + ": missing row for " + std::to_string(b) + " bits");
  return t;
}

void SawbTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write SAWB table: " + path);
  out << "# SAWB clip coefficient table\n"
      << "# alpha = c1*sqrt(E[y^2]) + c2*E[|y|], full 2^k-level symmetric grid\n"
      << "# fitted by tools/fit_sawb on Gaussian/Laplace/uniform samples\n"
      << "version " << version << "\n"
      << "# bits c1 c2\n";
  out << std::fixed << std::setprecision(4);
  for (int b = 2; b <= 8; ++b) {
    const Entry& e = entry(b);
    out << b << " " << e.c1 << " " << e.c2 << "\n";
  }
  if (!out) throw IoError("short write: " + path);
}

}  // namespace qlstm::quant
