#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "edgellm/common.hpp"

namespace edgellm {

// Fraction of the rotational circle each frequency channel explores when
// relative distances are bounded by L: coverage_i = min(1, theta_i * L / 2pi)
// with theta_i = base^(-2i/d). Lower-frequency channels (larger i) stay
// untouched until L grows.
struct CoverageProfile {
  std::vector<double> theta;
  std::vector<double> covered;

  std::string to_csv() const {
    std::ostringstream os;
    os << "freq_index,theta,coverage\n";
    for (size_t i = 0; i < theta.size(); ++i) {
      os << i << "," << theta[i] << "," << covered[i] << "\n";
    }
    return os.str();
  }
};

inline CoverageProfile angular_coverage(int64_t max_relative_distance, int64_t dims, double base) {
  if (max_relative_distance < 0) throw ContractError("angular_coverage: L must be >= 0");
  if (dims < 2 || dims % 2 != 0) throw ContractError("angular_coverage: dims must be even");
  CoverageProfile profile;
  const int64_t half = dims / 2;
  for (int64_t i = 0; i < half; ++i) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dims));
    profile.theta.push_back(theta);
    profile.covered.push_back(
        std::min(1.0, theta * static_cast<double>(max_relative_distance) / (2.0 * M_PI)));
  }
  return profile;
}

}  // namespace edgellm
