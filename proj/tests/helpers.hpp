#pragma once

#include "mldr/tensor.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace testing_util {

inline mldr::Tensor randn(mldr::Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  mldr::Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, sd);
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline std::vector<double> values(const mldr::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : 1e300;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace testing_util
