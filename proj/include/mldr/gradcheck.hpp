#pragma once

#include "mldr/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mldr {

/// Builds a scalar from leaves it registers on the given tape.
using ScalarFn = std::function<Var(Tape&)>;

/// Largest per-element error |a - n| / max(|a|, |n|, 1e-3) between the tape
/// gradient and a central difference with step h, over every element of every tensor in `wrt`.
double max_gradient_error(const ScalarFn& f, std::span<Tensor* const> wrt, double h = 1e-5);

struct GradcheckReport {
  std::string op;
  std::size_t instances = 0;
  double max_error = 0.0;
  bool passed = false;
};

/// Checks every differentiable op plus the relation and fusion losses on
/// `instances` random inputs each. Passes when every error is <= tolerance.
std::vector<GradcheckReport> run_gradcheck(std::uint64_t seed, std::size_t instances = 10, double tolerance = 1e-4);

}  // namespace mldr
