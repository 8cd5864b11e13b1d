#pragma once

#include "mldr/autodiff.hpp"
#include "mldr/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mldr {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Named, ordered learnable tensors. Addresses stay stable once built, so
/// tapes may hold references across a forward/backward pass.
class ParameterSet {
 public:
  /// Adds a parameter with requires_grad set. Names must be unique.
  Tensor& add(std::string name, Tensor value);

  Tensor& operator[](const std::string& name);
  const Tensor& operator[](const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter>& items() noexcept { return items_; }
  const std::vector<Parameter>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }

  /// Total learnable scalar count.
  std::size_t count() const;
  void zero_grad();
  void set_requires_grad(bool on);

  /// Tape leaf for a named parameter.
  Var var(Tape& tape, const std::string& name);

 private:
  std::vector<Parameter> items_;
};

/// Weight [fan_in, fan_out] drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_fan_in(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace mldr
