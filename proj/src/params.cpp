#include "mldr/params.hpp"

#include "mldr/errors.hpp"

#include <algorithm>
#include <cmath>

namespace mldr {

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  items_.push_back(Parameter{std::move(name), std::move(value)});
  return items_.back().value;
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const Parameter& p) { return p.name == name; });
}

Tensor& ParameterSet::operator[](const std::string& name) {
  for (auto& p : items_)
    if (p.name == name) return p.value;
  throw ConfigError("no parameter named '" + name + "'");
}

const Tensor& ParameterSet::operator[](const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return p.value;
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t ParameterSet::count() const {
  std::size_t total = 0;
  for (const auto& p : items_) total += p.value.numel();
  return total;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& p : items_) p.value.set_requires_grad(on);
}

Var ParameterSet::var(Tape& tape, const std::string& name) { return tape.leaf((*this)[name]); }

Tensor uniform_fan_in(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w(Shape{fan_in, fan_out});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

}  // namespace mldr
