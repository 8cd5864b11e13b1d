#include "mldr/gradcheck.hpp"

#include "mldr/losses.hpp"
#include "mldr/msdf.hpp"
#include "mldr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>

namespace mldr {

double max_gradient_error(const ScalarFn& f, std::span<Tensor* const> wrt, double h) {
  for (Tensor* t : wrt) {
    t->set_requires_grad(true);
    t->zero_grad();
  }
  {
    Tape tape;
    tape.backward(f(tape));
  }
  double worst = 0.0;
  for (Tensor* t : wrt) {
    auto data = t->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      double up;
      {
        Tape tape;
        up = f(tape).item();
      }
      data[i] = saved - h;
      double down;
      {
        Tape tape;
        down = f(tape).item();
      }
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = t->grad()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

namespace {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t dim(std::size_t lo = 1, std::size_t hi = 4) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  Tensor normal(Shape shape, double sd = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, sd);
    for (double& v : t.data()) v = d(rng_);
    return t;
  }
  Tensor uniform(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data()) v = d(rng_);
    return t;
  }
  int label(std::size_t n) { return static_cast<int>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_)); }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Contracts a tensor-valued op with fixed random weights so every output element matters.
Var contract(Var out, const Tensor& weights) { return sum(out * out.tape().constant(weights)); }

struct Case {
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, std::vector<Var>&)> build;
  // extra tensors that are not copied (e.g. parameters of a module)
  std::vector<Tensor*> extra;
};

using Maker = std::function<Case(Gen&)>;

/// Wraps an op whose output is tensor-valued: the scalar is sum(op(...) * R).
Maker tensor_op(std::function<std::vector<Tensor>(Gen&)> inputs, std::function<Var(std::vector<Var>&)> op) {
  return [inputs, op](Gen& g) {
    Case c;
    c.inputs = inputs(g);
    std::vector<Var> probe_vars;
    Tape probe;
    for (auto& t : c.inputs) probe_vars.push_back(probe.constant(t));
    const Shape out_shape = op(probe_vars).shape();
    auto weights = std::make_shared<Tensor>(g.normal(out_shape));
    c.build = [op, weights](Tape&, std::vector<Var>& v) { return contract(op(v), *weights); };
    return c;
  };
}

std::map<std::string, Maker> makers() {
  std::map<std::string, Maker> m;
  const auto same2 = [](Gen& g) {
    Shape s{g.dim(), g.dim()};
    return std::vector<Tensor>{g.normal(s), g.normal(s)};
  };
  const auto bcast = [](Gen& g) {
    const std::size_t a = g.dim(), b = g.dim(), c = g.dim();
    return std::vector<Tensor>{g.normal({a, b, c}), g.normal({b, 1})};
  };
  const auto one = [](Gen& g) { return std::vector<Tensor>{g.normal({g.dim(), g.dim(), g.dim()})}; };

  m["add"] = tensor_op(same2, [](auto& v) { return v[0] + v[1]; });
  m["add_broadcast"] = tensor_op(bcast, [](auto& v) { return v[0] + v[1]; });
  m["sub"] = tensor_op(bcast, [](auto& v) { return v[0] - v[1]; });
  m["mul"] = tensor_op(bcast, [](auto& v) { return v[0] * v[1]; });
  m["div"] = tensor_op(
      [](Gen& g) {
        const std::size_t a = g.dim(), b = g.dim();
        return std::vector<Tensor>{g.normal({a, b}), g.uniform({a, b}, 0.5, 2.0)};
      },
      [](auto& v) { return v[0] / v[1]; });
  m["scale"] = tensor_op(one, [](auto& v) { return scale(v[0], -1.7); });
  m["add_scalar"] = tensor_op(one, [](auto& v) { return add_scalar(v[0], 0.3); });
  m["neg"] = tensor_op(one, [](auto& v) { return neg(v[0]); });
  m["exp"] = tensor_op(one, [](auto& v) { return exp(v[0]); });
  m["log"] = tensor_op([](Gen& g) { return std::vector<Tensor>{g.uniform({g.dim(), g.dim()}, 0.2, 3.0)}; },
                       [](auto& v) { return log(v[0]); });
  m["gelu"] = tensor_op(one, [](auto& v) { return gelu(v[0]); });
  m["reshape"] = tensor_op(
      [](Gen& g) { return std::vector<Tensor>{g.normal({2, 3, g.dim()})}; },
      [](auto& v) { return reshape(v[0], Shape{6, v[0].shape()[2]}); });
  m["permute"] = tensor_op(one, [](auto& v) { return permute(v[0], {2, 0, 1}); });
  m["transpose"] = tensor_op(one, [](auto& v) { return transpose(v[0]); });
  m["expand"] = tensor_op([](Gen& g) { return std::vector<Tensor>{g.normal({1, g.dim()})}; },
                          [](auto& v) { return expand(v[0], Shape{3, v[0].shape()[1]}); });
  m["stack"] = tensor_op(same2, [](auto& v) { return stack(std::span<const Var>(v), 1); });
  m["concat"] = tensor_op(
      [](Gen& g) {
        const std::size_t b = g.dim();
        return std::vector<Tensor>{g.normal({b, g.dim()}), g.normal({b, g.dim()})};
      },
      [](auto& v) { return concat(std::span<const Var>(v), 1); });
  m["narrow"] = tensor_op([](Gen& g) { return std::vector<Tensor>{g.normal({g.dim(), g.dim(2, 5)})}; },
                          [](auto& v) { return narrow(v[0], 1, 1, v[0].shape()[1] - 1); });
  m["sum"] = tensor_op(one, [](auto& v) { return sum(v[0]); });
  m["sum_axis"] = tensor_op(one, [](auto& v) { return sum(v[0], 1); });
  m["mean"] = tensor_op(one, [](auto& v) { return mean(v[0]); });
  m["mean_axis"] = tensor_op(one, [](auto& v) { return mean(v[0], -1, true); });
  m["global_avg_pool"] = tensor_op([](Gen& g) { return std::vector<Tensor>{g.normal({2, g.dim(), g.dim(), g.dim()})}; },
                                   [](auto& v) { return global_avg_pool(v[0]); });
  m["matmul"] = tensor_op(
      [](Gen& g) {
        const std::size_t b = g.dim(), n = g.dim(), k = g.dim(), p = g.dim();
        return std::vector<Tensor>{g.normal({b, n, k}), g.normal({k, p})};
      },
      [](auto& v) { return matmul(v[0], v[1]); });
  m["linear"] = tensor_op(
      [](Gen& g) {
        const std::size_t b = g.dim(), i = g.dim(), o = g.dim();
        return std::vector<Tensor>{g.normal({b, i}), g.normal({i, o}), g.normal({o})};
      },
      [](auto& v) { return linear(v[0], v[1], v[2]); });
  m["softmax"] = tensor_op(one, [](auto& v) { return softmax(v[0], -1); });
  m["log_softmax"] = tensor_op(one, [](auto& v) { return log_softmax(v[0], 1); });
  m["softmax_probs"] = tensor_op([](Gen& g) { return std::vector<Tensor>{g.normal({g.dim(), g.dim(2, 5)}, 2.0)}; },
                                 [](auto& v) { return softmax_probs(v[0], 2.5); });
  m["class_wise_relation"] =
      tensor_op([](Gen& g) { return std::vector<Tensor>{g.normal({g.dim(), g.dim(2, 5)}, 2.0)}; },
                [](auto& v) { return class_wise_relation(v[0], 1.5).values; });
  m["sample_wise_relation"] =
      tensor_op([](Gen& g) { return std::vector<Tensor>{g.normal({g.dim(2, 5), g.dim(2, 5)}, 2.0)}; },
                [](auto& v) { return sample_wise_relation(v[0], 1.5).values; });

  m["cross_entropy"] = [](Gen& g) {
    Case c;
    const std::size_t b = g.dim(), n = g.dim(2, 5);
    c.inputs = {g.normal({b, n})};
    std::vector<int> labels(b);
    for (int& l : labels) l = g.label(n);
    c.build = [labels](Tape&, std::vector<Var>& v) { return cross_entropy(v[0], labels); };
    return c;
  };
  m["kl_divergence"] = [](Gen& g) {
    Case c;
    const std::size_t b = g.dim(), n = g.dim(2, 5);
    c.inputs = {g.normal({b, n}), g.normal({b, n})};
    c.build = [](Tape&, std::vector<Var>& v) { return kl_divergence(softmax(v[0], -1), softmax(v[1], -1)); };
    return c;
  };
  m["dfra_loss"] = [](Gen& g) {
    Case c;
    const std::size_t b = g.dim(2, 5), n = g.dim(2, 5);
    c.inputs = {g.normal({b, n}, 2.0)};
    auto teacher = std::make_shared<Tensor>(g.normal({b, n}, 2.0));
    DistillHyperparams hp;
    hp.temperature = 2.0;
    hp.lambda = 0.7;
    c.build = [hp, teacher](Tape& tape, std::vector<Var>& v) { return dfra_loss(v[0], tape.constant(*teacher), hp); };
    return c;
  };
  m["msdf_loss"] = [](Gen& g) {
    Case c;
    const std::size_t b = g.dim(2, 4), n = g.dim(2, 4);
    const std::size_t cs = g.dim(2, 3), dt = g.dim(2, 3), l = g.dim(1, 3);
    c.inputs = {g.normal({b, cs, 2, 2}), g.normal({b, 1 + l, dt})};
    auto teacher = std::make_shared<Tensor>(g.normal({b, n}, 2.0));
    MsdfLayout layout;
    layout.stages = {StageShape{ArchKind::Spatial, cs}, StageShape{ArchKind::TokenBased, dt}};
    layout.token_dim = dt;
    layout.gate_hidden = 3;
    layout.n_classes = n;
    auto params = std::make_shared<MsdfParams>(MsdfParams::init(layout, g.rng()));
    // The zero-initialized final gate layer would hide the first layer's gradient.
    for (auto& p : params->params.items()) p.value = g.normal(p.value.shape(), 0.5);
    for (auto& p : params->params.items()) c.extra.push_back(&p.value);
    DistillHyperparams hp;
    hp.temperature = 2.0;
    c.build = [params, hp, teacher](Tape& tape, std::vector<Var>& v) {
      std::vector<StageOutput> stages{{v[0], ArchKind::Spatial, 3}, {v[1], ArchKind::TokenBased, 4}};
      return msdf_loss(stages, tape.constant(*teacher), *params, hp);
    };
    return c;
  };
  return m;
}

}  // namespace

std::vector<GradcheckReport> run_gradcheck(std::uint64_t seed, std::size_t instances, double tolerance) {
  std::vector<GradcheckReport> out;
  std::uint64_t counter = 0;
  for (const auto& [name, make] : makers()) {
    GradcheckReport rep;
    rep.op = name;
    rep.instances = instances;
    for (std::size_t i = 0; i < instances; ++i) {
      Gen g(derive_seed(seed, static_cast<std::uint64_t>(Stream::Probe), counter++));
      Case c = make(g);
      std::vector<Tensor*> wrt;
      for (auto& t : c.inputs) wrt.push_back(&t);
      wrt.insert(wrt.end(), c.extra.begin(), c.extra.end());
      auto& build = c.build;
      auto& inputs = c.inputs;
      const ScalarFn f = [&](Tape& tape) {
        std::vector<Var> vars;
        for (auto& t : inputs) vars.push_back(tape.leaf(t));
        return build(tape, vars);
      };
      rep.max_error = std::max(rep.max_error, max_gradient_error(f, wrt, 1e-5));
    }
    rep.passed = rep.max_error <= tolerance;
    out.push_back(rep);
  }
  return out;
}

}  // namespace mldr
