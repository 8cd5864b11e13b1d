#include "mldr/autodiff.hpp"

#include "mldr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mldr {

// ---------------------------------------------------------------- tape

const Tensor& Var::value() const { return tape_->nodes_[id_].value(); }
bool Var::needs_grad() const { return tape_->nodes_[id_].needs_grad; }

const Tensor& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[self_].inputs[k]].value();
}
const Tensor& BackwardContext::output() const { return tape_.nodes_[self_].value(); }
std::span<const double> BackwardContext::grad_out() const { return tape_.nodes_[self_].grad; }
bool BackwardContext::wants(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[self_].inputs[k]].needs_grad;
}
std::span<double> BackwardContext::grad_in(std::size_t k) {
  auto& node = tape_.nodes_[tape_.nodes_[self_].inputs[k]];
  if (node.grad.empty()) node.grad.assign(node.value().numel(), 0.0);
  return node.grad;
}

Var Tape::leaf(Tensor& t) {
  Node node;
  node.leaf = &t;
  node.needs_grad = t.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  Node node;
  node.owned = std::move(t);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractError("op mixes values from different tapes");
    node.inputs.push_back(v.id());
    node.needs_grad = node.needs_grad || nodes_[v.id()].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (!loss.valid() || &loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  const Tensor& lv = loss.value();
  if (lv.numel() != 1) throw ContractError("backward needs a scalar loss, got shape " + to_string(lv.shape()));
  for (auto& n : nodes_) n.grad.clear();
  nodes_[loss.id()].grad.assign(1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.needs_grad) continue;
    if (node.leaf != nullptr && node.leaf->requires_grad()) {
      auto g = node.leaf->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += node.grad[k];
    }
    if (node.backward) {
      BackwardContext ctx(*this, i);
      node.backward(ctx);
    }
  }
  for (auto& n : nodes_) {
    n.grad.clear();
    n.grad.shrink_to_fit();
  }
}

// ---------------------------------------------------------------- helpers

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class F, class DA, class DB>
Var binary_op(Var a, Var b, F f, DA dfda, DB dfdb) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(x[i], y[i]);
    return a.tape().record(std::move(out), {a, b}, [dfda, dfdb](BackwardContext& ctx) {
      const auto& x = ctx.input(0);
      const auto& y = ctx.input(1);
      auto g = ctx.grad_out();
      if (ctx.wants(0)) {
        auto ga = ctx.grad_in(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfda(x[i], y[i]);
      }
      if (ctx.wants(1)) {
        auto gb = ctx.grad_in(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * dfdb(x[i], y[i]);
      }
    });
  }
  const Shape shape = broadcast_shapes(x.shape(), y.shape());
  auto map_a = broadcast_index_map(x.shape(), shape);
  auto map_b = broadcast_index_map(y.shape(), shape);
  Tensor out(shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(x[map_a[i]], y[map_b[i]]);
  return a.tape().record(std::move(out), {a, b},
                         [dfda, dfdb, map_a = std::move(map_a), map_b = std::move(map_b)](BackwardContext& ctx) {
                           const auto& x = ctx.input(0);
                           const auto& y = ctx.input(1);
                           auto g = ctx.grad_out();
                           if (ctx.wants(0)) {
                             auto ga = ctx.grad_in(0);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               ga[map_a[i]] += g[i] * dfda(x[map_a[i]], y[map_b[i]]);
                           }
                           if (ctx.wants(1)) {
                             auto gb = ctx.grad_in(1);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               gb[map_b[i]] += g[i] * dfdb(x[map_a[i]], y[map_b[i]]);
                           }
                         });
}

/// Unary op whose derivative depends on input and output values.
template <class F, class D>
Var unary_op(Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(x[i]);
  return a.tape().record(std::move(out), {a}, [dfdx](BackwardContext& ctx) {
    const auto& x = ctx.input(0);
    const auto& y = ctx.output();
    auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(x[i], y[i]);
  });
}

/// Out-element -> in-element gather; backward scatters.
Var gather_op(Var a, Shape out_shape, std::vector<std::size_t> map) {
  const Tensor& x = a.value();
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[map[i]];
  return a.tape().record(std::move(out), {a}, [map = std::move(map)](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
  });
}

constexpr double kLogFloor = 1e-12;

}  // namespace

// ---------------------------------------------------------------- elementwise

Var detach(Var a) { return a.tape().constant(a.value()); }

Var add(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double factor) {
  return unary_op(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  return unary_op(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary_op(
      a, [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Var gelu(Var a) {
  static const double c = std::sqrt(2.0 / std::numbers::pi);
  return unary_op(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(c * (x + 0.044715 * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
      });
}

// ---------------------------------------------------------------- shape

Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return a.tape().record(x.reshaped(std::move(shape)), {a}, [](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var permute(Var a, std::vector<std::size_t> axes) {
  const Shape& in = a.value().shape();
  if (axes.size() != in.size()) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " + to_string(in));
  }
  std::vector<bool> seen(in.size(), false);
  Shape out(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size() || seen[axes[i]]) throw DimensionError("permute: invalid axis order");
    seen[axes[i]] = true;
    out[i] = in[axes[i]];
  }
  const auto in_strides = row_major_strides(in);
  std::vector<std::size_t> strides(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) strides[i] = in_strides[axes[i]];
  const std::size_t total = numel(out);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = src;
    for (std::size_t ax = out.size(); ax-- > 0;) {
      if (++counter[ax] < out[ax]) {
        src += strides[ax];
        break;
      }
      src -= strides[ax] * (out[ax] - 1);
      counter[ax] = 0;
    }
  }
  return gather_op(a, std::move(out), std::move(map));
}

Var transpose(Var a) {
  const std::size_t r = a.value().rank();
  if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(a.shape()));
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(a, std::move(axes));
}

Var expand(Var a, Shape shape) {
  auto map = broadcast_index_map(a.value().shape(), shape);
  return gather_op(a, std::move(shape), std::move(map));
}

Var stack(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  const Shape& part_shape = parts[0].shape();
  for (const Var& p : parts) {
    if (p.shape() != part_shape) {
      throw DimensionError("stack: shape " + to_string(p.shape()) + " differs from " + to_string(part_shape));
    }
  }
  const std::size_t ax = normalize_axis(axis, part_shape.size() + 1);
  Shape out_shape = part_shape;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(ax), parts.size());
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= part_shape[i];
  const std::size_t inner = numel(part_shape) / outer;
  const std::size_t count = parts.size();
  Tensor out(out_shape);
  for (std::size_t s = 0; s < count; ++s) {
    const Tensor& src = parts[s].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * count + s) * inner));
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), std::move(inputs), [outer, inner, count](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    for (std::size_t s = 0; s < count; ++s) {
      if (!ctx.wants(s)) continue;
      auto gs = ctx.grad_in(s);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < inner; ++k) gs[o * inner + k] += g[(o * count + s) * inner + k];
    }
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Shape& sp = p.shape();
    bool ok = sp.size() == first.size();
    for (std::size_t i = 0; ok && i < sp.size(); ++i) ok = i == ax || sp[i] == first[i];
    if (!ok) throw DimensionError("concat: shape " + to_string(sp) + " does not match " + to_string(first));
    widths.push_back(sp[ax]);
    out_shape[ax] += sp[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& src = parts[p].value();
    const std::size_t chunk = widths[p] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * s.n * s.inner + offset * s.inner));
    }
    offset += widths[p];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), std::move(inputs), [s, widths](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t chunk = widths[p] * s.inner;
      if (ctx.wants(p)) {
        auto gp = ctx.grad_in(p);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t k = 0; k < chunk; ++k) gp[o * chunk + k] += g[o * s.n * s.inner + offset * s.inner + k];
      }
      offset += widths[p];
    }
  });
}

Var narrow(Var a, int axis, std::size_t start, std::size_t length) {
  const Shape& in = a.value().shape();
  const std::size_t ax = normalize_axis(axis, in.size());
  if (start + length > in[ax]) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of size " + std::to_string(in[ax]));
  }
  const AxisSplit s = split_at(in, ax);
  Shape out = in;
  out[ax] = length;
  std::vector<std::size_t> map;
  map.reserve(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < length; ++j)
      for (std::size_t k = 0; k < s.inner; ++k) map.push_back((o * s.n + start + j) * s.inner + k);
  return gather_op(a, std::move(out), std::move(map));
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  const Tensor& x = a.value();
  return a.tape().record(Tensor::scalar(x.array().sum()), {a}, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    for (double& v : ctx.grad_in(0)) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var sum(Var a, int axis, bool keepdim) {
  const Shape& in = a.value().shape();
  const std::size_t ax = normalize_axis(axis, in.size());
  const AxisSplit s = split_at(in, ax);
  Shape out_shape = in;
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  const Tensor& x = a.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t k = 0; k < s.inner; ++k) out[o * s.inner + k] += x[(o * s.n + j) * s.inner + k];
  return a.tape().record(std::move(out), {a}, [s](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t k = 0; k < s.inner; ++k) gx[(o * s.n + j) * s.inner + k] += g[o * s.inner + k];
  });
}

Var mean(Var a, int axis, bool keepdim) {
  const std::size_t n = a.value().dim(axis);
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(n));
}

Var global_avg_pool(Var a) {
  const Shape& in = a.value().shape();
  if (in.size() < 3) throw DimensionError("global_avg_pool needs rank >= 3, got " + to_string(in));
  const std::size_t area = in[in.size() - 1] * in[in.size() - 2];
  Shape out_shape(in.begin(), in.end() - 2);
  const Tensor& x = a.value();
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(area);
  for (std::size_t o = 0; o < out.numel(); ++o) {
    double acc = 0.0;
    for (std::size_t k = 0; k < area; ++k) acc += x[o * area + k];
    out[o] = acc * inv;
  }
  return a.tape().record(std::move(out), {a}, [area, inv](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t o = 0; o < g.size(); ++o)
      for (std::size_t k = 0; k < area; ++k) gx[o * area + k] += g[o] * inv;
  });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  const Shape& sa = a.value().shape();
  const Shape& sb = b.value().shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw DimensionError("matmul: cannot contract " + to_string(sa) + " with " + to_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t p = sb[sb.size() - 1];
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch dimensions of " + to_string(sa) + " and " + to_string(sb) +
                         " do not broadcast");
  }
  auto map_a = broadcast_index_map(batch_a, batch);
  auto map_b = broadcast_index_map(batch_b, batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(p);
  Tensor out(out_shape);
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < map_a.size(); ++i) {
    ConstMatrixMap ma(x.data().data() + map_a[i] * m * k, ei(m), ei(k));
    ConstMatrixMap mb(y.data().data() + map_b[i] * k * p, ei(k), ei(p));
    MatrixMap mo(out.data().data() + i * m * p, ei(m), ei(p));
    mo.noalias() = ma * mb;
  }
  return a.tape().record(std::move(out), {a, b},
                         [m, k, p, ei, map_a = std::move(map_a), map_b = std::move(map_b)](BackwardContext& ctx) {
                           const Tensor& x = ctx.input(0);
                           const Tensor& y = ctx.input(1);
                           auto g = ctx.grad_out();
                           const bool want_a = ctx.wants(0);
                           const bool want_b = ctx.wants(1);
                           std::span<double> ga = want_a ? ctx.grad_in(0) : std::span<double>{};
                           std::span<double> gb = want_b ? ctx.grad_in(1) : std::span<double>{};
                           for (std::size_t i = 0; i < map_a.size(); ++i) {
                             ConstMatrixMap mg(g.data() + i * m * p, ei(m), ei(p));
                             if (want_a) {
                               ConstMatrixMap mb(y.data().data() + map_b[i] * k * p, ei(k), ei(p));
                               MatrixMap out(ga.data() + map_a[i] * m * k, ei(m), ei(k));
                               out.noalias() += mg * mb.transpose();
                             }
                             if (want_b) {
                               ConstMatrixMap ma(x.data().data() + map_a[i] * m * k, ei(m), ei(k));
                               MatrixMap out(gb.data() + map_b[i] * k * p, ei(k), ei(p));
                               out.noalias() += ma.transpose() * mg;
                             }
                           }
                         });
}

Var linear(Var x, Var weight, Var bias) {
  const Shape& sx = x.value().shape();
  const Shape& sw = weight.value().shape();
  const Shape& sb = bias.value().shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[0] || sb.size() != 1 || sb[0] != sw[1]) {
    throw DimensionError("linear: input " + to_string(sx) + " incompatible with weight " + to_string(sw) +
                         " and bias " + to_string(sb));
  }
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  const std::size_t din = sw[0];
  const std::size_t dout = sw[1];
  const std::size_t rows = x.value().numel() / din;
  Shape out_shape = sx;
  out_shape.back() = dout;
  Tensor out(out_shape);
  {
    ConstMatrixMap mx(x.value().data().data(), ei(rows), ei(din));
    ConstMatrixMap mw(weight.value().data().data(), ei(din), ei(dout));
    Eigen::Map<const Eigen::RowVectorXd> mb(bias.value().data().data(), ei(dout));
    MatrixMap mo(out.data().data(), ei(rows), ei(dout));
    mo.noalias() = mx * mw;
    mo.rowwise() += mb;
  }
  return x.tape().record(std::move(out), {x, weight, bias}, [rows, din, dout, ei](BackwardContext& ctx) {
    ConstMatrixMap mg(ctx.grad_out().data(), ei(rows), ei(dout));
    if (ctx.wants(0)) {
      ConstMatrixMap mw(ctx.input(1).data().data(), ei(din), ei(dout));
      MatrixMap gx(ctx.grad_in(0).data(), ei(rows), ei(din));
      gx.noalias() += mg * mw.transpose();
    }
    if (ctx.wants(1)) {
      ConstMatrixMap mx(ctx.input(0).data().data(), ei(rows), ei(din));
      MatrixMap gw(ctx.grad_in(1).data(), ei(din), ei(dout));
      gw.noalias() += mx.transpose() * mg;
    }
    if (ctx.wants(2)) {
      Eigen::Map<Eigen::RowVectorXd> gb(ctx.grad_in(2).data(), ei(dout));
      gb += mg.colwise().sum();
    }
  });
}

// ---------------------------------------------------------------- softmax

Var softmax(Var a, int axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_at(x.shape(), normalize_axis(axis, x.rank()));
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.inner; ++k) {
      const std::size_t base = o * s.n * s.inner + k;
      double mx = x[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  }
  return a.tape().record(std::move(out), {a}, [s](BackwardContext& ctx) {
    const Tensor& y = ctx.output();
    auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.inner; ++k) {
        const std::size_t base = o * s.n * s.inner + k;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var a, int axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_at(x.shape(), normalize_axis(axis, x.rank()));
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.inner; ++k) {
      const std::size_t base = o * s.n * s.inner + k;
      double mx = x[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) z += std::exp(x[base + j * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = x[base + j * s.inner] - lse;
    }
  }
  return a.tape().record(std::move(out), {a}, [s](BackwardContext& ctx) {
    const Tensor& y = ctx.output();
    auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.inner; ++k) {
        const std::size_t base = o * s.n * s.inner + k;
        double gsum = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    }
  });
}

}  // namespace mldr
