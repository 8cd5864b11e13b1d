#include "mldr/losses.hpp"

#include "mldr/errors.hpp"

#include <cmath>
#include <string>

namespace mldr {

namespace {

void require_logits(Var logits, const char* what) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] == 0 || s[1] == 0) {
    throw DimensionError(std::string(what) + ": expected logits [B, N], got " + to_string(s));
  }
}

void require_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw HyperparameterError("temperature must be positive, got " + std::to_string(t));
  }
}

void require_same_shape(Var a, Var b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": student " + to_string(a.shape()) + " vs teacher " +
                         to_string(b.shape()));
  }
}

void require_simplex_rows(const Tensor& t, const char* which) {
  if (t.rank() == 0) throw ContractError(std::string("kl_divergence: ") + which + " is a scalar");
  const std::size_t n = t.shape().back();
  for (std::size_t r = 0; r < t.numel() / n; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = t[r * n + j];
      if (v < 0.0) throw ContractError(std::string("kl_divergence: negative entry in ") + which);
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError(std::string("kl_divergence: row ") + std::to_string(r) + " of " + which + " sums to " +
                          std::to_string(total));
    }
  }
}

Var directed_kl(Var student, Var teacher, KlDirection dir) {
  return dir == KlDirection::StudentFirst ? kl_divergence(student, teacher) : kl_divergence(teacher, student);
}

RelationTensor relation_from_columns(Var columns, double scale_divisor, RelationKind kind) {
  // columns: [G, K]; one K x K relation per row of `columns`.
  const Shape& s = columns.shape();
  Var expanded = reshape(columns, Shape{s[0], s[1], 1});
  Var scores = matmul(expanded, transpose(expanded)) / scale_divisor;
  return RelationTensor{softmax(scores, -1), scores, kind};
}

}  // namespace

void DistillHyperparams::validate() const {
  require_temperature(temperature);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw HyperparameterError("lambda must be nonnegative, got " + std::to_string(lambda));
  }
}

Var softmax_probs(Var logits, double temperature) {
  require_temperature(temperature);
  require_logits(logits, "softmax_probs");
  return softmax(logits / temperature, -1);
}

Var cross_entropy(Var logits, std::span<const int> labels, bool batch_mean) {
  require_logits(logits, "cross_entropy");
  const std::size_t batch = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                    std::to_string(batch));
  }
  Tensor onehot(Shape{batch, classes});
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
    onehot.at({i, static_cast<std::size_t>(labels[i])}) = 1.0;
  }
  Var picked = sum(logits.tape().constant(std::move(onehot)) * log_softmax(logits, -1));
  return batch_mean ? picked * (-1.0 / static_cast<double>(batch)) : -picked;
}

Var kl_divergence(Var p, Var q) {
  if (p.shape() != q.shape()) {
    throw DimensionError("kl_divergence: " + to_string(p.shape()) + " vs " + to_string(q.shape()));
  }
  require_simplex_rows(p.value(), "p");
  require_simplex_rows(q.value(), "q");
  const double rows = static_cast<double>(p.value().numel() / p.shape().back());
  return sum(p * (log(p) - log(q))) / rows;
}

Var vanilla_kd_loss(Var student_logits, Var teacher_logits, std::span<const int> labels, const KdOptions& opts) {
  require_same_shape(student_logits, teacher_logits, "vanilla_kd_loss");
  if (!(opts.lambda >= 0.0)) throw HyperparameterError("lambda must be nonnegative");
  Var ce = cross_entropy(student_logits, labels, opts.ce_mean);
  Var ps = softmax_probs(student_logits, opts.temperature);
  Var pt = softmax_probs(detach(teacher_logits), opts.temperature);
  double weight = opts.lambda;
  if (opts.t2_scale) weight *= opts.temperature * opts.temperature;
  return ce + directed_kl(ps, pt, opts.kl_direction) * weight;
}

RelationTensor class_wise_relation(Var logits, double temperature) {
  require_temperature(temperature);
  require_logits(logits, "class_wise_relation");
  const double n = static_cast<double>(logits.shape()[1]);
  return relation_from_columns(logits / temperature, std::sqrt(n), RelationKind::ClassWise);
}

RelationTensor sample_wise_relation(Var logits, double temperature, SampleScale scale) {
  require_temperature(temperature);
  require_logits(logits, "sample_wise_relation");
  const double divisor = scale == SampleScale::SqrtClasses ? std::sqrt(static_cast<double>(logits.shape()[1]))
                                                           : std::sqrt(static_cast<double>(logits.shape()[0]));
  return relation_from_columns(transpose(logits) / temperature, divisor, RelationKind::SampleWise);
}

DfraTerms dfra_terms(Var student_logits, Var teacher_logits, const DistillHyperparams& hp) {
  hp.validate();
  require_logits(student_logits, "dfra_loss");
  require_same_shape(student_logits, teacher_logits, "dfra_loss");
  Tape& tape = student_logits.tape();
  Var teacher = detach(teacher_logits);
  const double t = hp.temperature;

  DfraTerms terms;
  if (hp.use_cwrd) {
    terms.class_term = directed_kl(class_wise_relation(student_logits, t).values,
                                   class_wise_relation(teacher, t).values, hp.kl_direction);
  } else {
    terms.class_term = tape.constant(Tensor::scalar(0.0));
  }
  if (hp.use_swrd) {
    terms.sample_term = directed_kl(sample_wise_relation(student_logits, t, hp.sample_scale).values,
                                    sample_wise_relation(teacher, t, hp.sample_scale).values, hp.kl_direction);
  } else {
    terms.sample_term = tape.constant(Tensor::scalar(0.0));
  }
  double weight = hp.lambda;
  if (hp.t2_scale) weight *= t * t;
  terms.kl_term = directed_kl(softmax_probs(student_logits, t), softmax_probs(teacher, t), hp.kl_direction) * weight;
  terms.total = terms.class_term + terms.sample_term + terms.kl_term;
  return terms;
}

Var dfra_loss(Var student_logits, Var teacher_logits, const DistillHyperparams& hp) {
  return dfra_terms(student_logits, teacher_logits, hp).total;
}

}  // namespace mldr
