#pragma once

#include "mldr/autodiff.hpp"

#include <span>

namespace mldr {

/// Which distribution goes first inside every KL term.
enum class KlDirection {
  StudentFirst,  // D_KL(p_s || p_t), the default
  TeacherFirst,  // D_KL(p_t || p_s), the conventional KD orientation
};

/// Divisor inside the sample-wise relation softmax.
enum class SampleScale {
  SqrtClasses,  // sqrt(N), the default
  SqrtBatch,    // sqrt(B)
};

struct DistillHyperparams {
  double temperature = 4.0;
  /// Weight of the plain softened-KL term.
  double lambda = 1.0;
  bool use_cwrd = true;
  bool use_swrd = true;
  KlDirection kl_direction = KlDirection::StudentFirst;
  /// Multiply the plain KL term by T^2.
  bool t2_scale = false;
  SampleScale sample_scale = SampleScale::SqrtClasses;

  /// Throws HyperparameterError unless temperature > 0 and lambda >= 0.
  void validate() const;
};

enum class RelationKind { ClassWise, SampleWise };

/// Row-stochastic relation stack: [B, N, N] class-wise or [N, B, B] sample-wise.
struct RelationTensor {
  Var values;
  /// Symmetric scores before the row softmax.
  Var scores;
  RelationKind kind;
};

/// Row-wise softmax of z / T.
Var softmax_probs(Var logits, double temperature);

/// Cross-entropy against integer labels. Summed over the batch unless `batch_mean`.
Var cross_entropy(Var logits, std::span<const int> labels, bool batch_mean = false);

/// (1/rows) * sum over rows of sum_j p log(p / q), rows along the last axis.
/// Throws ContractError when a row of p or q is off the simplex by more than 1e-6.
Var kl_divergence(Var p, Var q);

struct KdOptions {
  double temperature = 4.0;
  double lambda = 1.0;
  KlDirection kl_direction = KlDirection::StudentFirst;
  bool t2_scale = false;
  bool ce_mean = false;
};

/// L_CE + lambda * KL on temperature-softened probabilities. Teacher logits are detached.
Var vanilla_kd_loss(Var student_logits, Var teacher_logits, std::span<const int> labels, const KdOptions& opts);

/// Softmax over the last axis of (z/T)(z/T)^T / sqrt(N), one N x N matrix per sample.
RelationTensor class_wise_relation(Var logits, double temperature);

/// Softmax over the last axis of (z^T/T)(z^T/T)^T / sqrt(N or B), one B x B matrix per class.
RelationTensor sample_wise_relation(Var logits, double temperature,
                                    SampleScale scale = SampleScale::SqrtClasses);

/// The three weighted pieces of the decoupled relation loss.
struct DfraTerms {
  Var class_term;
  Var sample_term;
  /// Already multiplied by lambda (and T^2 when enabled).
  Var kl_term;
  Var total;
};

DfraTerms dfra_terms(Var student_logits, Var teacher_logits, const DistillHyperparams& hp);

/// Class-wise + sample-wise relation alignment plus lambda-weighted softened KL.
/// Teacher logits never receive a gradient.
Var dfra_loss(Var student_logits, Var teacher_logits, const DistillHyperparams& hp);

}  // namespace mldr
