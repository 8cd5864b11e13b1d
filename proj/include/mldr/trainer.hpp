#pragma once

#include "mldr/data.hpp"
#include "mldr/losses.hpp"
#include "mldr/models.hpp"
#include "mldr/msdf.hpp"

#include <array>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace mldr {

enum class Method { CeOnly, VanillaKd, DfraLogitOnly, MldrFull, Custom };
enum class OptimizerKind { SgdMomentum, AdamW };

Method parse_method(std::string_view name);
std::string to_string(Method m);
OptimizerKind parse_optimizer(std::string_view name);
std::string to_string(OptimizerKind k);

/// Which loss terms are live once a method has been resolved.
struct LossSwitches {
  bool logit_level = false;    // align student logits with the teacher
  bool feature_level = false;  // align fused stage logits with the teacher
  bool use_msdf = false;       // gated fusion (otherwise uniform average of stages)
  bool use_dfra = false;       // relation terms (otherwise plain softened KL)
  std::size_t fused_stages = 0;

  bool needs_teacher() const { return logit_level || feature_level; }
};

struct TrainConfig {
  Method method = Method::MldrFull;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  double base_lr = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  /// Global-norm gradient clip; 0 disables.
  double clip_norm = 0.0;
  std::uint64_t seed = 1;

  /// Temperature, KL orientation, T^2 flag and CWRD/SWRD switches. `hp.lambda` is the vanilla-KD weight.
  DistillHyperparams hp;
  /// Weight of the plain KL inside the relation loss; negative means "same as hp.lambda".
  double lambda_dfra = -1.0;
  /// Weight of the feature-level (fused) loss.
  double mu = 1.0;
  /// Average cross-entropy over the batch instead of summing.
  bool ce_mean = false;

  /// MSDF consumes the deepest n_stages_used stages; 0 disables the feature level.
  std::size_t n_stages_used = 4;
  std::size_t token_dim = 32;
  std::size_t gate_hidden = 0;

  // Only read when method == Custom.
  bool logit_level = true;
  bool feature_level = true;
  bool use_msdf = true;
  bool use_dfra = true;

  LossSwitches switches() const;
  /// Throws ConfigError on inconsistent settings.
  void validate(const ModelSpec& student) const;
  DistillHyperparams logit_hp() const;
  DistillHyperparams feature_hp() const;
};

/// lr = 0.5 * base_lr * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

struct LossParts {
  double ce = 0.0;
  double cls = 0.0;
  double sample = 0.0;
  double kl = 0.0;
  double balance = 0.0;
  double total = 0.0;
};

struct StepLog {
  std::size_t epoch;
  std::size_t step;  // global optimizer step
  double lr;
  LossParts loss;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossParts loss;  // mean over the epoch's steps
  double eval_acc = 0.0;
  /// Mean gate weight per network stage (index 0 = stage 1); zero for stages not fused.
  std::array<double, 4> gate_mean{};
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  double final_eval_acc = 0.0;
  double wall_seconds = 0.0;
  std::size_t student_params = 0;
  std::size_t msdf_params = 0;
};

/// Fixed column order of the per-epoch metrics CSV. Wall time is excluded so
/// identical runs produce identical files.
inline constexpr std::string_view kMetricsHeader =
    "epoch,loss_ce,loss_class,loss_sample,loss_kl,loss_balance,loss_total,eval_acc,gate_1,gate_2,gate_3,gate_4";

void write_metrics_csv(const RunRecord& record, std::ostream& out);

struct TrainOutcome {
  RunRecord record;
  Model student;
  std::optional<MsdfParams> msdf;
};

using StepHook = std::function<void(const StepLog&)>;

/// Trains a fresh student (or a copy of `init_student`) against a frozen teacher.
/// `teacher` may be null only when no teacher-dependent term is active.
/// Deterministic for fixed inputs. Throws TrainingError on a non-finite loss.
TrainOutcome train(const TrainConfig& cfg, const Model* teacher, const ModelSpec& student_spec, const Dataset& ds,
                   const StepHook& hook = {}, const Model* init_student = nullptr);

/// Top-1 accuracy of argmax(logits) (ties to the lowest class index).
double accuracy(const Tensor& logits, std::span<const int> labels);
/// Top-1 accuracy of `model` on every sample of `ds`.
double evaluate(Model& model, const Dataset& ds);
/// Logits for every sample of `ds`, evaluated in chunks.
Tensor predict_all(Model& model, const Dataset& ds);

/// Mean softmax distribution over all samples of class `category`.
std::vector<double> mean_prediction(Model& model, const Dataset& ds, int category);

}  // namespace mldr
