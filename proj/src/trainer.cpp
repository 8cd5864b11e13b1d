#include "mldr/trainer.hpp"

#include "mldr/errors.hpp"
#include "mldr/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace mldr {

Method parse_method(std::string_view name) {
  if (name == "ce_only") return Method::CeOnly;
  if (name == "vanilla_kd") return Method::VanillaKd;
  if (name == "dfra_logit_only") return Method::DfraLogitOnly;
  if (name == "mldr_full") return Method::MldrFull;
  if (name == "custom") return Method::Custom;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::CeOnly: return "ce_only";
    case Method::VanillaKd: return "vanilla_kd";
    case Method::DfraLogitOnly: return "dfra_logit_only";
    case Method::MldrFull: return "mldr_full";
    case Method::Custom: return "custom";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::SgdMomentum;
  if (name == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adamw)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::SgdMomentum ? "sgd" : "adamw"; }

LossSwitches TrainConfig::switches() const {
  LossSwitches s;
  switch (method) {
    case Method::CeOnly:
      break;
    case Method::VanillaKd:
      s.logit_level = true;
      break;
    case Method::DfraLogitOnly:
      s.logit_level = true;
      s.use_dfra = true;
      break;
    case Method::MldrFull:
      s.logit_level = true;
      s.use_dfra = true;
      s.feature_level = n_stages_used > 0;
      s.use_msdf = s.feature_level;
      break;
    case Method::Custom:
      s.logit_level = logit_level;
      s.feature_level = feature_level;
      s.use_msdf = feature_level && use_msdf;
      s.use_dfra = use_dfra;
      break;
  }
  if (s.feature_level) s.fused_stages = n_stages_used;
  return s;
}

void TrainConfig::validate(const ModelSpec& student) const {
  student.validate();
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(base_lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be >= 0");
  if (!(mu >= 0.0)) throw ConfigError("loss.mu must be >= 0");
  if (n_stages_used > student.n_stages) {
    throw ConfigError("train.n_stages_used = " + std::to_string(n_stages_used) + " exceeds the student's " +
                      std::to_string(student.n_stages) + " stages");
  }
  if (method == Method::Custom && feature_level && n_stages_used == 0) {
    throw ConfigError("feature-level alignment needs train.n_stages_used >= 1");
  }
  try {
    logit_hp().validate();
  } catch (const HyperparameterError& e) {
    throw ConfigError(e.what());
  }
}

DistillHyperparams TrainConfig::logit_hp() const {
  const LossSwitches s = switches();
  DistillHyperparams out = hp;
  if (s.use_dfra) {
    out.lambda = lambda_dfra < 0.0 ? hp.lambda : lambda_dfra;
  } else {
    out.use_cwrd = false;
    out.use_swrd = false;
  }
  return out;
}

DistillHyperparams TrainConfig::feature_hp() const { return logit_hp(); }

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps) {
    throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  return 0.5 * base_lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

void write_metrics_csv(const RunRecord& record, std::ostream& out) {
  out << kMetricsHeader << "\n";
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (const EpochRecord& e : record.epochs) {
    out << e.epoch;
    num(e.loss.ce);
    num(e.loss.cls);
    num(e.loss.sample);
    num(e.loss.kl);
    num(e.loss.balance);
    num(e.loss.total);
    num(e.eval_acc);
    for (double g : e.gate_mean) num(g);
    out << "\n";
  }
}

// ---------------------------------------------------------------- evaluation

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("accuracy: logits " + to_string(logits.shape()) + " for " + std::to_string(labels.size()) +
                         " labels");
  }
  if (labels.empty()) return 0.0;
  const std::size_t n = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (logits[i * n + j] > logits[i * n + best]) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

Tensor predict_all(Model& model, const Dataset& ds) {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = model.spec.n_classes;
  Tensor out(Shape{ds.size(), n});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    const std::size_t end = std::min(ds.size(), start + kChunk);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    Tensor logits = predict_logits(model, ds.gather(idx));
    std::copy(logits.data().begin(), logits.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * n));
  }
  return out;
}

double evaluate(Model& model, const Dataset& ds) { return accuracy(predict_all(model, ds), ds.labels); }

std::vector<double> mean_prediction(Model& model, const Dataset& ds, int category) {
  if (category < 0 || static_cast<std::size_t>(category) >= model.spec.n_classes) {
    throw DataError("category " + std::to_string(category) + " outside [0, " + std::to_string(model.spec.n_classes) + ")");
  }
  const Tensor logits = predict_all(model, ds);
  const std::size_t n = model.spec.n_classes;
  std::vector<double> mean(n, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != category) continue;
    double mx = logits[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, logits[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(logits[i * n + j] - mx);
    for (std::size_t j = 0; j < n; ++j) mean[j] += std::exp(logits[i * n + j] - mx) / z;
    ++count;
  }
  if (count == 0) throw DataError("category " + std::to_string(category) + " has no samples");
  for (double& v : mean) v /= static_cast<double>(count);
  return mean;
}

// ---------------------------------------------------------------- optimizers

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<Tensor*> params) : cfg_(cfg), params_(std::move(params)) {
    for (Tensor* p : params_) {
      first_.emplace_back(p->numel(), 0.0);
      if (cfg.optimizer == OptimizerKind::AdamW) second_.emplace_back(p->numel(), 0.0);
    }
  }

  void clip() {
    if (cfg_.clip_norm <= 0.0) return;
    double sq = 0.0;
    for (Tensor* p : params_)
      for (double g : p->grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= cfg_.clip_norm) return;
    const double f = cfg_.clip_norm / norm;
    for (Tensor* p : params_)
      for (double& g : p->grad()) g *= f;
  }

  void step(double lr) {
    ++t_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k]->data();
      auto g = params_[k]->grad();
      auto& m = first_[k];
      if (cfg_.optimizer == OptimizerKind::SgdMomentum) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double grad = g[i] + cfg_.weight_decay * w[i];
          m[i] = cfg_.momentum * m[i] + grad;
          w[i] -= lr * m[i];
        }
      } else {
        auto& v = second_[k];
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
          w[i] -= lr * (update + cfg_.weight_decay * w[i]);
        }
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t t_ = 0;
};

Tensor gather_rows(const Tensor& rows, std::span<const std::size_t> idx) {
  const std::size_t n = rows.dim(1);
  Tensor out(Shape{idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(rows.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  return out;
}

void add_into(LossParts& acc, const LossParts& x) {
  acc.ce += x.ce;
  acc.cls += x.cls;
  acc.sample += x.sample;
  acc.kl += x.kl;
  acc.balance += x.balance;
  acc.total += x.total;
}

}  // namespace

// ---------------------------------------------------------------- training loop

TrainOutcome train(const TrainConfig& cfg, const Model* teacher, const ModelSpec& student_spec, const Dataset& ds,
                   const StepHook& hook, const Model* init_student) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate(student_spec);
  const LossSwitches sw = cfg.switches();
  if (sw.needs_teacher() && teacher == nullptr) {
    throw ConfigError("method " + to_string(cfg.method) + " needs a teacher checkpoint");
  }
  if (teacher != nullptr && teacher->spec.n_classes != student_spec.n_classes) {
    throw ConfigError("teacher predicts " + std::to_string(teacher->spec.n_classes) + " classes, student " +
                      std::to_string(student_spec.n_classes));
  }
  if (ds.n_classes != student_spec.n_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.n_classes) + " classes, student predicts " +
                      std::to_string(student_spec.n_classes));
  }
  if (ds.sample_shape() != student_spec.input_shape) {
    throw ConfigError("dataset samples are " + to_string(ds.sample_shape()) + " but the student expects " +
                      to_string(student_spec.input_shape));
  }
  const Dataset train_set = ds.subset(Split::Train);
  const Dataset eval_set = ds.subset(Split::Eval);
  if (train_set.size() == 0 || eval_set.size() == 0) throw ConfigError("dataset needs non-empty train and eval splits");

  TrainOutcome outcome;
  if (init_student != nullptr) {
    if (!(init_student->spec == student_spec)) throw ConfigError("initial student checkpoint does not match student spec");
    outcome.student = *init_student;
  } else {
    auto rng = make_rng(cfg.seed, Stream::StudentInit);
    outcome.student = Model::init(student_spec, rng);
  }
  Model& student = outcome.student;

  if (sw.feature_level) {
    MsdfLayout layout;
    layout.stages = stage_shapes(student_spec, sw.fused_stages);
    layout.token_dim = cfg.token_dim;
    layout.gate_hidden = cfg.gate_hidden;
    layout.n_classes = student_spec.n_classes;
    if (student_spec.arch == ArchKind::TokenBased) layout.token_dim = layout.stages.front().feature_dim;
    auto rng = make_rng(cfg.seed, Stream::MsdfInit);
    outcome.msdf = MsdfParams::init(layout, rng);
  }

  Tensor teacher_logits;
  if (sw.needs_teacher()) {
    Model frozen = *teacher;
    frozen.params.set_requires_grad(false);
    teacher_logits = predict_all(frozen, train_set);
  }

  std::vector<Tensor*> trainable;
  for (auto& p : student.params.items()) trainable.push_back(&p.value);
  if (outcome.msdf) {
    for (auto& p : outcome.msdf->params.items()) trainable.push_back(&p.value);
  }
  Optimizer opt(cfg, trainable);

  const DistillHyperparams logit_hp = cfg.logit_hp();
  const DistillHyperparams feature_hp = cfg.feature_hp();
  BatchStream stream(train_set, std::min(cfg.batch_size, train_set.size()), cfg.seed, true);
  const std::size_t total_steps = cfg.epochs * stream.batches_per_epoch();
  const std::size_t first_fused = student_spec.n_stages - sw.fused_stages;

  RunRecord& record = outcome.record;
  record.student_params = count_params(student);
  record.msdf_params = outcome.msdf ? outcome.msdf->params.count() : 0;

  std::size_t step = 0;
  Batch batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    stream.start_epoch(epoch);
    EpochRecord er;
    er.epoch = epoch + 1;
    std::size_t steps_this_epoch = 0;
    while (stream.next(batch)) {
      const double lr = cosine_lr(step, total_steps, cfg.base_lr);
      for (Tensor* p : trainable) p->zero_grad();

      Tape tape;
      ForwardResult fwd = forward(student, tape, batch.inputs);
      Var zero = tape.constant(Tensor::scalar(0.0));
      Var ce = cross_entropy(fwd.logits, batch.labels, cfg.ce_mean);
      Var cls = zero;
      Var sample = zero;
      Var kl = zero;
      Var balance = zero;
      Var teacher_batch;
      if (sw.needs_teacher()) teacher_batch = tape.constant(gather_rows(teacher_logits, batch.indices));
      if (sw.logit_level) {
        DfraTerms terms = dfra_terms(fwd.logits, teacher_batch, logit_hp);
        cls = terms.class_term;
        sample = terms.sample_term;
        kl = terms.kl_term;
      }
      if (sw.feature_level) {
        std::vector<StageOutput> fused_stages(fwd.stages.begin() + static_cast<std::ptrdiff_t>(first_fused), fwd.stages.end());
        FusedLogit fused = msdf_forward(fused_stages, *outcome.msdf, sw.use_msdf);
        balance = dfra_loss(fused.values, teacher_batch, feature_hp) * cfg.mu;
        const Tensor& w = fused.gate_weights.value();
        const std::size_t b = w.dim(0);
        const std::size_t s = w.dim(1);
        for (std::size_t k = 0; k < s; ++k) {
          double m = 0.0;
          for (std::size_t i = 0; i < b; ++i) m += w[i * s + k];
          er.gate_mean[first_fused + k] += m / static_cast<double>(b);
        }
      }
      Var total = ce + cls + sample + kl + balance;

      StepLog log{epoch + 1, step, lr, LossParts{ce.item(), cls.item(), sample.item(), kl.item(), balance.item(), total.item()}};
      if (!std::isfinite(log.loss.total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step) +
                            " (ce=" + std::to_string(log.loss.ce) + ", class=" + std::to_string(log.loss.cls) +
                            ", sample=" + std::to_string(log.loss.sample) + ", kl=" + std::to_string(log.loss.kl) +
                            ", balance=" + std::to_string(log.loss.balance) + ")");
      }
      if (hook) hook(log);
      add_into(er.loss, log.loss);

      tape.backward(total);
      opt.clip();
      opt.step(lr);
      ++step;
      ++steps_this_epoch;
    }
    const double inv = 1.0 / static_cast<double>(steps_this_epoch);
    er.loss.ce *= inv;
    er.loss.cls *= inv;
    er.loss.sample *= inv;
    er.loss.kl *= inv;
    er.loss.balance *= inv;
    er.loss.total *= inv;
    for (double& g : er.gate_mean) g *= inv;
    er.eval_acc = evaluate(student, eval_set);
    record.epochs.push_back(er);
  }
  record.final_eval_acc = record.epochs.back().eval_acc;
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return outcome;
}

}  // namespace mldr
