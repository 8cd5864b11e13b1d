// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: acceptance <work_dir>. Training runs are cached in work_dir and reused
// when their resolved config is unchanged.

#include "helpers.hpp"
#include "oracles.hpp"

#include "mldr/binary_io.hpp"
#include "mldr/errors.hpp"
#include "mldr/experiment.hpp"
#include "mldr/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace mldr;
using testing_util::max_abs_diff;
using testing_util::pick;
using testing_util::randn;
using testing_util::values;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& line) { std::printf("    %s\n", line.c_str()); std::fflush(stdout); }

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto reports = run_gradcheck(20240601, 10, 1e-4);
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 60.0;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& r : reports) {
    ok = ok && r.passed && r.instances >= 10;
    if (r.max_error >= worst) {
      worst = r.max_error;
      worst_op = r.op;
    }
    if (!r.passed) note("gradient mismatch in " + r.op + fmt(": %.3e", r.max_error));
  }
  return {ok, fmt("%zu ops x 10 instances, worst %.2e (%s), %.1fs", reports.size(), worst, worst_op.c_str(), elapsed)};
}

// ---------------------------------------------------------------- 2

Outcome oracle_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const int reps = 200;
  std::map<std::string, double> worst;
  for (int i = 0; i < reps; ++i) {
    const std::size_t b = pick(rng, 1, 4), n = pick(rng, 2, 6);
    Tensor zs = randn({b, n}, rng, 2.0), zt = randn({b, n}, rng, 2.0);
    const double temp = 0.5 + 4.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    Tape tape;
    const bool sqrt_batch = i % 2 == 1;
    const auto scale = sqrt_batch ? SampleScale::SqrtBatch : SampleScale::SqrtClasses;
    worst["class_wise_relation"] = std::max(worst["class_wise_relation"],
        max_abs_diff(values(class_wise_relation(tape.constant(zs), temp).values.value()), oracle::class_relation(values(zs), b, n, temp)));
    worst["sample_wise_relation"] = std::max(worst["sample_wise_relation"],
        max_abs_diff(values(sample_wise_relation(tape.constant(zs), temp, scale).values.value()),
                     oracle::sample_relation(values(zs), b, n, temp, sqrt_batch)));

    DistillHyperparams hp;
    hp.temperature = temp;
    hp.lambda = 0.5 * (i % 4);
    hp.use_cwrd = i % 5 != 0;
    hp.use_swrd = i % 7 != 0;
    hp.kl_direction = i % 3 == 0 ? KlDirection::TeacherFirst : KlDirection::StudentFirst;
    hp.t2_scale = i % 2 == 0;
    hp.sample_scale = scale;
    const oracle::DfraSettings o{temp, hp.lambda, hp.use_cwrd, hp.use_swrd, i % 3 != 0, hp.t2_scale, sqrt_batch};
    const double got = dfra_loss(tape.constant(zs), tape.constant(zt), hp).item();
    worst["dfra_loss"] = std::max(worst["dfra_loss"], std::abs(got - oracle::dfra(values(zs), values(zt), b, n, o)));

    const std::size_t s = pick(rng, 1, 4), d = pick(rng, 1, 5);
    MsdfLayout layout;
    layout.stages.assign(s, StageShape{ArchKind::Spatial, 2});
    layout.token_dim = d;
    layout.gate_hidden = pick(rng, 1, 6);
    layout.n_classes = n;
    MsdfParams mp = MsdfParams::init(layout, rng);
    for (auto& p : mp.params.items()) p.value = randn(p.value.shape(), rng, 0.8);
    std::vector<Var> tokens, logits;
    std::vector<std::vector<double>> raw_tokens, raw_logits;
    for (std::size_t k = 0; k < s; ++k) {
      Tensor tk = randn({b, d}, rng), lg = randn({b, n}, rng, 2.0);
      raw_tokens.push_back(values(tk));
      raw_logits.push_back(values(lg));
      tokens.push_back(tape.constant(tk));
      logits.push_back(tape.constant(lg));
    }
    Tensor w = gate_weights(tokens, mp).value();
    worst["gate_weights"] = std::max(worst["gate_weights"],
        max_abs_diff(values(w), oracle::gate(raw_tokens, values(mp.params["msdf.gate1.w"]), values(mp.params["msdf.gate1.b"]),
                                             values(mp.params["msdf.gate2.w"]), values(mp.params["msdf.gate2.b"]), b, d,
                                             layout.hidden())));
    Tensor wf = softmax(tape.constant(randn({b, s}, rng, 2.0)), -1).value();
    worst["fuse"] = std::max(worst["fuse"], max_abs_diff(values(fuse(logits, tape.constant(wf)).values.value()),
                                                         oracle::fuse(raw_logits, values(wf), b, n)));
  }
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 60.0;
  std::string detail;
  for (const auto& [op, err] : worst) {
    ok = ok && err <= 1e-9;
    detail += fmt("%s %.1e, ", op.c_str(), err);
  }
  return {ok, fmt("%d instances per op; max abs diff: ", reps) + detail + fmt("%.1fs", elapsed)};
}

// ---------------------------------------------------------------- 3

Outcome invariant_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(78);
  std::size_t failures = 0;
  std::map<std::string, std::size_t> checked;
  const auto expect = [&](bool cond, const std::string& what) {
    ++checked[what];
    if (!cond) {
      if (failures < 10) note("violated: " + what);
      ++failures;
    }
  };
  for (int i = 0; i < 200; ++i) {
    const std::size_t b = pick(rng, 1, 5), n = pick(rng, 2, 6);
    Tensor zs = randn({b, n}, rng, 3.0), zt = randn({b, n}, rng, 3.0);
    Tape tape;
    for (const RelationTensor& rel : {class_wise_relation(tape.constant(zs), 4.0), sample_wise_relation(tape.constant(zs), 4.0)}) {
      const Tensor& r = rel.values.value();
      const Tensor& sc = rel.scores.value();
      const std::size_t k = r.dim(-1);
      for (std::size_t row = 0; row < r.numel() / k; ++row) {
        double total = 0.0;
        bool nonneg = true;
        for (std::size_t j = 0; j < k; ++j) {
          total += r[row * k + j];
          nonneg = nonneg && r[row * k + j] >= 0.0;
        }
        expect(nonneg && std::abs(total - 1.0) <= 1e-9, "relation rows are stochastic");
      }
      bool symmetric = true;
      for (std::size_t g = 0; g < sc.dim(0); ++g)
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t c = 0; c < k; ++c) symmetric = symmetric && sc[(g * k + a) * k + c] == sc[(g * k + c) * k + a];
      expect(symmetric, "pre-softmax scores are exactly symmetric");
    }
    DistillHyperparams hp;
    const auto loss = [&](const Tensor& a, const Tensor& c) {
      Tape t;
      return dfra_loss(t.constant(a), t.constant(c), hp).item();
    };
    expect(std::abs(loss(zs, zs)) <= 1e-12, "dfra self-alignment is zero");
    const double base = loss(zs, zt);
    std::vector<std::size_t> rows(b), cols(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    std::shuffle(cols.begin(), cols.end(), rng);
    Tensor ps(zs.shape()), pt(zt.shape()), qs(zs.shape()), qt(zt.shape());
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < n; ++j) {
        ps.at({r, j}) = zs.at({rows[r], j});
        pt.at({r, j}) = zt.at({rows[r], j});
        qs.at({r, j}) = zs.at({r, cols[j]});
        qt.at({r, j}) = zt.at({r, cols[j]});
      }
    expect(std::abs(loss(ps, pt) - base) <= 1e-12, "dfra batch-permutation invariance");
    expect(std::abs(loss(qs, qt) - base) <= 1e-12, "dfra class-permutation invariance");

    const std::size_t s = pick(rng, 1, 4);
    MsdfLayout layout;
    layout.stages.assign(s, StageShape{ArchKind::Spatial, 3});
    layout.token_dim = 4;
    layout.n_classes = n;
    MsdfParams mp = MsdfParams::init(layout, rng);
    for (auto& p : mp.params.items()) p.value = randn(p.value.shape(), rng, 1.0);
    std::vector<StageOutput> stages;
    for (std::size_t k = 0; k < s; ++k) stages.push_back({tape.constant(randn({b, 3, 2, 2}, rng)), ArchKind::Spatial, k + 1});
    FusedLogit f = msdf_forward(stages, mp);
    const Tensor& w = f.gate_weights.value();
    for (std::size_t r = 0; r < b; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < s; ++k) total += w.at({r, k});
      expect(std::abs(total - 1.0) <= 1e-12, "gate weights sum to one");
    }
    std::vector<Tensor> projected;
    for (std::size_t k = 0; k < s; ++k) {
      ExtractedToken ex = extract_token(stages[k].features, ArchKind::Spatial, mp, k);
      projected.push_back(project_stage(ex.features, ArchKind::Spatial, mp, k).value());
    }
    bool inside = true;
    for (std::size_t e = 0; e < b * n; ++e) {
      double lo = 1e300, hi = -1e300;
      for (const Tensor& p : projected) {
        lo = std::min(lo, p[e]);
        hi = std::max(hi, p[e]);
      }
      inside = inside && f.values.value()[e] >= lo - 1e-12 && f.values.value()[e] <= hi + 1e-12;
    }
    expect(inside, "fused logits lie in the convex hull of stage logits");
  }
  const double elapsed = seconds_since(t0);
  std::size_t total = 0;
  for (const auto& [what, count] : checked) total += count;
  return {failures == 0 && elapsed < 60.0,
          fmt("%zu properties, %zu checks, %zu violations, %.1fs", checked.size(), total, failures, elapsed)};
}

// ---------------------------------------------------------------- experiments

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Lab {
 public:
  explicit Lab(fs::path work) : work_(std::move(work)) { fs::create_directories(work_); }

  ExperimentConfig config(const std::string& name, const std::vector<std::string>& overrides) const {
    KeyValueConfig raw = KeyValueConfig::load(fs::path(MLDR_SOURCE_DIR) / "configs" / "preset.cfg");
    raw.set("teacher.checkpoint", (work_ / "teacher.ckpt").string());
    raw.set("output.dir", (work_ / name).string());
    for (const auto& o : overrides) raw.apply_override(o);
    return ExperimentConfig::resolve(raw);
  }

  const Model& teacher() {
    if (!teacher_) {
      const auto t0 = Clock::now();
      const bool cached = fs::exists(work_ / "teacher.ckpt");
      teacher_ = obtain_teacher(config("teacher", {}));
      const ExperimentConfig c = config("teacher", {});
      Model copy = *teacher_;
      note(fmt("teacher: %zu params, eval acc %.4f (%s, %.1fs)", count_params(*teacher_), evaluate(copy, build_dataset(c).subset(Split::Eval)),
               cached ? "cached" : "pretrained", seconds_since(t0)));
    }
    return *teacher_;
  }

  /// Final eval accuracy; reuses an earlier run with an identical resolved config.
  double run(const std::string& name, const std::vector<std::string>& overrides) {
    const ExperimentConfig cfg = config(name, overrides);
    const fs::path dir = cfg.output_dir;
    if (fs::exists(dir / "metrics.csv") && fs::exists(dir / "student.ckpt") &&
        slurp(dir / "config.resolved") == cfg.resolved.dump()) {
      return read_final_accuracy(dir / "metrics.csv");
    }
    const auto t0 = Clock::now();
    const double acc = run_experiment(cfg, cfg.train.switches().needs_teacher() ? &teacher() : nullptr).record.final_eval_acc;
    note(fmt("%-28s acc %.4f  (%.1fs)", name.c_str(), acc, seconds_since(t0)));
    return acc;
  }

  fs::path dir(const std::string& name) const { return work_ / name; }
  const fs::path& work() const { return work_; }

 private:
  fs::path work_;
  std::optional<Model> teacher_;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

std::string run_name(const std::string& cell, std::uint64_t seed) { return cell + "/seed_" + std::to_string(seed); }

struct CellStats {
  std::vector<double> accs;
  double mean = 0.0, sd = 0.0;
};

CellStats sweep(Lab& lab, const std::string& cell, std::vector<std::string> overrides) {
  CellStats st;
  for (auto seed : kSeeds) {
    auto o = overrides;
    o.push_back("train.seed=" + std::to_string(seed));
    st.accs.push_back(lab.run(run_name(cell, seed), o));
  }
  std::tie(st.mean, st.sd) = mean_std(st.accs);
  return st;
}

std::string show(const CellStats& s) { return fmt("%.4f +- %.4f", s.mean, s.sd); }

// ---------------------------------------------------------------- 4

Outcome determinism(Lab& lab) {
  const std::vector<std::string> o{"train.epochs=2", "data.samples_per_class=60"};
  lab.teacher();
  ExperimentConfig a = lab.config("determinism/a", o), b = lab.config("determinism/b", o);
  fs::remove_all(a.output_dir);
  fs::remove_all(b.output_dir);
  run_experiment(a, &lab.teacher());
  run_experiment(b, &lab.teacher());
  const std::string ma = slurp(a.output_dir / "metrics.csv"), mb = slurp(b.output_dir / "metrics.csv");
  const bool same = !ma.empty() && ma == mb;
  return {same, fmt("two mldr_full runs, metrics.csv %zu bytes each, %s", ma.size(), same ? "byte-identical" : "DIFFERENT")};
}

// ---------------------------------------------------------------- 5-8

struct MethodResults {
  CellStats ce, kd, full;
};

Outcome method_effect(Lab& lab, MethodResults& m) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  Model student = Model::init(lab.config("probe", {}).student, rng);
  const std::size_t tp = count_params(lab.teacher()), sp = count_params(student);
  m.ce = sweep(lab, "ce_only", {"train.method=ce_only"});
  m.kd = sweep(lab, "vanilla_kd", {"train.method=vanilla_kd"});
  m.full = sweep(lab, "mldr_full", {"train.method=mldr_full"});
  note("ce_only    " + show(m.ce));
  note("vanilla_kd " + show(m.kd));
  note("mldr_full  " + show(m.full));
  const double gain_ce = 100 * (m.full.mean - m.ce.mean), gain_kd = 100 * (m.full.mean - m.kd.mean);
  const bool ok = tp >= 4 * sp && m.full.mean > m.kd.mean && m.kd.mean > m.ce.mean && gain_ce >= 1.0 && gain_kd > 0.0;
  return {ok, fmt("teacher/student params %zu/%zu (%.1fx); full-ce %+.2f pts, full-kd %+.2f pts; %.0fs", tp, sp,
                  double(tp) / double(sp), gain_ce, gain_kd, seconds_since(t0))};
}

Outcome stage_ablation(Lab& lab, const MethodResults& m) {
  std::vector<CellStats> cells;
  for (int k = 0; k <= 3; ++k) {
    // 0 stages leaves only the logit-level term
    cells.push_back(sweep(lab, "stages_" + std::to_string(k), {"train.n_stages_used=" + std::to_string(k)}));
  }
  cells.push_back(m.full);
  std::string trend;
  for (int k = 0; k <= 4; ++k) {
    note(fmt("n_stages_used=%d  ", k) + show(cells[k]));
    trend += fmt("%d:%.4f ", k, cells[k].mean);
  }
  const bool four_best = std::all_of(cells.begin(), cells.end(), [&](const CellStats& c) { return cells[4].mean >= c.mean; });
  return {cells[4].mean >= cells[0].mean,
          "trend " + trend + (four_best ? "(4 stages highest)" : "(4 stages not the highest; not required)")};
}

Outcome relation_ablation(Lab& lab, const MethodResults& m) {
  const CellStats swrd_only = sweep(lab, "cwrd_off", {"loss.use_cwrd=false"});
  const CellStats cwrd_only = sweep(lab, "swrd_off", {"loss.use_swrd=false"});
  const CellStats none = sweep(lab, "cwrd_swrd_off", {"loss.use_cwrd=false", "loss.use_swrd=false"});
  note("cwrd+swrd " + show(m.full));
  note("cwrd only " + show(cwrd_only));
  note("swrd only " + show(swrd_only));
  note("neither   " + show(none));
  const bool top = m.full.mean > cwrd_only.mean && m.full.mean > swrd_only.mean && m.full.mean > none.mean;
  std::string flags;
  if (cwrd_only.mean < none.mean) flags += " FLAG: cwrd-only below both-off;";
  if (swrd_only.mean < none.mean) flags += " FLAG: swrd-only below both-off;";
  return {top, std::string(top ? "both-on cell highest" : "both-on cell NOT highest") + (flags.empty() ? "; single switches >= both-off" : ";" + flags)};
}

double class_accuracy(Model& model, const Dataset& eval, int category) {
  std::size_t hit = 0, count = 0;
  const Tensor logits = predict_all(model, eval);
  const std::size_t n = logits.dim(1);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (eval.labels[i] != category) continue;
    ++count;
    const double* row = logits.data().data() + i * n;
    hit += static_cast<std::size_t>(std::max_element(row, row + n) - row) == static_cast<std::size_t>(category);
  }
  return count ? double(hit) / double(count) : 0.0;
}

Outcome dark_knowledge(Lab& lab) {
  const ExperimentConfig cfg = lab.config("probe", {});
  const Eigen::MatrixXd& sim = cfg.data.class_similarity;
  const int target = 0, near = 1;
  const Dataset eval = build_dataset(cfg).subset(Split::Eval);
  std::vector<double> mean_dist(cfg.data.n_classes, 0.0);
  double full_acc = 0.0, ce_acc = 0.0;
  for (auto seed : kSeeds) {
    Model full = load_model(lab.dir(run_name("mldr_full", seed)) / "student.ckpt");
    Model ce = load_model(lab.dir(run_name("ce_only", seed)) / "student.ckpt");
    const auto d = pred_dist(full, eval, target);
    for (std::size_t j = 0; j < d.size(); ++j) mean_dist[j] += d[j] / std::size(kSeeds);
    full_acc += class_accuracy(full, eval, target) / std::size(kSeeds);
    ce_acc += class_accuracy(ce, eval, target) / std::size(kSeeds);
  }
  write_pred_dist_csv(mean_dist, lab.work() / "pred_dist_class0.csv");
  double far_max = 0.0;
  int far_arg = -1;
  for (int j = 0; j < int(mean_dist.size()); ++j) {
    if (j == target || j == near) continue;
    if (mean_dist[j] > far_max) {
      far_max = mean_dist[j];
      far_arg = j;
    }
  }
  std::string dist;
  for (double v : mean_dist) dist += fmt("%.4f ", v);
  note("mldr_full averaged p(. | class 0): " + dist);
  const bool ok = mean_dist[near] > far_max && full_acc >= ce_acc;
  return {ok, fmt("sim(0,1)=%.1f p(1)=%.4f > max far p(%d)=%.2e (sim %.1f); class-0 acc mldr_full %.4f vs ce_only %.4f",
                  sim(target, near), mean_dist[near], far_arg, far_max, sim(target, far_arg), full_acc, ce_acc)};
}

// ---------------------------------------------------------------- 9

template <class Decode>
bool rejects_at(const std::vector<std::uint8_t>& bytes, Decode decode, std::uint64_t expected_offset, std::string& log) {
  try {
    decode(bytes);
  } catch (const FormatError& e) {
    if (e.offset() == expected_offset) return true;
    log += fmt(" wrong offset %llu (expected %llu);", (unsigned long long)e.offset(), (unsigned long long)expected_offset);
    return false;
  }
  log += " corrupted file accepted;";
  return false;
}

Outcome serialization(Lab& lab) {
  std::string log;
  bool ok = true;
  std::mt19937_64 rng(79);
  const ExperimentConfig cfg = lab.config("serialization", {});
  for (const ModelSpec& spec : {cfg.student, cfg.teacher.spec}) {
    Model m = Model::init(spec, rng);
    const fs::path p = lab.work() / ("roundtrip_" + to_string(spec.arch) + ".ckpt");
    save_model(m, p);
    Model back = load_model(p);
    bool same = back.spec == m.spec && back.params.size() == m.params.size();
    for (std::size_t i = 0; same && i < m.params.size(); ++i)
      same = back.params.items()[i].name == m.params.items()[i].name && back.params.items()[i].value == m.params.items()[i].value;
    save_model(back, lab.work() / "roundtrip_again.ckpt");
    same = same && slurp(p) == slurp(lab.work() / "roundtrip_again.ckpt");
    if (!same) log += " checkpoint round-trip differs;";
    ok = ok && same;
  }
  const Dataset ds = build_dataset(cfg);
  const fs::path dp = lab.work() / "roundtrip.mlds";
  save_dataset(ds, dp);
  const bool ds_same = load_dataset(dp) == ds;
  if (!ds_same) log += " dataset round-trip differs;";
  ok = ok && ds_same;

  const auto ck = encode_checkpoint(Checkpoint{"meta", {{"w", randn({3, 4}, rng)}}});
  const auto dcode = [](const std::vector<std::uint8_t>& b) { decode_checkpoint(b); };
  const auto ddata = [](const std::vector<std::uint8_t>& b) { decode_dataset(b); };
  std::size_t cases = 0;
  auto check = [&](std::vector<std::uint8_t> bytes, auto decode, std::uint64_t offset) {
    ++cases;
    ok = rejects_at(bytes, decode, offset, log) && ok;
  };
  auto magic = ck;
  magic[1] ^= 0xFF;
  check(magic, dcode, 0);
  auto version = ck;
  version[4] = 2;
  check(version, dcode, 4);
  // blob of 12 doubles behind its u64 size field
  check(std::vector<std::uint8_t>(ck.begin(), ck.end() - 3), dcode, ck.size() - 12 * 8 - 8);
  const auto dbytes = encode_dataset(ds);
  const std::size_t header = 4 + 4 + 4 + 8 + 4 + 3 * 8;
  check(std::vector<std::uint8_t>(dbytes.begin(), dbytes.begin() + header), ddata, header);
  auto label = dbytes;
  label[header + 8] = 200;
  check(label, ddata, header + 8);
  auto tag = dbytes;
  tag.back() = 7;
  check(tag, ddata, dbytes.size() - 1);
  return {ok, fmt("checkpoints (spatial, token) and dataset round-trip bit-exactly; %zu corruptions rejected at their offsets", cases) + log};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  Lab lab(work);
  int failed = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    std::printf("[%d] %s\n", id, name);
    std::fflush(stdout);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.summary.c_str());
    std::fflush(stdout);
  };
  MethodResults methods;
  report(1, "gradient suite", gradient_suite);
  report(2, "oracle equivalence", oracle_suite);
  report(3, "invariant suite", invariant_suite);
  report(4, "determinism", [&] { return determinism(lab); });
  report(5, "method effect", [&] { return method_effect(lab, methods); });
  report(6, "stage ablation", [&] { return stage_ablation(lab, methods); });
  report(7, "relation ablation", [&] { return relation_ablation(lab, methods); });
  report(8, "dark knowledge", [&] { return dark_knowledge(lab); });
  report(9, "serialization", [&] { return serialization(lab); });
  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
