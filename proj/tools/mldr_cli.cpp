#include "mldr/errors.hpp"
#include "mldr/experiment.hpp"
#include "mldr/gradcheck.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

mldr::ExperimentConfig load_experiment(const CommonFlags& f, const char* out_key = "output.dir") {
  mldr::KeyValueConfig raw = f.config.empty() ? mldr::KeyValueConfig::parse("", "<empty>") : mldr::KeyValueConfig::load(f.config);
  for (const auto& o : f.overrides) raw.apply_override(o);
  if (f.seed_set) raw.set("train.seed", std::to_string(f.seed));
  if (!f.out.empty() && out_key != nullptr) raw.set(out_key, f.out);
  return mldr::ExperimentConfig::resolve(raw);
}

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config, "Experiment config file");
  if (config_required) c->required();
  cmd->add_option("--override", f.overrides, "key=value applied after the config (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level decoupled relational distillation on synthetic data"};
  app.require_subcommand(1);

  CommonFlags run_f;
  auto* run = app.add_subcommand("run", "Train one student and write metrics, summary and checkpoints");
  add_common(run, run_f, true);
  run->add_option("--out", run_f.out, "Output directory (overrides output.dir)");
  auto* seed_opt = run->add_option("--seed", run_f.seed, "Root seed (overrides train.seed)");

  CommonFlags grid_f;
  std::size_t parallel = 1;
  auto* grid = app.add_subcommand("grid", "Run a Cartesian ablation grid over seeds");
  grid->add_option("--config", grid_f.config, "Grid file")->required();
  grid->add_option("--override", grid_f.overrides, "key=value applied to every cell (repeatable)");
  grid->add_option("--out", grid_f.out, "Output directory for the grid");
  grid->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);

  std::string pd_ckpt, pd_data, pd_out = "pred_dist.csv";
  int pd_class = 0;
  CommonFlags pd_f;
  auto* pd = app.add_subcommand("pred-dist", "Averaged prediction distribution of one category");
  pd->add_option("--checkpoint", pd_ckpt, "Student checkpoint")->required();
  pd->add_option("--dataset", pd_data, "Dataset file (defaults to generating from --config)");
  add_common(pd, pd_f, false);
  pd->add_option("--category", pd_class, "Class index")->required();
  pd->add_option("--out", pd_out, "CSV output path");

  CommonFlags gen_f;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset described by a config");
  add_common(gen, gen_f, true);
  gen->add_option("--out", gen_f.out, "Dataset file")->required();

  CommonFlags pre_f;
  auto* pre = app.add_subcommand("pretrain-teacher", "Train the teacher with cross-entropy and save it");
  add_common(pre, pre_f, true);
  pre->add_option("--out", pre_f.out, "Teacher checkpoint path")->required();

  std::uint64_t gc_seed = 1;
  std::size_t gc_instances = 10;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--seed", gc_seed, "Seed for the random instances");
  gc->add_option("--instances", gc_instances, "Instances per op")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      run_f.seed_set = seed_opt->count() > 0;
      const auto cfg = load_experiment(run_f);
      const auto art = mldr::run_experiment(cfg);
      std::printf("final eval accuracy %.4f (%zu student params, %.1fs) -> %s\n", art.record.final_eval_acc,
                  art.record.student_params, art.record.wall_seconds, cfg.output_dir.string().c_str());
    } else if (*grid) {
      const auto result = mldr::run_grid(grid_f.config, grid_f.overrides, parallel, grid_f.out);
      std::ifstream rep(result.report);
      std::cout << rep.rdbuf();
      std::printf("aggregate: %s\n", result.aggregate_csv.string().c_str());
      for (const auto& cell : result.cells) {
        if (cell.failed) return 1;
      }
    } else if (*pd) {
      std::vector<double> dist;
      if (!pd_data.empty()) {
        dist = mldr::pred_dist(pd_ckpt, pd_data, pd_class, pd_out);
      } else {
        const auto cfg = load_experiment(pd_f, nullptr);
        mldr::Model model = mldr::load_model(pd_ckpt);
        dist = mldr::pred_dist(model, mldr::build_dataset(cfg), pd_class);
        mldr::write_pred_dist_csv(dist, pd_out);
      }
      for (std::size_t j = 0; j < dist.size(); ++j) std::printf("%zu %.6f\n", j, dist[j]);
    } else if (*gen) {
      const auto cfg = load_experiment(gen_f, nullptr);
      const auto ds = mldr::build_dataset(cfg);
      mldr::save_dataset(ds, gen_f.out);
      std::printf("%zu samples -> %s\n", ds.size(), gen_f.out.c_str());
    } else if (*pre) {
      const auto cfg = load_experiment(pre_f, nullptr);
      mldr::RunRecord record;
      const auto teacher = mldr::pretrain_teacher(cfg, &record);
      mldr::save_model(teacher, pre_f.out);
      std::printf("teacher eval accuracy %.4f (%zu params) -> %s\n", record.final_eval_acc, record.student_params,
                  pre_f.out.c_str());
    } else if (*gc) {
      bool ok = true;
      for (const auto& r : mldr::run_gradcheck(gc_seed, gc_instances)) {
        std::printf("%-22s max_rel_err %.3e  %s\n", r.op.c_str(), r.max_error, r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const mldr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
