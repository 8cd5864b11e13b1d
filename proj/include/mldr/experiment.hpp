#pragma once

#include "mldr/config.hpp"
#include "mldr/data.hpp"
#include "mldr/models.hpp"
#include "mldr/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mldr {

/// Teacher architecture plus how to obtain it.
struct TeacherSetup {
  ModelSpec spec;
  TrainConfig train;
  /// Pretraining draws this many fresh samples per class around the same class centers.
  std::size_t samples_per_class = 1000;
  /// Existing checkpoint to load; empty means "pretrain into the output directory".
  std::string checkpoint;
};

/// One fully resolved distillation run.
struct ExperimentConfig {
  SynthSpec data;
  std::string data_file;
  TeacherSetup teacher;
  ModelSpec student;
  std::string student_init;
  TrainConfig train;
  std::filesystem::path output_dir;
  /// Every known key with its effective value.
  KeyValueConfig resolved;

  /// Applies `raw` on top of the defaults. Unknown keys and unparsable values
  /// are ConfigErrors naming the key (and its line, when it came from a file).
  static ExperimentConfig resolve(const KeyValueConfig& raw);

  /// Stable digest of every setting that influences the teacher.
  std::string teacher_identity() const;
};

/// All recognised keys with their default values.
KeyValueConfig default_config();

Dataset build_dataset(const ExperimentConfig& cfg);
/// Fresh samples (separate noise stream) around the distillation task's class centers.
Dataset build_teacher_dataset(const ExperimentConfig& cfg);

/// Trains the teacher with cross-entropy only.
Model pretrain_teacher(const ExperimentConfig& cfg, RunRecord* record = nullptr);
/// Loads teacher.checkpoint if it exists; otherwise pretrains and saves it there
/// (or to <output_dir>/teacher.ckpt when no path is configured).
Model obtain_teacher(const ExperimentConfig& cfg);

struct RunArtifacts {
  std::filesystem::path metrics_csv;
  std::filesystem::path summary_json;
  std::filesystem::path resolved_config;
  std::filesystem::path student_checkpoint;
  RunRecord record;
};

/// Trains one student and writes metrics.csv, summary.json, config.resolved,
/// student.ckpt (and msdf.ckpt when the fusion module was trained).
RunArtifacts run_experiment(const ExperimentConfig& cfg, const Model* teacher = nullptr);

struct GridCellResult {
  std::size_t cell = 0;
  std::vector<std::pair<std::string, std::string>> settings;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accs;  // final eval accuracy of each successful seed
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  bool failed = false;
  std::string error;
};

struct GridResult {
  std::vector<GridCellResult> cells;
  std::filesystem::path aggregate_csv;  // one row per cell
  std::filesystem::path runs_csv;       // one row per (cell, seed)
  std::filesystem::path report;
};

/// A grid file is a config whose `grid.*` keys describe the sweep:
///   grid.base = base.cfg                  (relative to the grid file)
///   grid.seeds = 1, 2, 3
///   grid.axis.train.n_stages_used = 0, 1, 2, 3, 4
/// Any other key overrides the base config. Cells run in `parallel` worker
/// threads; results do not depend on the degree of parallelism.
GridResult run_grid(const std::filesystem::path& grid_file, const std::vector<std::string>& overrides,
                    std::size_t parallel, const std::filesystem::path& output_dir = {});

/// Sample mean and sample (n-1) standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Final eval accuracy recorded in a metrics CSV.
double read_final_accuracy(const std::filesystem::path& metrics_csv);

/// Averaged prediction distribution over the eval samples of `category`
/// (all samples when the dataset has no eval split), written as "class,mean_probability".
std::vector<double> pred_dist(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                              int category, const std::filesystem::path& csv_out);
std::vector<double> pred_dist(Model& model, const Dataset& ds, int category);
void write_pred_dist_csv(const std::vector<double>& dist, const std::filesystem::path& csv_out);

/// Prefixes relative output paths with $MLDR_OUTPUT_ROOT when set.
std::filesystem::path apply_output_root(const std::filesystem::path& dir);

}  // namespace mldr
