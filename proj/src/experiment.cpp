#include "mldr/experiment.hpp"

#include "mldr/errors.hpp"

#include <json.hpp>

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

namespace mldr {

namespace fs = std::filesystem;

KeyValueConfig default_config() {
  static const char* const kDefaults = R"(
output.dir = runs/default

data.n_classes = 10
data.samples_per_class = 200
data.input_shape = 1, 16, 16
data.similarity = paired
data.similarity_near = 0.9
data.similarity_far = 0.1
data.base_dist = 6
data.noise_sigma = 1
data.eval_fraction = 0.2
data.seed = 1
data.file =

teacher.arch = token
teacher.stages = 4
teacher.widths = 64, 64, 64, 64
teacher.patch = 4
teacher.mlp_ratio = 2
teacher.checkpoint =
teacher.samples_per_class = 1000
teacher.epochs = 20
teacher.lr = 0.003
teacher.optimizer = adamw
teacher.weight_decay = 0.01
teacher.batch_size = 64
teacher.seed = 7

student.arch = spatial
student.stages = 4
student.widths = 16, 32, 32, 32
student.patch = 4
student.mlp_ratio = 2
student.init_checkpoint =

train.method = mldr_full
train.optimizer = sgd
train.lr = 0.05
train.momentum = 0.9
train.weight_decay = 0
train.epochs = 30
train.batch_size = 64
train.clip_norm = 0
train.seed = 1
train.n_stages_used = 4

loss.temperature = 4
loss.lambda = 1
loss.lambda_dfra = -1
loss.mu = 1
loss.use_cwrd = true
loss.use_swrd = true
loss.kl_direction = student_first
loss.t2_scale = false
loss.ce_mean = false
loss.sample_scale = sqrt_classes
loss.logit_level = true
loss.feature_level = true
loss.use_msdf = true
loss.use_dfra = true

msdf.token_dim = 32
msdf.gate_hidden = 0
)";
  return KeyValueConfig::parse(kDefaults, "<defaults>");
}

namespace {

/// Typed access to a resolved config; parse failures name the key and where it was set.
class Reader {
 public:
  explicit Reader(const KeyValueConfig& cfg) : cfg_(cfg) {}

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(where(key) + msg);
  }

  const std::string& str(const std::string& key) const { return cfg_.get(key); }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used == v.size() && std::isfinite(x)) return x;
    } catch (const std::exception&) {
    }
    fail(key, "'" + key + "' expects a number, got '" + v + "'");
  }

  std::uint64_t u64(const std::string& key) const { return parse_u64(key, str(key)); }
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(key, "'" + key + "' expects true or false, got '" + v + "'");
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(str(key))) out.push_back(static_cast<std::size_t>(parse_u64(key, item)));
    if (out.empty()) fail(key, "'" + key + "' expects a comma-separated list of integers");
    return out;
  }

  template <class F>
  auto wrap(const std::string& key, F&& f) const {
    try {
      return f(str(key));
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

 private:
  std::string where(const std::string& key) const {
    const auto it = cfg_.entries().find(key);
    if (it == cfg_.entries().end() || it->second.line < 0) return key + " (default): ";
    if (it->second.line == 0) return key + " (override): ";
    return cfg_.source() + ":" + std::to_string(it->second.line) + ": ";
  }

  std::uint64_t parse_u64(const std::string& key, const std::string& v) const {
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
      fail(key, "'" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return x;
  }

  const KeyValueConfig& cfg_;
};

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ModelSpec read_model_spec(const Reader& r, const std::string& prefix, std::size_t n_classes, const Shape& input) {
  ModelSpec spec;
  spec.arch = r.wrap(prefix + ".arch", [](const std::string& v) { return parse_arch_kind(v); });
  spec.n_stages = r.size(prefix + ".stages");
  spec.widths = r.sizes(prefix + ".widths");
  spec.patch = r.size(prefix + ".patch");
  spec.mlp_ratio = r.size(prefix + ".mlp_ratio");
  spec.n_classes = n_classes;
  spec.input_shape = input;
  try {
    spec.validate();
  } catch (const std::exception& e) {
    r.fail(prefix + ".widths", std::string(prefix) + " architecture: " + e.what());
  }
  return spec;
}

}  // namespace

fs::path apply_output_root(const fs::path& dir) {
  const char* root = std::getenv("MLDR_OUTPUT_ROOT");
  if (root == nullptr || *root == '\0' || dir.is_absolute()) return dir;
  return fs::path(root) / dir;
}

ExperimentConfig ExperimentConfig::resolve(const KeyValueConfig& raw) {
  KeyValueConfig merged = default_config();
  KeyValueConfig resolved = KeyValueConfig::parse("", raw.source());
  for (const auto& [key, entry] : merged.entries()) resolved.set(key, entry.value, -1);
  for (const auto& key : raw.order()) {
    const auto& entry = raw.entries().at(key);
    if (!merged.contains(key)) {
      if (entry.line > 0) throw ConfigError(raw.source() + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
      throw ConfigError("unknown key '" + key + "' (override)");
    }
    resolved.set(key, entry.value, entry.line);
  }

  ExperimentConfig cfg;
  const Reader r(resolved);

  SynthSpec& d = cfg.data;
  d.n_classes = r.size("data.n_classes");
  d.samples_per_class = r.size("data.samples_per_class");
  d.input_shape = r.sizes("data.input_shape");
  d.base_dist = r.real("data.base_dist");
  d.noise_sigma = r.real("data.noise_sigma");
  d.eval_fraction = r.real("data.eval_fraction");
  d.seed = r.u64("data.seed");
  const std::string& sim = r.str("data.similarity");
  if (d.n_classes < 2) r.fail("data.n_classes", "data.n_classes must be >= 2");
  if (sim == "paired") {
    d.class_similarity = paired_similarity(d.n_classes, r.real("data.similarity_near"), r.real("data.similarity_far"));
  } else if (sim == "uniform") {
    d.class_similarity = uniform_similarity(d.n_classes, r.real("data.similarity_far"));
  } else {
    r.fail("data.similarity", "data.similarity must be 'paired' or 'uniform', got '" + sim + "'");
  }
  try {
    d.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  cfg.data_file = r.str("data.file");

  TeacherSetup& t = cfg.teacher;
  t.spec = read_model_spec(r, "teacher", d.n_classes, d.input_shape);
  t.checkpoint = r.str("teacher.checkpoint");
  t.samples_per_class = r.size("teacher.samples_per_class");
  t.train.method = Method::CeOnly;
  t.train.optimizer = r.wrap("teacher.optimizer", [](const std::string& v) { return parse_optimizer(v); });
  t.train.base_lr = r.real("teacher.lr");
  t.train.weight_decay = r.real("teacher.weight_decay");
  t.train.epochs = r.size("teacher.epochs");
  t.train.batch_size = r.size("teacher.batch_size");
  t.train.seed = r.u64("teacher.seed");
  t.train.ce_mean = true;
  t.train.n_stages_used = 0;

  cfg.student = read_model_spec(r, "student", d.n_classes, d.input_shape);
  cfg.student_init = r.str("student.init_checkpoint");

  TrainConfig& tc = cfg.train;
  tc.method = r.wrap("train.method", [](const std::string& v) { return parse_method(v); });
  tc.optimizer = r.wrap("train.optimizer", [](const std::string& v) { return parse_optimizer(v); });
  tc.base_lr = r.real("train.lr");
  tc.momentum = r.real("train.momentum");
  tc.weight_decay = r.real("train.weight_decay");
  tc.epochs = r.size("train.epochs");
  tc.batch_size = r.size("train.batch_size");
  tc.clip_norm = r.real("train.clip_norm");
  tc.seed = r.u64("train.seed");
  tc.n_stages_used = r.size("train.n_stages_used");
  tc.hp.temperature = r.real("loss.temperature");
  tc.hp.lambda = r.real("loss.lambda");
  tc.lambda_dfra = r.real("loss.lambda_dfra");
  tc.mu = r.real("loss.mu");
  tc.hp.use_cwrd = r.flag("loss.use_cwrd");
  tc.hp.use_swrd = r.flag("loss.use_swrd");
  tc.hp.t2_scale = r.flag("loss.t2_scale");
  tc.ce_mean = r.flag("loss.ce_mean");
  const std::string& dir = r.str("loss.kl_direction");
  if (dir == "student_first") {
    tc.hp.kl_direction = KlDirection::StudentFirst;
  } else if (dir == "teacher_first") {
    tc.hp.kl_direction = KlDirection::TeacherFirst;
  } else {
    r.fail("loss.kl_direction", "loss.kl_direction must be student_first or teacher_first, got '" + dir + "'");
  }
  const std::string& scale = r.str("loss.sample_scale");
  if (scale == "sqrt_classes") {
    tc.hp.sample_scale = SampleScale::SqrtClasses;
  } else if (scale == "sqrt_batch") {
    tc.hp.sample_scale = SampleScale::SqrtBatch;
  } else {
    r.fail("loss.sample_scale", "loss.sample_scale must be sqrt_classes or sqrt_batch, got '" + scale + "'");
  }
  tc.logit_level = r.flag("loss.logit_level");
  tc.feature_level = r.flag("loss.feature_level");
  tc.use_msdf = r.flag("loss.use_msdf");
  tc.use_dfra = r.flag("loss.use_dfra");
  tc.token_dim = r.size("msdf.token_dim");
  tc.gate_hidden = r.size("msdf.gate_hidden");
  if (tc.token_dim == 0) r.fail("msdf.token_dim", "msdf.token_dim must be >= 1");
  tc.validate(cfg.student);
  t.train.validate(t.spec);

  cfg.output_dir = apply_output_root(r.str("output.dir"));
  cfg.resolved = std::move(resolved);
  return cfg;
}

std::string ExperimentConfig::teacher_identity() const {
  std::string text;
  for (const auto& [key, entry] : resolved.entries()) {
    if (key == "teacher.checkpoint") continue;
    if (key.rfind("data.", 0) == 0 || key.rfind("teacher.", 0) == 0) text += key + "=" + entry.value + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data_file.empty()) {
    Dataset ds = load_dataset(cfg.data_file);
    if (ds.n_classes != cfg.data.n_classes || ds.sample_shape() != cfg.data.input_shape) {
      throw ConfigError("dataset file '" + cfg.data_file + "' does not match data.n_classes / data.input_shape");
    }
    return ds;
  }
  return generate(cfg.data);
}

Dataset build_teacher_dataset(const ExperimentConfig& cfg) {
  SynthSpec spec = cfg.data;
  spec.samples_per_class = cfg.teacher.samples_per_class;
  spec.noise_stream = 1;
  return generate(spec);
}

Model pretrain_teacher(const ExperimentConfig& cfg, RunRecord* record) {
  const Dataset ds = build_teacher_dataset(cfg);
  TrainOutcome out = train(cfg.teacher.train, nullptr, cfg.teacher.spec, ds);
  if (record != nullptr) *record = out.record;
  return std::move(out.student);
}

Model obtain_teacher(const ExperimentConfig& cfg) {
  if (!cfg.teacher.checkpoint.empty() && fs::exists(cfg.teacher.checkpoint)) {
    Model teacher = load_model(cfg.teacher.checkpoint);
    if (!(teacher.spec == cfg.teacher.spec)) {
      throw ConfigError("teacher checkpoint '" + cfg.teacher.checkpoint + "' does not match the teacher.* settings");
    }
    return teacher;
  }
  Model teacher = pretrain_teacher(cfg);
  save_model(teacher, cfg.teacher.checkpoint.empty() ? cfg.output_dir / "teacher.ckpt" : fs::path(cfg.teacher.checkpoint));
  return teacher;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, const Model* teacher) {
  fs::create_directories(cfg.output_dir);
  const Dataset ds = build_dataset(cfg);

  std::optional<Model> owned_teacher;
  if (teacher == nullptr && cfg.train.switches().needs_teacher()) {
    owned_teacher = obtain_teacher(cfg);
    teacher = &*owned_teacher;
  }
  std::optional<Model> init;
  if (!cfg.student_init.empty()) init = load_model(cfg.student_init);

  TrainOutcome out = train(cfg.train, teacher, cfg.student, ds, {}, init ? &*init : nullptr);

  RunArtifacts art;
  art.record = out.record;
  art.metrics_csv = cfg.output_dir / "metrics.csv";
  art.summary_json = cfg.output_dir / "summary.json";
  art.resolved_config = cfg.output_dir / "config.resolved";
  art.student_checkpoint = cfg.output_dir / "student.ckpt";
  {
    std::ofstream csv(art.metrics_csv);
    write_metrics_csv(out.record, csv);
    if (!csv) throw std::runtime_error("cannot write " + art.metrics_csv.string());
  }
  {
    std::ofstream conf(art.resolved_config);
    conf << cfg.resolved.dump();
  }
  save_model(out.student, art.student_checkpoint);
  if (out.msdf) {
    std::string meta = "stages=" + std::to_string(out.msdf->stage_count()) +
                       "\ntoken_dim=" + std::to_string(out.msdf->layout.token_dim) +
                       "\ngate_hidden=" + std::to_string(out.msdf->layout.hidden()) + "\n";
    save_parameters(out.msdf->params, meta, cfg.output_dir / "msdf.ckpt");
  }

  nlohmann::json summary;
  summary["method"] = to_string(cfg.train.method);
  summary["seed"] = cfg.train.seed;
  summary["final_eval_acc"] = out.record.final_eval_acc;
  summary["wall_seconds"] = out.record.wall_seconds;
  summary["student_params"] = out.record.student_params;
  summary["msdf_params"] = out.record.msdf_params;
  if (teacher != nullptr) summary["teacher_params"] = count_params(*teacher);
  nlohmann::json conf = nlohmann::json::object();
  for (const auto& [key, entry] : cfg.resolved.entries()) conf[key] = entry.value;
  summary["config"] = conf;
  std::ofstream(art.summary_json) << summary.dump(2) << "\n";
  return art;
}

// ---------------------------------------------------------------- grids

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

double read_final_accuracy(const fs::path& metrics_csv) {
  std::ifstream in(metrics_csv);
  if (!in) throw DataError("cannot read " + metrics_csv.string());
  std::string header;
  std::getline(in, header);
  if (header != kMetricsHeader) throw DataError(metrics_csv.string() + ": unexpected header");
  std::string line;
  std::string last;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) last = line;
  }
  if (last.empty()) throw DataError(metrics_csv.string() + ": no epochs recorded");
  std::vector<std::string> cols;
  std::stringstream ss(last);
  for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  if (cols.size() < 8) throw DataError(metrics_csv.string() + ": malformed row");
  return std::stod(cols[7]);
}

namespace {

struct GridJob {
  std::size_t cell;
  std::size_t seed_index;
  ExperimentConfig cfg;
  std::string teacher_key;
};

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

GridResult run_grid(const fs::path& grid_file, const std::vector<std::string>& overrides, std::size_t parallel,
                    const fs::path& output_dir) {
  const KeyValueConfig grid = KeyValueConfig::load(grid_file);
  if (!grid.contains("grid.base")) throw ConfigError(grid_file.string() + ": missing grid.base");
  if (!grid.contains("grid.seeds")) throw ConfigError(grid_file.string() + ": missing grid.seeds");

  const fs::path base_path = grid_file.parent_path() / grid.get("grid.base");
  KeyValueConfig base = KeyValueConfig::load(base_path);

  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& key : grid.order()) {
    const auto& entry = grid.entries().at(key);
    if (key.rfind("grid.axis.", 0) == 0) {
      auto values = split_list(entry.value);
      if (values.empty()) throw ConfigError(grid.source() + ":" + std::to_string(entry.line) + ": empty axis '" + key + "'");
      axes.emplace_back(key.substr(10), std::move(values));
    } else if (key == "grid.base" || key == "grid.seeds") {
      continue;
    } else if (key.rfind("grid.", 0) == 0) {
      throw ConfigError(grid.source() + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
    } else {
      base.set(key, entry.value, 0);
    }
  }
  for (const auto& o : overrides) base.apply_override(o);

  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(grid.get("grid.seeds"))) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError(grid_file.string() + ": grid.seeds entry '" + s + "' is not an integer");
    }
  }
  if (seeds.empty()) throw ConfigError(grid_file.string() + ": grid.seeds is empty");

  const ExperimentConfig base_cfg = ExperimentConfig::resolve(base);
  const fs::path out_root = fs::absolute(output_dir.empty() ? base_cfg.output_dir : apply_output_root(output_dir));
  fs::create_directories(out_root);

  std::size_t n_cells = 1;
  for (const auto& axis : axes) n_cells *= axis.second.size();

  GridResult result;
  result.cells.resize(n_cells);
  std::vector<GridJob> jobs;
  std::map<std::string, ExperimentConfig> teacher_cfgs;
  for (std::size_t c = 0; c < n_cells; ++c) {
    GridCellResult& cell = result.cells[c];
    cell.cell = c;
    cell.seeds = seeds;
    KeyValueConfig cell_cfg = base;
    std::size_t rem = c;
    std::vector<std::pair<std::string, std::string>> settings(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      const auto& [key, values] = axes[a];
      settings[a] = {key, values[rem % values.size()]};
      rem /= values.size();
    }
    for (const auto& [k, v] : settings) cell_cfg.set(k, v, 0);
    cell.settings = settings;
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", c);
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      KeyValueConfig run_cfg = cell_cfg;
      run_cfg.set("train.seed", std::to_string(seeds[si]), 0);
      run_cfg.set("output.dir", (out_root / name / ("seed_" + std::to_string(seeds[si]))).string(), 0);
      try {
        ExperimentConfig resolved = ExperimentConfig::resolve(run_cfg);
        std::string key;
        if (resolved.train.switches().needs_teacher()) {
          key = resolved.teacher_identity();
          if (resolved.teacher.checkpoint.empty()) {
            resolved.teacher.checkpoint = (out_root / "teachers" / (key + ".ckpt")).string();
          }
          key += "|" + resolved.teacher.checkpoint;
          teacher_cfgs.emplace(key, resolved);
        }
        jobs.push_back(GridJob{c, si, std::move(resolved), key});
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
    }
  }

  // Teachers first, one per distinct identity, so concurrent cells never race on a checkpoint.
  std::map<std::string, Model> teachers;
  std::map<std::string, std::string> teacher_errors;
  for (const auto& [key, tcfg] : teacher_cfgs) {
    try {
      teachers.emplace(key, obtain_teacher(tcfg));
    } catch (const std::exception& e) {
      teacher_errors.emplace(key, e.what());
    }
  }

  std::vector<std::string> job_errors(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const GridJob& job = jobs[j];
      try {
        const Model* teacher = nullptr;
        if (!job.teacher_key.empty()) {
          if (auto it = teacher_errors.find(job.teacher_key); it != teacher_errors.end()) {
            throw TrainingError("teacher unavailable: " + it->second);
          }
          teacher = &teachers.at(job.teacher_key);
        }
        run_experiment(job.cfg, teacher);
      } catch (const std::exception& e) {
        job_errors[j] = e.what();
        fs::create_directories(job.cfg.output_dir);
        std::ofstream(job.cfg.output_dir / "error.txt") << e.what() << "\n";
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(parallel, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    GridCellResult& cell = result.cells[jobs[j].cell];
    if (!job_errors[j].empty()) {
      cell.failed = true;
      if (cell.error.empty()) cell.error = job_errors[j];
    }
  }

  // Aggregates are recomputed from the per-run files rather than from memory.
  result.aggregate_csv = out_root / "aggregate.csv";
  std::ofstream agg(result.aggregate_csv);
  agg << "cell";
  for (const auto& axis : axes) agg << "," << axis.first;
  agg << ",n_ok,n_seeds,acc_mean,acc_std,status\n";
  result.runs_csv = out_root / "runs.csv";
  std::ofstream runs(result.runs_csv);
  runs << "cell";
  for (const auto& axis : axes) runs << "," << axis.first;
  runs << ",seed,final_eval_acc,status\n";
  for (auto& cell : result.cells) {
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", cell.cell);
    for (auto seed : seeds) {
      const fs::path csv = out_root / name / ("seed_" + std::to_string(seed)) / "metrics.csv";
      std::string status = "failed";
      double acc = 0.0;
      if (fs::exists(csv) && !fs::exists(csv.parent_path() / "error.txt")) {
        try {
          acc = read_final_accuracy(csv);
          cell.accs.push_back(acc);
          status = "ok";
        } catch (const std::exception&) {
        }
      }
      runs << cell.cell;
      for (const auto& s : cell.settings) runs << "," << csv_escape(s.second);
      char tail[96];
      std::snprintf(tail, sizeof tail, ",%llu,%.17g,", static_cast<unsigned long long>(seed), acc);
      runs << tail << status << "\n";
    }
    std::tie(cell.mean, cell.stddev) = mean_std(cell.accs);
    agg << cell.cell;
    for (const auto& s : cell.settings) agg << "," << csv_escape(s.second);
    char nums[128];
    std::snprintf(nums, sizeof nums, ",%zu,%zu,%.6f,%.6f,", cell.accs.size(), seeds.size(), cell.mean, cell.stddev);
    agg << nums << (cell.failed ? "failed" : "ok") << "\n";
  }
  agg.close();
  runs.close();

  result.report = out_root / "report.txt";
  std::ofstream rep(result.report);
  rep << "grid " << grid_file.string() << ", " << n_cells << " cells x " << seeds.size() << " seeds\n\n";
  for (const auto& cell : result.cells) {
    rep << "cell " << cell.cell << ":";
    for (const auto& [k, v] : cell.settings) rep << " " << k << "=" << v;
    char line[128];
    std::snprintf(line, sizeof line, "  acc %.4f +- %.4f (%zu/%zu ok)", cell.mean, cell.stddev, cell.accs.size(),
                  seeds.size());
    rep << line;
    if (cell.failed) rep << "  FAILED: " << cell.error;
    rep << "\n";
  }
  for (std::size_t a = 0; a < axes.size(); ++a) {
    rep << "\ntrend along " << axes[a].first << " (mean over other axes):\n";
    for (const auto& value : axes[a].second) {
      std::vector<double> accs;
      for (const auto& cell : result.cells) {
        if (cell.settings[a].second == value && !cell.accs.empty()) accs.push_back(cell.mean);
      }
      char line[128];
      std::snprintf(line, sizeof line, "  %-16s %.4f\n", value.c_str(), mean_std(accs).first);
      rep << line;
    }
  }
  return result;
}

// ---------------------------------------------------------------- prediction distributions

std::vector<double> pred_dist(Model& model, const Dataset& ds, int category) {
  const Dataset eval = ds.subset(Split::Eval);
  return mean_prediction(model, eval.size() > 0 ? eval : ds, category);
}

void write_pred_dist_csv(const std::vector<double>& dist, const fs::path& csv_out) {
  if (csv_out.has_parent_path()) fs::create_directories(csv_out.parent_path());
  std::ofstream out(csv_out);
  out << "class,mean_probability\n";
  for (std::size_t j = 0; j < dist.size(); ++j) {
    char line[64];
    std::snprintf(line, sizeof line, "%zu,%.17g\n", j, dist[j]);
    out << line;
  }
  if (!out) throw std::runtime_error("cannot write " + csv_out.string());
}

std::vector<double> pred_dist(const fs::path& checkpoint, const fs::path& dataset, int category,
                              const fs::path& csv_out) {
  Model model = load_model(checkpoint);
  const Dataset ds = load_dataset(dataset);
  if (ds.n_classes != model.spec.n_classes || ds.sample_shape() != model.spec.input_shape) {
    throw DataError("dataset '" + dataset.string() + "' does not match the model's classes or input shape");
  }
  auto dist = pred_dist(model, ds, category);
  write_pred_dist_csv(dist, csv_out);
  return dist;
}

}  // namespace mldr
