#pragma once

// Experiment plumbing behind the command-line driver: key-value config and
// manifest files, the line-delimited results store, and report tables.

#include "forest2mlp/distill.hpp"
#include "forest2mlp/metaselect.hpp"
#include "forest2mlp/portfolio.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace forest2mlp {

namespace fs = std::filesystem;

/// Invalid configuration or manifest; the driver exits with code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Plain decimal text, shortest form that round-trips.
inline std::string format_plain(double v) {
  char buf[512];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Key-value files
//
//   # comment
//   key = value
//   [section name]
//   key = value
//
// Keys before the first section header belong to the unnamed section.

struct KeyValueSection {
  std::string name;
  std::vector<std::tuple<std::string, std::string, int>> entries;  // key, value, line
};

inline std::vector<KeyValueSection> parse_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::vector<KeyValueSection> sections(1);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = detail::trim(line);
    if (text.empty() || text[0] == '#') continue;
    if (text.front() == '[') {
      if (text.back() != ']')
        throw ConfigError(path + ":" + std::to_string(line_no) + ": unterminated section header");
      sections.push_back({detail::trim(std::string_view(text).substr(1, text.size() - 2)), {}});
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = detail::trim(std::string_view(text).substr(0, eq));
    std::string value = detail::trim(std::string_view(text).substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    sections.back().entries.emplace_back(std::move(key), std::move(value), line_no);
  }
  return sections;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline long long parse_int(const std::string& key, const std::string& value) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
  return v;
}

inline double parse_real(const std::string& key, const std::string& value) {
  double v;
  if (!parse_double(value, v))
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
}

inline std::string resolve_path(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return (path.is_absolute() ? path : base_dir / path).lexically_normal().string();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Task manifest
//
//   [task iris]
//   path = public/iris.csv       # relative to the manifest's directory
//   label = class                # optional; default last column
//   categorical = a, b           # optional column-kind overrides
//   numeric = c
//   delimiter = ,                # optional; "tab" for tab-separated

struct TaskSpec {
  std::string name;
  std::string path;
  TableSchema schema;
};

inline std::vector<TaskSpec> load_manifest(const std::string& path) {
  const auto sections = parse_key_values(path);
  const fs::path dir = fs::path(path).parent_path();
  if (!sections.front().entries.empty())
    throw ConfigError(path + ": entries must follow a [task NAME] header");
  std::vector<TaskSpec> tasks;
  std::set<std::string> names;
  for (std::size_t s = 1; s < sections.size(); ++s) {
    const auto& sec = sections[s];
    if (sec.name.rfind("task ", 0) != 0)
      throw ConfigError(path + ": unknown section [" + sec.name + "]");
    TaskSpec t;
    t.name = detail::trim(std::string_view(sec.name).substr(5));
    if (t.name.empty()) throw ConfigError(path + ": task section without a name");
    if (!names.insert(t.name).second)
      throw ConfigError(path + ": duplicate task '" + t.name + "'");
    for (const auto& [key, value, line] : sec.entries) {
      if (key == "path") {
        t.path = detail::resolve_path(dir, value);
      } else if (key == "label") {
        t.schema.label_column = value;
      } else if (key == "categorical") {
        for (auto& c : detail::split_list(value)) t.schema.categorical.insert(c);
      } else if (key == "numeric") {
        for (auto& c : detail::split_list(value)) t.schema.numeric.insert(c);
      } else if (key == "delimiter") {
        if (value == "tab") t.schema.delimiter = '\t';
        else if (value.size() == 1) t.schema.delimiter = value[0];
        else throw ConfigError(path + ":" + std::to_string(line) + ": bad delimiter");
      } else {
        throw ConfigError(path + ":" + std::to_string(line) + ": unknown key '" + key + "'");
      }
    }
    if (t.path.empty()) throw ConfigError(path + ": task '" + t.name + "' has no path");
    tasks.push_back(std::move(t));
  }
  if (tasks.empty()) throw ConfigError(path + ": manifest lists no tasks");
  return tasks;
}

inline Dataset load_task(const TaskSpec& spec) {
  Dataset ds = load_table(spec.path, spec.schema);
  ds.name = spec.name;
  return ds;
}

// ---------------------------------------------------------------------------
// Experiment config

/// The 24-config reduced grid used for desk-scale runs: 1-3 layers of 25 or
/// 100 nodes (bottleneck 0.5), relu/tanh, learning rate 1e-2 or 1e-3.
inline std::vector<StudentConfig> desk_grid() {
  std::vector<StudentConfig> grid;
  for (int layers : {1, 2, 3})
    for (int nodes : {25, 100})
      for (Activation act : kActivationChoices)
        for (double lr : {1e-2, 1e-3})
          grid.push_back({layers, nodes, 0.5, act, lr});
  return grid;
}

struct ExperimentConfig {
  std::string manifest;
  std::string out = "out";
  int folds = 10;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string grid = "full";
  DistillSettings settings;
  int histogram_bins = 20;
  bool record_wall_time = false;
  bool save_models = false;
  std::string source_dir = ".";
  std::vector<StudentConfig> configs;  // resolved from `grid`

  void validate() const {
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (manifest.empty()) throw ConfigError("config does not name a manifest");
    if (!fs::exists(manifest)) throw ConfigError("manifest not found: " + manifest);
    if (configs.empty()) throw ConfigError("grid resolves to no student configs");
    if (histogram_bins < 1) throw ConfigError("histogram.bins must be >= 1");
    if (settings.teacher.n_trees < 1) throw ConfigError("teacher.n_trees must be >= 1");
    if (settings.teacher.min_samples_leaf < 1)
      throw ConfigError("teacher.min_samples_leaf must be >= 1");
    if (settings.student.max_epochs < 1 || settings.student.batch_size < 1)
      throw ConfigError("student.max_epochs and student.batch_size must be >= 1");
    if (settings.augment.multiplier < 0.0)
      throw ConfigError("augment.multiplier must be >= 0");
  }
};

inline std::vector<StudentConfig> resolve_grid(const std::string& spec,
                                               const fs::path& base_dir) {
  if (spec == "full") return enumerate_grid();
  if (spec == "desk") return desk_grid();
  try {
    if (spec.rfind("single:", 0) == 0) return {parse_config(detail::trim(spec.substr(7)))};
    if (spec.rfind("subset:", 0) == 0) {
      const std::string path = detail::resolve_path(base_dir, detail::trim(spec.substr(7)));
      std::ifstream in(path);
      if (!in) throw ConfigError("cannot read grid subset file: " + path);
      std::vector<StudentConfig> out;
      std::string line;
      while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        out.push_back(parse_config(line));
      }
      return out;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  throw ConfigError("grid must be full, desk, single:<config> or subset:<file>; got '" + spec + "'");
}

/// Reads a flat key-value config; unknown keys are errors. Relative paths are
/// resolved against the config file's directory.
inline ExperimentConfig load_experiment_config(const std::string& path) {
  const auto sections = parse_key_values(path);
  if (sections.size() > 1)
    throw ConfigError(path + ": section headers are not allowed in experiment configs");
  ExperimentConfig cfg;
  const fs::path dir = fs::path(path).parent_path();
  cfg.source_dir = dir.string();
  using detail::parse_bool, detail::parse_int, detail::parse_real;
  for (const auto& [key, v, line] : sections.front().entries) {
    auto& st = cfg.settings;
    if (key == "manifest") cfg.manifest = detail::resolve_path(dir, v);
    else if (key == "out") cfg.out = detail::resolve_path(dir, v);
    else if (key == "folds") cfg.folds = static_cast<int>(parse_int(key, v));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, v));
    else if (key == "workers") cfg.workers = static_cast<int>(parse_int(key, v));
    else if (key == "grid") cfg.grid = v;
    else if (key == "pca.components") st.pca_components = static_cast<int>(parse_int(key, v));
    else if (key == "teacher.n_trees") st.teacher.n_trees = static_cast<int>(parse_int(key, v));
    else if (key == "teacher.max_depth") st.teacher.max_depth = static_cast<int>(parse_int(key, v));
    else if (key == "teacher.min_samples_leaf") st.teacher.min_samples_leaf = static_cast<int>(parse_int(key, v));
    else if (key == "teacher.features_per_split") st.teacher.features_per_split = static_cast<int>(parse_int(key, v));
    else if (key == "teacher.bootstrap") st.teacher.bootstrap = parse_bool(key, v);
    else if (key == "student.max_epochs") st.student.max_epochs = static_cast<int>(parse_int(key, v));
    else if (key == "student.batch_size") st.student.batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "student.tolerance") st.student.tolerance = parse_real(key, v);
    else if (key == "student.patience") st.student.patience = static_cast<int>(parse_int(key, v));
    else if (key == "student.label_mode") {
      if (v == "soft") st.student.label_mode = LabelMode::soft;
      else if (v == "hard") st.student.label_mode = LabelMode::hard;
      else throw ConfigError("student.label_mode must be soft or hard");
    } else if (key == "augment.sampler") {
      if (v == "none") st.augment.sampler = SamplerKind::none;
      else if (v == "gmm") st.augment.sampler = SamplerKind::gmm;
      else if (v == "kde") st.augment.sampler = SamplerKind::kde;
      else if (v == "uniform") st.augment.sampler = SamplerKind::uniform;
      else throw ConfigError("augment.sampler must be none, gmm, kde or uniform");
    } else if (key == "augment.components") st.augment.components = static_cast<int>(parse_int(key, v));
    else if (key == "augment.multiplier") st.augment.multiplier = parse_real(key, v);
    else if (key == "histogram.bins") cfg.histogram_bins = static_cast<int>(parse_int(key, v));
    else if (key == "record_wall_time") cfg.record_wall_time = parse_bool(key, v);
    else if (key == "save_models") cfg.save_models = parse_bool(key, v);
    else throw ConfigError(path + ":" + std::to_string(line) + ": unknown key '" + key + "'");
  }
  cfg.configs = resolve_grid(cfg.grid, dir);
  return cfg;
}

// ---------------------------------------------------------------------------
// Results store: one JSON object per line,
//   {"task":"iris","fold":3,"config_id":-1,"role":"teacher","accuracy":0.9333}
// Student records carry the grid id of their config and "diverged":true when
// training produced a non-finite loss. "wall_time" (seconds) is present only
// when the run was configured to record it.

struct ResultRecord {
  std::string task;
  int fold = 0;
  int config_id = -1;
  bool teacher = true;
  double accuracy = 0.0;
  bool diverged = false;
  std::optional<double> wall_time;
};

inline std::string to_json_line(const ResultRecord& r) {
  std::string s = "{\"task\":" + nlohmann::json(r.task).dump() +
                  ",\"fold\":" + std::to_string(r.fold) +
                  ",\"config_id\":" + std::to_string(r.config_id) +
                  ",\"role\":\"" + (r.teacher ? "teacher" : "student") + "\"" +
                  ",\"accuracy\":" + format_plain(r.accuracy);
  if (r.diverged) s += ",\"diverged\":true";
  if (r.wall_time) s += ",\"wall_time\":" + format_fixed(*r.wall_time, 6);
  return s + "}";
}

inline ResultRecord parse_result_line(const std::string& line) {
  ResultRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.task = j.at("task").get<std::string>();
    r.fold = j.at("fold").get<int>();
    r.config_id = j.at("config_id").get<int>();
    const std::string role = j.at("role").get<std::string>();
    if (role != "teacher" && role != "student") throw Error("bad role '" + role + "'");
    r.teacher = role == "teacher";
    r.accuracy = j.at("accuracy").get<double>();
    r.diverged = j.value("diverged", false);
    if (j.contains("wall_time")) r.wall_time = j.at("wall_time").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed results record: ") + e.what());
  }
  if (r.accuracy < 0.0 || r.accuracy > 1.0) throw Error("malformed results record: accuracy outside [0, 1]");
  if (r.teacher != (r.config_id < 0)) throw Error("malformed results record: role/config_id mismatch");
  return r;
}

inline std::vector<ResultRecord> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read results file: " + path);
  std::vector<ResultRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(parse_result_line(line));
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Serializes appends from concurrent workers; each record is flushed so an
/// interrupted run can resume.
class ResultsAppender {
 public:
  explicit ResultsAppender(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw Error("cannot open results file: " + path);
  }

  void append(const ResultRecord& r) {
    std::lock_guard lock(mu_);
    out_ << to_json_line(r) << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

/// Per (task, config) mean over folds of student accuracy. Tasks keep their
/// first-appearance order; configs are sorted by id. Missing cells are an
/// error.
inline PerformanceMatrix performance_matrix(const std::vector<ResultRecord>& records) {
  std::vector<std::string> tasks;
  std::map<std::string, int> task_index;
  std::set<int> config_set;
  for (const auto& r : records) {
    if (task_index.emplace(r.task, static_cast<int>(tasks.size())).second) tasks.push_back(r.task);
    if (!r.teacher) config_set.insert(r.config_id);
  }
  if (config_set.empty()) throw Error("results contain no student records");
  PerformanceMatrix pm;
  pm.task_names = tasks;
  pm.config_ids.assign(config_set.begin(), config_set.end());
  std::map<int, int> col;
  for (std::size_t c = 0; c < pm.config_ids.size(); ++c) col[pm.config_ids[c]] = static_cast<int>(c);
  Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(tasks.size()),
                            static_cast<Eigen::Index>(pm.config_ids.size()));
  Eigen::MatrixXi count = Eigen::MatrixXi::Zero(sum.rows(), sum.cols());
  for (const auto& r : records) {
    if (r.teacher) continue;
    sum(task_index[r.task], col[r.config_id]) += r.accuracy;
    count(task_index[r.task], col[r.config_id]) += 1;
  }
  for (Eigen::Index t = 0; t < sum.rows(); ++t)
    for (Eigen::Index c = 0; c < sum.cols(); ++c)
      if (count(t, c) == 0)
        throw Error("results have no record for task '" + tasks[t] + "' and config " +
                    std::to_string(pm.config_ids[c]));
  pm.values = sum.array() / count.cast<double>().array();
  pm.validate();
  return pm;
}

/// Rebuilds per-task results from records (configs sorted by id).
inline std::vector<TaskResult> task_results(const std::vector<ResultRecord>& records) {
  const PerformanceMatrix pm = performance_matrix(records);
  std::vector<TaskResult> out;
  for (const std::string& task : pm.task_names) {
    TaskResult tr;
    tr.task = task;
    tr.config_ids = pm.config_ids;
    std::map<int, double> teacher;
    std::map<int, std::map<int, std::pair<double, bool>>> student;  // config -> fold
    for (const auto& r : records) {
      if (r.task != task) continue;
      if (r.teacher) teacher[r.fold] = r.accuracy;
      else student[r.config_id][r.fold] = {r.accuracy, r.diverged};
    }
    if (teacher.empty()) throw Error("results have no teacher records for task '" + task + "'");
    for (auto [f, a] : teacher) tr.teacher_fold_accuracy.push_back(a);
    for (int id : tr.config_ids) {
      std::vector<double> acc;
      std::vector<bool> div;
      for (auto [f, v] : student[id]) {
        acc.push_back(v.first);
        div.push_back(v.second);
      }
      tr.student_fold_accuracy.push_back(std::move(acc));
      tr.student_diverged.push_back(std::move(div));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report tables (tab-separated, header row, plain decimals)

class TsvWriter {
 public:
  explicit TsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw Error("cannot write " + path);
  }

  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((out_ << (first ? "" : "\t") << cell(cells), first = false), ...);
    out_ << '\n';
  }

 private:
  static std::string cell(double v) { return format_fixed(v, 6); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  std::ofstream out_;
};

inline void write_histogram_reports(const std::vector<TaskResult>& results, int bins,
                                    const fs::path& out_dir) {
  const AccuracyHistogram h = accuracy_histogram(results, bins);
  {
    TsvWriter w((out_dir / "histogram.tsv").string());
    w.row("bin_lower", "bin_upper", "count");
    for (const auto& b : h.bins) w.row(b.lower, b.upper, b.count);
  }
  {
    TsvWriter w((out_dir / "summary.tsv").string());
    w.row("statistic", "value");
    w.row("tasks", static_cast<int>(h.differences.size()));
    w.row("mean_difference", h.mean);
    w.row("median_difference", h.median);
    w.row("fraction_student_not_worse", h.fraction_not_worse);
  }
  {
    TsvWriter w((out_dir / "tasks.tsv").string());
    w.row("task", "teacher_mean", "best_student_mean", "best_config_id", "best_config",
          "difference");
    for (std::size_t t = 0; t < results.size(); ++t) {
      const TaskResult& r = results[t];
      const std::size_t b = r.best_student_index();
      w.row(r.task, r.teacher_mean(), r.best_student_mean(), r.config_ids[b],
            to_string(config_from_id(r.config_ids[b])), h.differences[t]);
    }
  }
}

// ---------------------------------------------------------------------------
// distill

struct RunOptions {
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::ostream* log = &std::clog;
};

struct ExperimentOutcome {
  std::vector<TaskResult> results;
  std::vector<std::string> failed_tasks;
  std::string results_path;
};

inline std::string safe_file_name(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

/// Runs every manifest task, appending records as work units finish and
/// resuming from an existing results file in the output directory. On
/// completion the results file is rewritten in canonical order (manifest task
/// order, fold, teacher first, then grid order), so identical inputs and seeds
/// produce identical bytes.
inline ExperimentOutcome run_experiment(ExperimentConfig cfg, const RunOptions& opts = {}) {
  if (opts.workers) cfg.workers = *opts.workers;
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.out = *opts.out;
  cfg.validate();
  const auto tasks = load_manifest(cfg.manifest);
  for (const auto& t : tasks)
    if (!fs::exists(t.path))
      throw ConfigError("dataset file for task '" + t.name + "' not found: " + t.path);

  const fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  const std::string results_path = (out_dir / "results.jsonl").string();

  using Key = std::tuple<std::string, int, int>;  // task, fold, config id (-1 teacher)
  std::set<Key> done;
  std::vector<ResultRecord> previous;
  if (fs::exists(results_path)) {
    previous = read_results(results_path);
    for (const auto& r : previous) done.insert({r.task, r.fold, r.config_id});
  }

  DistillSettings settings = cfg.settings;
  settings.workers = cfg.workers;
  std::ostream& log = *opts.log;
  ExperimentOutcome outcome;
  outcome.results_path = results_path;
  {
    ResultsAppender appender(results_path);
    for (const auto& spec : tasks) {
      try {
        const Dataset ds = load_task(spec);
        const std::uint64_t tseed = task_seed(cfg.seed, spec.name);
        const FoldPlan plan = stratified_kfold(ds.labels, cfg.folds, fold_plan_seed(tseed));
        log << "[" << spec.name << "] n=" << ds.rows() << " d=" << ds.cols()
            << " classes=" << ds.class_count << '\n';

        std::vector<int> ids;
        for (const auto& c : cfg.configs) ids.push_back(config_id(c));
        TaskHooks hooks;
        hooks.done = [&](int fold, int ci) {
          return done.count({spec.name, fold, ci < 0 ? -1 : ids[ci]}) > 0;
        };
        hooks.record = [&](const UnitRecord& u) {
          ResultRecord r;
          r.task = spec.name;
          r.fold = u.fold;
          r.teacher = u.config_index < 0;
          r.config_id = r.teacher ? -1 : ids[u.config_index];
          r.accuracy = u.accuracy;
          r.diverged = u.diverged;
          if (cfg.record_wall_time) r.wall_time = u.wall_time;
          appender.append(r);
        };
        std::mutex model_mu;
        if (cfg.save_models) {
          const fs::path model_dir = out_dir / "models" / safe_file_name(spec.name);
          fs::create_directories(model_dir);
          hooks.model = [&, model_dir](int fold, int ci, const FoldModels& fm, const Mlp* net) {
            std::lock_guard lock(model_mu);
            const std::string stem = "fold" + std::to_string(fold);
            if (net)
              write_bytes((model_dir / (stem + "-config" + std::to_string(ids[ci]) + ".f2m")).string(),
                          serialize(*net));
            else
              write_bytes((model_dir / (stem + "-teacher.f2m")).string(), serialize(fm.teacher));
          };
        }
        run_task_units(ds, settings, cfg.configs, plan, tseed, hooks);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        log << "[" << spec.name << "] failed: " << e.what() << '\n';
        outcome.failed_tasks.push_back(spec.name);
      }
    }
  }

  // Canonical rewrite: keep the latest record per key, restricted to the
  // current manifest and grid.
  std::map<std::string, int> task_order;
  for (std::size_t i = 0; i < tasks.size(); ++i) task_order[tasks[i].name] = static_cast<int>(i);
  std::map<int, int> config_order;
  for (std::size_t i = 0; i < cfg.configs.size(); ++i)
    config_order[config_id(cfg.configs[i])] = static_cast<int>(i);
  std::map<std::tuple<int, int, int>, ResultRecord> canonical;
  for (const auto& r : read_results(results_path)) {
    if (!task_order.count(r.task)) continue;
    if (!r.teacher && !config_order.count(r.config_id)) continue;
    if (r.fold < 0 || r.fold >= cfg.folds) continue;
    canonical[{task_order[r.task], r.fold, r.teacher ? -1 : config_order[r.config_id]}] = r;
  }
  {
    const std::string tmp = results_path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      for (const auto& [key, r] : canonical) out << to_json_line(r) << '\n';
    }
    fs::rename(tmp, results_path);
  }

  std::vector<ResultRecord> final_records;
  for (const auto& [key, r] : canonical)
    if (std::find(outcome.failed_tasks.begin(), outcome.failed_tasks.end(), r.task) ==
        outcome.failed_tasks.end())
      final_records.push_back(r);
  if (!final_records.empty()) {
    outcome.results = task_results(final_records);
    write_histogram_reports(outcome.results, cfg.histogram_bins, out_dir);
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// portfolio

struct PortfolioReport {
  PerformanceMatrix pm;
  PortfolioTrace trace;
  std::vector<int> sizes;
};

inline PortfolioReport run_portfolio(const std::string& results_path, std::vector<int> sizes,
                                     const fs::path& out_dir) {
  PortfolioReport rep;
  rep.pm = performance_matrix(read_results(results_path));
  rep.trace = greedy_reduce(rep.pm);
  const int s = rep.pm.config_count();
  if (sizes.empty())
    for (int i = s; i >= 1; --i) sizes.push_back(i);
  for (int size : sizes)
    if (size < 1 || size > s)
      throw ConfigError("portfolio size " + std::to_string(size) + " outside [1, " +
                        std::to_string(s) + "]");
  std::sort(sizes.rbegin(), sizes.rend());
  rep.sizes = sizes;

  fs::create_directories(out_dir);
  {
    TsvWriter w((out_dir / "portfolio_trace.tsv").string());
    w.row("size", "score", "oracle_gap");
    for (int size : sizes)
      w.row(size, rep.trace.score_by_size[size - 1], rep.trace.gap_by_size[size - 1]);
  }
  {
    TsvWriter w((out_dir / "elimination_order.tsv").string());
    w.row("step", "config_id", "config");
    for (std::size_t i = 0; i < rep.trace.elimination_order.size(); ++i) {
      const int id = rep.trace.elimination_order[i];
      w.row(static_cast<int>(i + 1), id, to_string(config_from_id(id)));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// autoselect

/// Loads cached metafeature rows (keyed by task) when the cache header
/// matches the current descriptor list; computes and caches the rest.
inline Matrix task_metafeatures(const std::vector<std::string>& task_names,
                                const std::vector<TaskSpec>& manifest,
                                const fs::path& cache_path) {
  std::string header = "task";
  for (auto name : kMetaFeatureNames) header += "\t" + std::string(name);

  std::map<std::string, Vector> cached;
  if (fs::exists(cache_path)) {
    std::ifstream in(cache_path);
    std::string line;
    if (std::getline(in, line) && line == header) {
      while (std::getline(in, line)) {
        auto cells = detail::split_row(line, '\t');
        if (static_cast<int>(cells.size()) != kMetaFeatureCount + 1) continue;
        Vector v(kMetaFeatureCount);
        bool ok = true;
        for (int k = 0; k < kMetaFeatureCount; ++k) ok = ok && parse_double(cells[k + 1], v[k]);
        if (ok) cached[cells[0]] = v;
      }
    }
  }
  Matrix out(static_cast<Eigen::Index>(task_names.size()), kMetaFeatureCount);
  for (std::size_t t = 0; t < task_names.size(); ++t) {
    auto it = cached.find(task_names[t]);
    if (it == cached.end()) {
      auto spec = std::find_if(manifest.begin(), manifest.end(),
                               [&](const TaskSpec& s) { return s.name == task_names[t]; });
      if (spec == manifest.end())
        throw ConfigError("task '" + task_names[t] + "' from the results is not in the manifest");
      it = cached.emplace(task_names[t], extract_metafeatures(load_task(*spec))).first;
    }
    out.row(static_cast<Eigen::Index>(t)) = it->second.transpose();
  }
  std::ofstream cache(cache_path, std::ios::trunc);
  cache << header << '\n';
  for (const auto& [name, v] : cached) {
    cache << name;
    for (Eigen::Index k = 0; k < v.size(); ++k) cache << '\t' << format_double(v[k]);
    cache << '\n';
  }
  return out;
}

struct AutoselectPoint {
  int size = 0;
  double subset_score = 0.0;   // oracle choice within the candidate set
  double auto_score = 0.0;     // selector's held-out choice
  double single_best_score = 0.0;
  double selection_accuracy = 0.0;
  double baseline_accuracy = 0.0;
  SelectorCrossValidation cv;
};

/// Candidate sets come from the greedy portfolio trace, except that size 1
/// is the config with the best mean over tasks. For each size the selector is
/// cross-validated over tasks.
inline std::vector<AutoselectPoint> autoselect_curve(const PerformanceMatrix& pm,
                                                     const Matrix& metafeatures,
                                                     const std::vector<int>& sizes, int folds,
                                                     std::uint64_t seed) {
  const PortfolioTrace trace = greedy_reduce(pm);
  int best_column = 0;
  for (int c = 1; c < pm.config_count(); ++c)
    if (pm.values.col(c).mean() > pm.values.col(best_column).mean()) best_column = c;
  const double single_best = pm.values.col(best_column).mean();
  std::vector<AutoselectPoint> out;
  for (int size : sizes) {
    if (size < 1 || size > pm.config_count())
      throw ConfigError("candidate size " + std::to_string(size) + " outside [1, " +
                        std::to_string(pm.config_count()) + "]");
    AutoselectPoint p;
    p.size = size;
    const std::vector<int> candidates =
        size == 1 ? std::vector<int>{pm.config_ids[best_column]} : trace.subset_of_size(size);
    p.cv = train_selector(metafeatures, pm, candidates, folds, mix_seed(seed, size));
    p.subset_score = best_subset_score(pm, candidates);
    p.auto_score = evaluate_selector(p.cv.predictions, pm);
    p.single_best_score = single_best;
    p.selection_accuracy = p.cv.selection_accuracy;
    p.baseline_accuracy = p.cv.baseline_accuracy;
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_autoselect_reports(const std::vector<AutoselectPoint>& points,
                                     const PerformanceMatrix& pm, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  {
    TsvWriter w((out_dir / "autoselect_curve.tsv").string());
    w.row("size", "subset_score", "auto_score", "single_best_score", "selection_accuracy",
          "baseline_accuracy", "auto_le_subset");
    for (const auto& p : points)
      w.row(p.size, p.subset_score, p.auto_score, p.single_best_score, p.selection_accuracy,
            p.baseline_accuracy, p.auto_score <= p.subset_score + 1e-12 ? "yes" : "no");
  }
  {
    TsvWriter w((out_dir / "autoselect_choices.tsv").string());
    w.row("size", "task", "selected_config", "best_config", "selected_accuracy",
          "best_accuracy");
    for (const auto& p : points)
      for (int t = 0; t < pm.task_count(); ++t)
        w.row(p.size, pm.task_names[t], p.cv.predictions[t], p.cv.targets[t],
              pm.values(t, pm.column_of(p.cv.predictions[t])),
              pm.values(t, pm.column_of(p.cv.targets[t])));
  }
}

}  // namespace forest2mlp
