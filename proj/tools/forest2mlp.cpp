// Command-line driver: distill, portfolio, autoselect, augment-eval, inspect, synth.
//
// Exit codes: 0 success, 1 task or runtime failure, 2 configuration error.

#include "forest2mlp/experiment.hpp"
#include "forest2mlp/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <thread>

namespace f2m = forest2mlp;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> sizes;
  for (const auto& item : f2m::detail::split_list(text))
    sizes.push_back(static_cast<int>(f2m::detail::parse_int("sizes", item)));
  return sizes;
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

struct CommonFlags {
  std::string config;
  int workers = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config, "Experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--workers", flags.workers, "Worker threads (default: available cores)");
  cmd->add_option("--seed", flags.seed, "Override the experiment seed");
  cmd->add_option("--out", flags.out, "Output directory");
}

f2m::ExperimentConfig load_config(const CommonFlags& flags) {
  f2m::ExperimentConfig cfg = f2m::load_experiment_config(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  if (!flags.out.empty()) cfg.out = flags.out;
  cfg.workers = resolve_workers(flags.workers > 0 ? flags.workers : cfg.workers);
  cfg.validate();
  return cfg;
}

int cmd_distill(const CommonFlags& flags) {
  const f2m::ExperimentConfig cfg = load_config(flags);
  std::clog << "distill: " << cfg.configs.size() << " student configs, " << cfg.folds
            << " folds, " << cfg.workers << " workers\n";
  const auto outcome = f2m::run_experiment(cfg);
  if (!outcome.results.empty()) {
    const auto h = f2m::accuracy_histogram(outcome.results, cfg.histogram_bins);
    std::cout << "tasks\t" << h.differences.size() << "\n"
              << "median_difference\t" << f2m::format_fixed(h.median, 6) << "\n"
              << "mean_difference\t" << f2m::format_fixed(h.mean, 6) << "\n"
              << "fraction_student_not_worse\t" << f2m::format_fixed(h.fraction_not_worse, 6)
              << "\n";
  }
  std::cout << "results\t" << outcome.results_path << "\n";
  if (!outcome.failed_tasks.empty()) {
    std::cerr << outcome.failed_tasks.size() << " task(s) failed\n";
    return kExitFailure;
  }
  return 0;
}

int cmd_portfolio(const std::string& results, const std::string& sizes, const std::string& out) {
  const auto rep = f2m::run_portfolio(results, parse_sizes(sizes), out);
  std::cout << "size\tscore\toracle_gap\n";
  for (int s : rep.sizes)
    std::cout << s << '\t' << f2m::format_fixed(rep.trace.score_by_size[s - 1], 6) << '\t'
              << f2m::format_fixed(rep.trace.gap_by_size[s - 1], 6) << '\n';
  return 0;
}

int cmd_autoselect(const std::string& results, std::string manifest, const CommonFlags& flags,
                   const std::string& sizes_text, int folds) {
  std::uint64_t seed = flags.seed.value_or(0);
  if (!flags.config.empty()) {
    const auto cfg = f2m::load_experiment_config(flags.config);
    if (manifest.empty()) manifest = cfg.manifest;
    if (!flags.seed) seed = cfg.seed;
  }
  if (manifest.empty()) throw f2m::ConfigError("autoselect needs --manifest or --config");
  const f2m::fs::path out_dir(flags.out.empty() ? "." : flags.out);
  f2m::fs::create_directories(out_dir);

  const auto pm = f2m::performance_matrix(f2m::read_results(results));
  const auto specs = f2m::load_manifest(manifest);
  const f2m::Matrix meta =
      f2m::task_metafeatures(pm.task_names, specs, out_dir / "metafeatures.tsv");
  std::vector<int> sizes = parse_sizes(sizes_text);
  if (sizes.empty())
    for (int s : {1, 2, 5, 10, 20, 50, 100, 600})
      if (s <= pm.config_count()) sizes.push_back(s);
  if (pm.task_count() < 2 * folds)
    throw f2m::ConfigError("autoselect: " + std::to_string(pm.task_count()) +
                           " tasks are too few for " + std::to_string(folds) + " folds");

  const auto points = f2m::autoselect_curve(pm, meta, sizes, folds, seed);
  f2m::write_autoselect_reports(points, pm, out_dir);
  std::cout << "size\tsubset_score\tauto_score\tsingle_best_score\tselection_accuracy\t"
               "baseline_accuracy\n";
  bool dominated = true;
  for (const auto& p : points) {
    std::cout << p.size << '\t' << f2m::format_fixed(p.subset_score, 6) << '\t'
              << f2m::format_fixed(p.auto_score, 6) << '\t'
              << f2m::format_fixed(p.single_best_score, 6) << '\t'
              << f2m::format_fixed(p.selection_accuracy, 6) << '\t'
              << f2m::format_fixed(p.baseline_accuracy, 6) << '\n';
    dominated = dominated && p.auto_score <= p.subset_score + 1e-12;
  }
  if (!dominated) {
    std::cerr << "selector score exceeds the subset oracle score\n";
    return kExitFailure;
  }
  return 0;
}

int cmd_augment_eval(const CommonFlags& flags, const std::string& student,
                     const std::vector<std::string>& only_tasks) {
  f2m::ExperimentConfig cfg = load_config(flags);
  if (cfg.settings.augment.sampler == f2m::SamplerKind::none)
    cfg.settings.augment.sampler = f2m::SamplerKind::gmm;
  f2m::StudentConfig scfg;
  try {
    scfg = f2m::parse_config(student);
  } catch (const f2m::Error& e) {
    throw f2m::ConfigError(std::string("--student: ") + e.what());
  }
  auto settings = cfg.settings;
  settings.workers = cfg.workers;

  const f2m::fs::path out_dir(cfg.out);
  f2m::fs::create_directories(out_dir);
  f2m::TsvWriter w((out_dir / "augment_eval.tsv").string());
  w.row("task", "base_accuracy", "augmented_accuracy", "base_agreement", "augmented_agreement",
        "agreement_gain");
  std::cout << "task\tbase_accuracy\taugmented_accuracy\tbase_agreement\taugmented_agreement\n";
  int failures = 0;
  for (const auto& spec : f2m::load_manifest(cfg.manifest)) {
    if (!only_tasks.empty() &&
        std::find(only_tasks.begin(), only_tasks.end(), spec.name) == only_tasks.end())
      continue;
    try {
      const f2m::Dataset ds = f2m::load_task(spec);
      const auto tseed = f2m::task_seed(cfg.seed, spec.name);
      const auto plan = f2m::stratified_kfold(ds.labels, cfg.folds, f2m::fold_plan_seed(tseed));
      const auto cmp = f2m::compare_augmentation(ds, settings, scfg, plan, tseed);
      using F = f2m::AugmentFoldComparison;
      const double ba = cmp.mean(&F::base_accuracy), aa = cmp.mean(&F::augmented_accuracy);
      const double bg = cmp.mean(&F::base_agreement), ag = cmp.mean(&F::augmented_agreement);
      w.row(spec.name, ba, aa, bg, ag, ag - bg);
      std::cout << spec.name << '\t' << f2m::format_fixed(ba, 6) << '\t'
                << f2m::format_fixed(aa, 6) << '\t' << f2m::format_fixed(bg, 6) << '\t'
                << f2m::format_fixed(ag, 6) << '\n';
    } catch (const f2m::ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      std::cerr << "[" << spec.name << "] failed: " << e.what() << '\n';
      ++failures;
    }
  }
  return failures ? kExitFailure : 0;
}

int cmd_inspect(const std::string& path) {
  const auto bytes = f2m::read_bytes(path);
  switch (f2m::peek_payload_kind(bytes)) {
    case f2m::PayloadKind::forest: {
      const auto forest = f2m::deserialize_forest(bytes);
      int nodes = 0, leaves = 0, depth = 0;
      for (const auto& t : forest.trees) {
        nodes += t.node_count();
        for (int i = 0; i < t.node_count(); ++i) leaves += t.is_leaf(i);
        depth = std::max(depth, t.depth());
      }
      std::cout << "kind\tforest\n"
                << "trees\t" << forest.trees.size() << "\n"
                << "features\t" << forest.feature_count << "\n"
                << "classes\t" << forest.class_count << "\n"
                << "nodes\t" << nodes << "\n"
                << "leaves\t" << leaves << "\n"
                << "max_depth\t" << depth << "\n";
      break;
    }
    case f2m::PayloadKind::mlp: {
      const auto net = f2m::deserialize_mlp(bytes);
      std::cout << "kind\tmlp\n"
                << "activation\t" << f2m::to_string(net.activation) << "\n"
                << "layers\t";
      for (std::size_t l = 0; l < net.weights.size(); ++l)
        std::cout << (l ? "," : "") << net.weights[l].cols();
      std::cout << "," << net.weights.back().rows() << "\n";
      std::size_t params = 0;
      for (std::size_t l = 0; l < net.weights.size(); ++l)
        params += static_cast<std::size_t>(net.weights[l].size() + net.biases[l].size());
      std::cout << "parameters\t" << params << "\n";
      break;
    }
  }
  return 0;
}

int cmd_synth(const std::string& out, std::uint64_t seed) {
  const f2m::fs::path dir(out);
  f2m::fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.ini");
  for (const auto& ds : f2m::synthetic::desk_tasks(seed)) {
    f2m::synthetic::write_csv(ds, (dir / (ds.name + ".csv")).string());
    manifest << "[task " << ds.name << "]\npath = " << ds.name << ".csv\nlabel = label\n\n";
  }
  std::cout << (dir / "manifest.ini").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distill random-forest teachers into MLP students"};
  app.require_subcommand(1);

  CommonFlags distill_flags;
  auto* distill = app.add_subcommand("distill", "Run teacher/student cross-validation over a manifest");
  add_common(distill, distill_flags, true);

  std::string portfolio_results, portfolio_sizes, portfolio_out = ".";
  auto* portfolio = app.add_subcommand("portfolio", "Greedy backward elimination over a results file");
  portfolio->add_option("--results", portfolio_results, "results.jsonl")->required();
  portfolio->add_option("--sizes", portfolio_sizes, "Comma-separated subset sizes (default: all)");
  portfolio->add_option("--out", portfolio_out, "Output directory");

  CommonFlags auto_flags;
  std::string auto_results, auto_manifest, auto_sizes;
  int auto_folds = 10;
  auto* autoselect = app.add_subcommand("autoselect", "Cross-validated metafeature selector");
  add_common(autoselect, auto_flags, false);
  autoselect->add_option("--results", auto_results, "results.jsonl")->required();
  autoselect->add_option("--manifest", auto_manifest, "Task manifest (default: from --config)");
  autoselect->add_option("--sizes", auto_sizes, "Comma-separated candidate set sizes");
  autoselect->add_option("--folds", auto_folds, "Folds over tasks")->check(CLI::Range(2, 1000));

  CommonFlags aug_flags;
  std::string aug_student = "L1-N100-B0.5-relu-lr0.001";
  std::vector<std::string> aug_tasks;
  auto* augment = app.add_subcommand("augment-eval", "Paired augmented-vs-base student comparison");
  add_common(augment, aug_flags, true);
  augment->add_option("--student", aug_student, "Student config (grid id or name)");
  augment->add_option("--task", aug_tasks, "Restrict to these tasks");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Print a saved model summary");
  inspect->add_option("model", inspect_path, "Model file")->required();

  std::string synth_out = "synthetic";
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Write the synthetic desk tasks and a manifest");
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--seed", synth_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*distill) return cmd_distill(distill_flags);
    if (*portfolio) return cmd_portfolio(portfolio_results, portfolio_sizes, portfolio_out);
    if (*autoselect)
      return cmd_autoselect(auto_results, auto_manifest, auto_flags, auto_sizes, auto_folds);
    if (*augment) return cmd_augment_eval(aug_flags, aug_student, aug_tasks);
    if (*inspect) return cmd_inspect(inspect_path);
    if (*synth) return cmd_synth(synth_out, synth_seed);
  } catch (const f2m::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
