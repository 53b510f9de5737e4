#include "forest2mlp/experiment.hpp"
#include "forest2mlp/synthetic.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

using namespace forest2mlp;
using f2m_test::slurp;
using f2m_test::TempDir;

namespace {

int run_cli(const std::string& args, const std::string& stderr_path = "/dev/null",
            const std::string& stdout_path = "/dev/null") {
  const std::string cmd =
      std::string(F2M_CLI) + " " + args + " > " + stdout_path + " 2> " + stderr_path;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines_of(const std::string& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

// Two tiny tasks, a 4-config grid file and k = 3.
struct TinyExperiment {
  TempDir dir{"cli"};
  std::string config;

  explicit TinyExperiment(const std::string& extra = "") {
    synthetic::write_csv(synthetic::two_gaussians(30, 1), dir.file("a.csv"));
    synthetic::write_csv(synthetic::xor_task(30, 2), dir.file("b.csv"));
    dir.write("manifest.ini",
              "[task alpha]\npath = a.csv\n\n[task beta]\npath = b.csv\nlabel = label\n");
    dir.write("grid.txt", "0\nL1-N25-B0.2-relu-lr0.01\n# comment\n205\n301\n");
    config = dir.write("exp.ini",
                       "manifest = manifest.ini\nout = out\nfolds = 3\nseed = 5\n"
                       "grid = subset:grid.txt\nteacher.n_trees = 5\nstudent.max_epochs = 15\n" +
                           extra);
  }
};

}  // namespace

TEST(KeyValue, ParsesSectionsAndComments) {
  TempDir dir("kv");
  const auto path = dir.write("k.ini", "# top\na = 1\n\n[task x]\nb = two words \n");
  const auto sections = parse_key_values(path);
  ASSERT_EQ(sections.size(), 2u);
  EXPECT_EQ(std::get<1>(sections[0].entries[0]), "1");
  EXPECT_EQ(sections[1].name, "task x");
  EXPECT_EQ(std::get<1>(sections[1].entries[0]), "two words");
  EXPECT_THROW(parse_key_values(dir.write("bad.ini", "novalue\n")), ConfigError);
}

TEST(ExperimentConfig, LoadsKeysAndResolvesPaths) {
  TinyExperiment tiny("teacher.bootstrap = false\nstudent.label_mode = hard\n"
                      "augment.sampler = kde\nhistogram.bins = 7\n");
  const ExperimentConfig cfg = load_experiment_config(tiny.config);
  EXPECT_EQ(cfg.folds, 3);
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.configs.size(), 4u);
  EXPECT_EQ(config_id(cfg.configs[1]), config_id({1, 25, 0.2, Activation::relu, 1e-2}));
  EXPECT_FALSE(cfg.settings.teacher.bootstrap);
  EXPECT_EQ(cfg.settings.student.label_mode, LabelMode::hard);
  EXPECT_EQ(cfg.settings.augment.sampler, SamplerKind::kde);
  EXPECT_EQ(cfg.histogram_bins, 7);
  EXPECT_EQ(cfg.manifest, tiny.dir.file("manifest.ini"));
  EXPECT_NO_THROW(cfg.validate());
}

TEST(ExperimentConfig, Errors) {
  TempDir dir("cfg");
  EXPECT_THROW(load_experiment_config(dir.write("a.ini", "tree_count = 3\n")), ConfigError);
  EXPECT_THROW(load_experiment_config(dir.write("b.ini", "folds = three\n")), ConfigError);
  EXPECT_THROW(load_experiment_config(dir.write("c.ini", "grid = tiny\n")), ConfigError);
  auto cfg = load_experiment_config(dir.write("d.ini", "manifest = nowhere.ini\nfolds = 1\n"));
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.folds = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Manifest, ParsesTasks) {
  TempDir dir("manifest");
  const auto path = dir.write("m.ini",
                              "[task one]\npath = d/one.csv\nlabel = y\ncategorical = a, b\n"
                              "delimiter = tab\n[task two]\npath = /abs/two.csv\n");
  const auto tasks = load_manifest(path);
  ASSERT_EQ(tasks.size(), 2u);
  EXPECT_EQ(tasks[0].path, dir.file("d/one.csv"));
  EXPECT_EQ(tasks[0].schema.label_column, "y");
  EXPECT_EQ(tasks[0].schema.categorical, (std::set<std::string>{"a", "b"}));
  EXPECT_EQ(tasks[0].schema.delimiter, '\t');
  EXPECT_EQ(tasks[1].path, "/abs/two.csv");
  EXPECT_THROW(load_manifest(dir.write("x.ini", "[task a]\npath = a\n[task a]\npath = b\n")),
               ConfigError);
  EXPECT_THROW(load_manifest(dir.write("y.ini", "[task a]\nfile = a\n")), ConfigError);
}

TEST(ResultsStore, JsonRoundTrip) {
  ResultRecord r;
  r.task = "needs \"escaping\"";
  r.fold = 4;
  r.config_id = 37;
  r.teacher = false;
  r.accuracy = 0.1 + 0.2;
  r.diverged = true;
  const std::string line = to_json_line(r);
  const ResultRecord back = parse_result_line(line);
  EXPECT_EQ(back.task, r.task);
  EXPECT_EQ(back.fold, 4);
  EXPECT_EQ(back.config_id, 37);
  EXPECT_FALSE(back.teacher);
  EXPECT_EQ(back.accuracy, r.accuracy);
  EXPECT_TRUE(back.diverged);
  EXPECT_FALSE(back.wall_time);
  EXPECT_THROW(parse_result_line("{\"task\":1}"), Error);
  EXPECT_THROW(parse_result_line("not json"), Error);
}

TEST(ResultsStore, PlainDecimalNumbers) {
  EXPECT_EQ(format_plain(0.5), "0.5");
  EXPECT_EQ(format_plain(1e-7), "0.0000001");
  EXPECT_EQ(format_plain(1.0), "1");
  double back;
  ASSERT_TRUE(parse_double(format_plain(0.1 + 0.2), back));
  EXPECT_EQ(back, 0.1 + 0.2);
}

TEST(ResultsStore, PerformanceMatrixAveragesFolds) {
  std::vector<ResultRecord> recs;
  auto add = [&](const std::string& task, int fold, int id, double acc) {
    ResultRecord r;
    r.task = task, r.fold = fold, r.config_id = id, r.teacher = id < 0, r.accuracy = acc;
    recs.push_back(r);
  };
  add("b", 0, -1, 0.5);
  add("b", 0, 7, 0.25);
  add("b", 1, 7, 0.75);
  add("b", 0, 2, 1.0);
  add("b", 1, 2, 1.0);
  add("a", 0, 7, 0.5);
  add("a", 0, 2, 0.0);
  const PerformanceMatrix pm = performance_matrix(recs);
  EXPECT_EQ(pm.task_names, (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(pm.config_ids, (std::vector<int>{2, 7}));
  EXPECT_DOUBLE_EQ(pm.values(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(pm.values(1, 0), 0.0);
  recs.pop_back();
  EXPECT_THROW(performance_matrix(recs), Error);
}

TEST(Cli, DistillCountsRecordsAndIsDeterministic) {
  TinyExperiment tiny;
  const std::string out1 = tiny.dir.file("run1"), out2 = tiny.dir.file("run2");
  ASSERT_EQ(run_cli("distill --config " + tiny.config + " --workers 2 --out " + out1), 0);
  ASSERT_EQ(run_cli("distill --config " + tiny.config + " --workers 1 --out " + out2), 0);
  const auto lines = lines_of(out1 + "/results.jsonl");
  EXPECT_EQ(lines.size(), 2u * 3u * (1u + 4u));
  EXPECT_EQ(slurp(out1 + "/results.jsonl"), slurp(out2 + "/results.jsonl"));
  for (const char* f : {"histogram.tsv", "summary.tsv", "tasks.tsv"})
    EXPECT_TRUE(fs::exists(out1 + "/" + f)) << f;

  // Resuming a finished run changes nothing.
  ASSERT_EQ(run_cli("distill --config " + tiny.config + " --out " + out1), 0);
  EXPECT_EQ(slurp(out1 + "/results.jsonl"), slurp(out2 + "/results.jsonl"));

  // A partial results file is completed to the same bytes.
  {
    std::ofstream partial(tiny.dir.file("run3.jsonl"));
    for (std::size_t i = 0; i < 7; ++i) partial << lines[i] << '\n';
  }
  fs::create_directories(tiny.dir.file("run3"));
  fs::rename(tiny.dir.file("run3.jsonl"), tiny.dir.file("run3/results.jsonl"));
  ASSERT_EQ(run_cli("distill --config " + tiny.config + " --out " + tiny.dir.file("run3")), 0);
  EXPECT_EQ(slurp(tiny.dir.file("run3/results.jsonl")), slurp(out1 + "/results.jsonl"));
}

TEST(Cli, MissingDatasetIsConfigError) {
  TinyExperiment tiny;
  fs::remove(tiny.dir.file("b.csv"));
  const std::string err = tiny.dir.file("err.txt");
  EXPECT_EQ(run_cli("distill --config " + tiny.config, err), 2);
  EXPECT_NE(slurp(err).find(tiny.dir.file("b.csv")), std::string::npos);
}

TEST(Cli, UnknownKeyAndBadFlagsAreConfigErrors) {
  TinyExperiment tiny("teacher.trees = 3\n");
  EXPECT_EQ(run_cli("distill --config " + tiny.config), 2);
  EXPECT_EQ(run_cli("distill"), 2);
  EXPECT_EQ(run_cli("nonsense"), 2);
}

TEST(Cli, CorruptTaskFailsThatTaskOnly) {
  TinyExperiment tiny;
  tiny.dir.write("b.csv", "x0,label\n1,c0\n2,c0\n3,c0\n");  // single class
  const std::string out = tiny.dir.file("out");
  EXPECT_EQ(run_cli("distill --config " + tiny.config + " --out " + out), 1);
  EXPECT_EQ(lines_of(out + "/results.jsonl").size(), 3u * 5u);
}

TEST(Cli, PortfolioOnHandResults) {
  TempDir dir("portfolio");
  // Per-task accuracies (configs 10, 20, 30):
  //   t0: 0.9 0.8 0.7   t1: 0.6 0.9 0.5   t2: 0.4 0.5 0.8
  const double v[3][3] = {{0.9, 0.8, 0.7}, {0.6, 0.9, 0.5}, {0.4, 0.5, 0.8}};
  {
    std::ofstream out(dir.file("results.jsonl"));
    for (int t = 0; t < 3; ++t) {
      ResultRecord teacher;
      teacher.task = "t" + std::to_string(t);
      teacher.accuracy = 0.5;
      out << to_json_line(teacher) << '\n';
      for (int c = 0; c < 3; ++c) {
        ResultRecord r = teacher;
        r.teacher = false;
        r.config_id = 10 * (c + 1);
        r.accuracy = v[t][c];
        out << to_json_line(r) << '\n';
      }
    }
  }
  const std::string results = dir.file("results.jsonl");
  ASSERT_EQ(run_cli("portfolio --results " + results + " --out " + dir.file("p")), 0);
  const auto rows = lines_of(dir.file("p/portfolio_trace.tsv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "size\tscore\toracle_gap");
  EXPECT_EQ(rows[1], "3\t" + format_fixed(2.6 / 3, 6) + "\t0.000000");
  EXPECT_EQ(rows[2], "2\t" + format_fixed(2.5 / 3, 6) + "\t" + format_fixed(0.1 / 3, 6));
  EXPECT_EQ(rows[3], "1\t" + format_fixed(2.2 / 3, 6) + "\t" + format_fixed(0.4 / 3, 6));
  const auto order = lines_of(dir.file("p/elimination_order.tsv"));
  ASSERT_EQ(order.size(), 4u);
  EXPECT_EQ(order[1].substr(0, 5), "1\t10\t");
  EXPECT_EQ(order[3].substr(0, 5), "3\t20\t");

  ASSERT_EQ(run_cli("portfolio --results " + results + " --sizes 3 --out " + dir.file("q")), 0);
  const auto single = lines_of(dir.file("q/portfolio_trace.tsv"));
  ASSERT_EQ(single.size(), 2u);
  EXPECT_EQ(single[1], "3\t" + format_fixed(2.6 / 3, 6) + "\t0.000000");

  EXPECT_EQ(run_cli("portfolio --results " + results + " --sizes 4 --out " + dir.file("r")), 2);
  EXPECT_EQ(run_cli("portfolio --results " + dir.write("bad.jsonl", "{oops\n") + " --out " +
                    dir.file("s")),
            1);
}

TEST(Cli, AutoselectSizeOneIsSingleBestAndDominated) {
  TempDir dir("auto");
  std::string manifest;
  std::ofstream results(dir.file("results.jsonl"));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (int t = 0; t < 8; ++t) {
    const std::string name = "task" + std::to_string(t);
    synthetic::write_csv(t % 2 ? synthetic::rings(30 + 5 * t, t) : synthetic::hypercube_corners(30 + 5 * t, t),
                         dir.file(name + ".csv"));
    manifest += "[task " + name + "]\npath = " + name + ".csv\n";
    ResultRecord teacher;
    teacher.task = name;
    teacher.accuracy = 0.5;
    results << to_json_line(teacher) << '\n';
    for (int id : {2, 33, 58, 100}) {
      ResultRecord r = teacher;
      r.teacher = false;
      r.config_id = id;
      r.accuracy = u(rng);
      results << to_json_line(r) << '\n';
    }
  }
  results.close();
  dir.write("manifest.ini", manifest);
  const std::string args = "autoselect --results " + dir.file("results.jsonl") + " --manifest " +
                           dir.file("manifest.ini") + " --sizes 1,2,4 --folds 2 --out " +
                           dir.file("a");
  ASSERT_EQ(run_cli(args), 0);
  const auto curve = lines_of(dir.file("a/autoselect_curve.tsv"));
  ASSERT_EQ(curve.size(), 4u);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    std::vector<std::string> cells = detail::split_row(curve[i], '\t');
    EXPECT_EQ(cells.back(), "yes");
    if (cells[0] == "1") {
      EXPECT_EQ(cells[2], cells[3]);  // auto == single best
      EXPECT_EQ(cells[1], cells[3]);
    }
  }
  EXPECT_EQ(lines_of(dir.file("a/autoselect_choices.tsv")).size(), 1u + 3u * 8u);
  const auto meta = lines_of(dir.file("a/metafeatures.tsv"));
  EXPECT_EQ(meta.size(), 9u);

  // Cached metafeatures are reused and the run is reproducible.
  const std::string before = slurp(dir.file("a/autoselect_curve.tsv"));
  ASSERT_EQ(run_cli(args), 0);
  EXPECT_EQ(slurp(dir.file("a/autoselect_curve.tsv")), before);

  EXPECT_EQ(run_cli("autoselect --results " + dir.file("results.jsonl") + " --manifest " +
                    dir.file("manifest.ini") + " --folds 5 --out " + dir.file("b")),
            2);
}

TEST(Cli, SavedModelsCanBeInspected) {
  TinyExperiment tiny("save_models = true\n");
  const std::string out = tiny.dir.file("out");
  ASSERT_EQ(run_cli("distill --config " + tiny.config + " --out " + out), 0);
  const std::string teacher = out + "/models/alpha/fold0-teacher.f2m";
  const std::string student = out + "/models/alpha/fold0-config0.f2m";
  ASSERT_TRUE(fs::exists(teacher));
  ASSERT_TRUE(fs::exists(student));
  const std::string printed = tiny.dir.file("inspect.txt");
  ASSERT_EQ(run_cli("inspect " + teacher, "/dev/null", printed), 0);
  EXPECT_NE(slurp(printed).find("kind\tforest"), std::string::npos);
  EXPECT_NE(slurp(printed).find("trees\t5"), std::string::npos);
  ASSERT_EQ(run_cli("inspect " + student, "/dev/null", printed), 0);
  EXPECT_NE(slurp(printed).find("layers\t2,10,2"), std::string::npos);
  EXPECT_EQ(run_cli("inspect " + tiny.config), 1);
}

TEST(Cli, AugmentEval) {
  TinyExperiment tiny("augment.sampler = gmm\naugment.multiplier = 2\n");
  const std::string out = tiny.dir.file("aug");
  ASSERT_EQ(run_cli("augment-eval --config " + tiny.config + " --task beta --student 0 --out " + out), 0);
  const auto rows = lines_of(out + "/augment_eval.tsv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].substr(0, 5), "beta\t");
}
