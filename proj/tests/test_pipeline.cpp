#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "volbench/error.hpp"
#include "volbench/pipeline.hpp"

using namespace volbench;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("volbench_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& work, const std::string& env = "") {
  const auto out = work / "stdout.txt", err = work / "stderr.txt";
  const std::string cmd =
      env + " '" + VOLBENCH_CLI + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

const char* kSmallBenchmark = R"({
  "seed": 3,
  "data": {"synthetic": {"n_series": 3, "length": 400, "seed": 5}},
  "models": ["garch", {"kind": "tcn", "hidden_size": 8}],
  "train": {"max_epochs": 2, "window_len": 32},
  "case_study": ["S02"]
})";

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- configuration

TEST(RunConfig, MinimalSynthetic) {
  auto cfg = parse_run_config(R"({"data": {"synthetic": {}}, "models": ["garch", "tcn"]})");
  ASSERT_TRUE(cfg.synthetic.has_value());
  EXPECT_EQ(cfg.synthetic->n_series, 10u);
  ASSERT_EQ(cfg.models.size(), 2u);
  EXPECT_FALSE(cfg.models[0].neural());
  EXPECT_TRUE(cfg.models[1].neural());
  EXPECT_EQ(cfg.models[1].name, "TCN");
  EXPECT_EQ(cfg.seed, 0u);
}

TEST(RunConfig, UnknownKeysAreErrors) {
  try {
    parse_run_config(R"({"data": {"synthetic": {}}, "models": ["garch"], "epochs": 3})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config(R"({"data": {"synthetic": {}}, "models": ["garch"], "train": {"lrate": 1}})"),
               ConfigError);
  EXPECT_THROW(parse_run_config(R"({"data": {"synthetic": {"len": 3}}, "models": ["garch"]})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"data": {"synthetic": {}}, "models": [{"kind": "tcn", "hiden": 3}]})"),
               ConfigError);
}

TEST(RunConfig, UnknownModelKindNamed) {
  try {
    parse_run_config(R"({"data": {"synthetic": {}}, "models": ["lstm-transformer"]})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lstm-transformer"), std::string::npos);
  }
}

TEST(RunConfig, Rejections) {
  auto bad = [](const std::string& text) { EXPECT_THROW(parse_run_config(text), ConfigError) << text; };
  bad("not json");
  bad(R"({"models": ["garch"]})");
  bad(R"({"data": {"synthetic": {}}, "models": []})");
  bad(R"({"data": {"synthetic": {}, "csv": "x.csv"}, "models": ["garch"]})");
  bad(R"({"data": {"synthetic": {}}, "models": ["garch", "garch"]})");
  bad(R"({"data": {"synthetic": {"alpha": 0.2, "beta": 0.8}}, "models": ["garch"]})");
  bad(R"({"data": {"synthetic": {}}, "models": ["garch"], "split_fraction": 1.0})");
  bad(R"({"data": {"csv": "x.csv"}, "models": ["garch"], "include_oracle": true})");
  bad(R"({"data": {"synthetic": {}}, "models": [{"kind": "tcn", "hidden_size": 0}]})");
  bad(R"({"data": {"synthetic": {}}, "models": [{"kind": "garch", "hidden_size": 3}]})");
  bad(R"({"data": {"synthetic": {}}, "models": ["tcn"], "cv_grid": [{"kind": "rhn"}]})");
}

TEST(RunConfig, RelativeCsvResolvesAgainstConfigDirectory) {
  auto cfg = parse_run_config(R"({"data": {"csv": "prices.csv"}, "models": ["arch"]})", "/data/run");
  EXPECT_EQ(*cfg.csv, fs::path("/data/run/prices.csv"));
}

TEST(RunConfig, SeedOverrideAndDigest) {
  const std::string text = R"({"seed": 4, "data": {"synthetic": {}}, "models": ["garch"]})";
  auto a = parse_run_config(text);
  auto b = parse_run_config(text, {}, 9);
  EXPECT_EQ(a.seed, 4u);
  EXPECT_EQ(b.seed, 9u);
  EXPECT_NE(a.digest(), b.digest());
  EXPECT_EQ(a.digest(), parse_run_config(text).digest());
  EXPECT_EQ(parse_run_config(a.canonical_json()).canonical_json(), a.canonical_json());
}

TEST(RunConfig, SeedFromEnvironment) {
  ::unsetenv("VOLBENCH_SEED");
  EXPECT_FALSE(seed_from_environment().has_value());
  ::setenv("VOLBENCH_SEED", "42", 1);
  EXPECT_EQ(seed_from_environment(), std::optional<std::uint64_t>(42));
  ::setenv("VOLBENCH_SEED", "forty", 1);
  EXPECT_THROW(seed_from_environment(), ConfigError);
  ::unsetenv("VOLBENCH_SEED");
}

// ---------------------------------------------------------------- synthetic data

TEST(Synthesize, ShapeAndDeterminism) {
  SyntheticSpec spec;
  spec.n_series = 10;
  spec.length = 2013;
  spec.seed = 7;
  auto a = synthesize_prices(spec);
  ASSERT_EQ(a.size(), 10u);
  for (const auto& p : a) {
    EXPECT_EQ(p.prices.size(), 2013u);
    EXPECT_EQ(p.dates.size(), 2013u);
    EXPECT_EQ(p.prices.front(), 1.0);
    for (double v : p.prices) EXPECT_GT(v, 0.0);
  }
  EXPECT_EQ(a.front().series_id, "S01");
  EXPECT_EQ(a.back().series_id, "S10");
  auto b = synthesize_prices(spec);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a[i].prices, b[i].prices);
  EXPECT_NE(a[0].prices, a[1].prices);
}

TEST(Synthesize, ReturnsAreScaledGarchDraws) {
  SyntheticSpec spec;
  spec.n_series = 1;
  spec.length = 50;
  spec.scale = 0.02;
  auto p = synthesize_prices(spec).front();
  for (std::size_t t = 1; t < p.prices.size(); ++t) {
    EXPECT_TRUE(std::isfinite(std::log(p.prices[t] / p.prices[t - 1]) / 0.02));
  }
  for (std::size_t t = 1; t < p.dates.size(); ++t) {
    EXPECT_GT(p.dates[t].days_since_epoch(), p.dates[t - 1].days_since_epoch());
  }
}

TEST(Synthesize, StageIsByteIdentical) {
  TempDir tmp;
  auto cfg = parse_run_config(R"({"data": {"synthetic": {"n_series": 10, "length": 2013, "seed": 7}}, "models": ["garch"]})");
  RunOptions opt;
  opt.out_root = tmp.path() / "a";
  const auto a = run_stage(Stage::synth, cfg, opt);
  opt.out_root = tmp.path() / "b";
  const auto b = run_stage(Stage::synth, cfg, opt);
  EXPECT_EQ(slurp(a / "prices.csv"), slurp(b / "prices.csv"));
  auto parsed = load_price_csv(a / "prices.csv");
  ASSERT_EQ(parsed.size(), 10u);
  for (const auto& p : parsed) EXPECT_EQ(p.prices.size(), 2013u);
  // same output root again: identical content is accepted
  EXPECT_NO_THROW(run_stage(Stage::synth, cfg, opt));
}

// ---------------------------------------------------------------- plumbing

TEST(WriteOutput, NeverOverwritesDifferentContent) {
  TempDir tmp;
  const auto p = tmp.path() / "sub" / "f.txt";
  write_output(p, "one\n");
  EXPECT_EQ(slurp(p), "one\n");
  EXPECT_NO_THROW(write_output(p, "one\n"));
  EXPECT_THROW(write_output(p, "two\n"), DataError);
  EXPECT_EQ(slurp(p), "one\n");
}

TEST(RunJobs, RunsEverythingAndRethrowsLowestFailure) {
  for (std::size_t workers : {1u, 3u}) {
    std::vector<int> hits(20, 0);
    try {
      run_jobs(20, workers, [&](std::size_t i) {
        hits[i] = 1;
        if (i == 7 || i == 13) throw std::runtime_error("job " + std::to_string(i));
      });
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "job 7");
    }
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(Stage, Parse) {
  EXPECT_EQ(parse_stage("benchmark"), Stage::benchmark);
  EXPECT_EQ(parse_stage("report"), Stage::report);
  EXPECT_FALSE(parse_stage("deploy").has_value());
}

// ---------------------------------------------------------------- benchmark

TEST(Benchmark, ShapeAndDeterminism) {
  TempDir tmp;
  auto cfg = parse_run_config(kSmallBenchmark);
  RunOptions opt;
  opt.out_root = tmp.path() / "a";
  const auto a = run_stage(Stage::benchmark, cfg, opt);
  opt.out_root = tmp.path() / "b";
  opt.jobs = 2;
  const auto b = run_stage(Stage::benchmark, cfg, opt);

  const auto report = slurp(a / "report.csv");
  EXPECT_EQ(report, slurp(b / "report.csv"));
  EXPECT_EQ(slurp(a / "report.txt"), slurp(b / "report.txt"));
  EXPECT_EQ(slurp(a / "models" / "TCN__S01.bin"), slurp(b / "models" / "TCN__S01.bin"));

  auto rows = lines(report);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "series,GARCH,TCN");
  EXPECT_EQ(rows[1].rfind("S01,", 0), 0u);
  EXPECT_EQ(rows[4].rfind("AVG,", 0), 0u);
  EXPECT_TRUE(fs::exists(a / "logs" / "TCN__S03.csv"));
  EXPECT_TRUE(fs::exists(a / "case_study" / "S02.csv"));
  EXPECT_TRUE(fs::exists(a / "metadata.json"));
  EXPECT_EQ(a.filename(), cfg.digest());
}

TEST(Benchmark, StagesComposeToSameReport) {
  TempDir tmp;
  auto cfg = parse_run_config(kSmallBenchmark);
  RunOptions opt;
  opt.out_root = tmp.path() / "staged";
  for (Stage s : {Stage::synth, Stage::prepare, Stage::train, Stage::evaluate, Stage::report}) run_stage(s, cfg, opt);
  opt.out_root = tmp.path() / "whole";
  const auto whole = run_stage(Stage::benchmark, cfg, opt);
  EXPECT_EQ(slurp(tmp.path() / "staged" / cfg.digest() / "report.csv"), slurp(whole / "report.csv"));
}

TEST(Benchmark, EvaluateBeforeTrainIsDataError) {
  TempDir tmp;
  auto cfg = parse_run_config(kSmallBenchmark);
  RunOptions opt;
  opt.out_root = tmp.path();
  EXPECT_THROW(run_stage(Stage::evaluate, cfg, opt), DataError);
}

TEST(Benchmark, OracleColumn) {
  TempDir tmp;
  auto cfg = parse_run_config(R"({
    "data": {"synthetic": {"n_series": 2, "length": 500, "seed": 2}},
    "models": ["arch"], "include_oracle": true})");
  RunOptions opt;
  opt.out_root = tmp.path();
  auto rows = lines(slurp(run_stage(Stage::benchmark, cfg, opt) / "report.csv"));
  EXPECT_EQ(rows[0], "series,ARCH,ORACLE");
}

// ---------------------------------------------------------------- command line

TEST(Cli, BenchmarkWritesRunDirectory) {
  TempDir tmp;
  spit(tmp.path() / "run.json", kSmallBenchmark);
  auto r = run_cli("benchmark --quiet --config run.json --out out", tmp.path(), "cd '" + tmp.path().string() + "' &&");
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path dir = tmp.path() / r.out.substr(0, r.out.find('\n'));
  EXPECT_EQ(lines(slurp(dir / "report.csv")).size(), 5u);
}

TEST(Cli, ExitCodes) {
  TempDir tmp;
  spit(tmp.path() / "unknown.json", R"({"data": {"synthetic": {}}, "models": ["transformer"]})");
  auto r = run_cli("benchmark --config '" + (tmp.path() / "unknown.json").string() + "'", tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("transformer"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  r = run_cli("benchmark --config '" + (tmp.path() / "missing.json").string() + "'", tmp.path());
  EXPECT_EQ(r.code, 1);
  r = run_cli("launch --config x.json", tmp.path());
  EXPECT_EQ(r.code, 1);

  spit(tmp.path() / "nocsv.json",
       R"({"data": {"csv": "absent.csv"}, "models": ["garch"], "output_dir": "runs"})");
  r = run_cli("prepare --config '" + (tmp.path() / "nocsv.json").string() + "'", tmp.path());
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST(Cli, NonStationarySynthWritesNothing) {
  TempDir tmp;
  spit(tmp.path() / "bad.json", R"({"data": {"synthetic": {"alpha": 0.3, "beta": 0.7}}, "models": ["garch"]})");
  auto r = run_cli("synth --config '" + (tmp.path() / "bad.json").string() + "' --out '" +
                       (tmp.path() / "out").string() + "'",
                   tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(tmp.path() / "out"));
}

TEST(Cli, EnvironmentSeedOverride) {
  TempDir tmp;
  spit(tmp.path() / "s.json", R"({"seed": 1, "data": {"synthetic": {"n_series": 2, "length": 100}}, "models": ["garch"]})");
  const std::string args =
      "synth --quiet --config '" + (tmp.path() / "s.json").string() + "' --out '" + (tmp.path() / "o").string() + "'";
  auto plain = run_cli(args, tmp.path());
  auto seeded = run_cli(args, tmp.path(), "VOLBENCH_SEED=77");
  ASSERT_EQ(plain.code, 0);
  ASSERT_EQ(seeded.code, 0);
  EXPECT_NE(plain.out, seeded.out);
  auto bad = run_cli(args, tmp.path(), "VOLBENCH_SEED=abc");
  EXPECT_EQ(bad.code, 1);
}
