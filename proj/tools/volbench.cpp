#include <CLI11.hpp>

#include <iostream>
#include <thread>
#include <utility>

#include "volbench/error.hpp"
#include "volbench/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Volatility forecasting benchmark"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string out_dir;
  bool quiet = false;

  const std::pair<const char*, const char*> subcommands[] = {
      {"synth", "write synthetic GARCH price series"},
      {"prepare", "filter, transform and split the price data"},
      {"train", "fit every (model, series) pair"},
      {"evaluate", "rolling one-step forecasts over the test windows"},
      {"benchmark", "prepare, train, evaluate and report in one pass"},
      {"report", "aggregate saved forecasts into the NLL table"},
  };
  for (const auto& [name, description] : subcommands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--jobs", jobs, "parallel (model, series) jobs")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "root directory for run outputs");
    sub->add_flag("--quiet", quiet, "suppress progress lines");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto stage = *volbench::parse_stage(app.get_subcommands().front()->get_name());
    const auto cfg = volbench::load_run_config(config_path, volbench::seed_from_environment());
    volbench::RunOptions options;
    options.jobs = jobs;
    options.out_root = !out_dir.empty() ? std::filesystem::path(out_dir) : cfg.output_dir.value_or("runs");
    if (!quiet) options.progress = [](const std::string& line) { std::cerr << line << '\n'; };
    const auto dir = volbench::run_stage(stage, cfg, options);
    std::cout << dir.string() << '\n';
    return 0;
  } catch (const volbench::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const volbench::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const volbench::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
}
