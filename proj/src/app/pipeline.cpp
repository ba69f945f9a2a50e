#include "volbench/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iterator>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "volbench/error.hpp"
#include "volbench/format.hpp"

namespace volbench {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config parsing

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

std::uint64_t get_u64(const json& v, std::string_view key) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError(std::string(key) + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_double(const json& v, std::string_view key) {
  if (!v.is_number()) throw ConfigError(std::string(key) + " must be a number");
  return v.get<double>();
}

std::string get_string(const json& v, std::string_view key) {
  if (!v.is_string()) throw ConfigError(std::string(key) + " must be a string");
  return v.get<std::string>();
}

bool valid_name(const std::string& name) {
  if (name.empty() || name == "." || name == "..") return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

SyntheticSpec parse_synthetic(const json& j) {
  check_keys(j, "data.synthetic", {"n_series", "length", "omega", "alpha", "beta", "seed", "scale", "start_date"});
  SyntheticSpec s;
  if (j.contains("n_series")) s.n_series = get_u64(j["n_series"], "n_series");
  if (j.contains("length")) s.length = get_u64(j["length"], "length");
  if (j.contains("omega")) s.omega = get_double(j["omega"], "omega");
  if (j.contains("alpha")) s.alpha = get_double(j["alpha"], "alpha");
  if (j.contains("beta")) s.beta = get_double(j["beta"], "beta");
  if (j.contains("seed")) s.seed = get_u64(j["seed"], "seed");
  if (j.contains("scale")) s.scale = get_double(j["scale"], "scale");
  if (j.contains("start_date")) {
    try {
      s.start_date = Date::parse(get_string(j["start_date"], "start_date"));
    } catch (const DataError& e) {
      throw ConfigError(std::string("start_date: ") + e.what());
    }
  }
  if (s.n_series < 1) throw ConfigError("synthetic n_series must be at least 1");
  if (s.length < 2) throw ConfigError("synthetic length must be at least 2");
  if (!(s.scale > 0.0) || !std::isfinite(s.scale)) throw ConfigError("synthetic scale must be positive");
  s.params().validate();
  return s;
}

ModelSpec parse_model(const json& j) {
  std::string kind;
  std::optional<std::string> name;
  json cell = json::object();
  if (j.is_string()) {
    kind = j.get<std::string>();
  } else if (j.is_object()) {
    if (!j.contains("kind")) throw ConfigError("model entry needs a 'kind'");
    kind = get_string(j["kind"], "kind");
    for (const auto& [key, value] : j.items()) {
      if (key == "name") name = get_string(value, "name");
      else cell[key] = value;
    }
  } else {
    throw ConfigError("model entries must be strings or objects");
  }

  ModelSpec spec;
  if (auto ch = parse_ch_kind(kind)) {
    if (cell.size() > 1) throw ConfigError("classical model '" + kind + "' takes no options besides 'name'");
    spec.kind = *ch;
    spec.name = name.value_or(std::string(display_name(*ch)));
  } else if (auto arch = parse_arch_kind(kind)) {
    cell["kind"] = kind;
    spec.kind = CellConfig::from_json(cell.dump());
    spec.name = name.value_or(std::string(display_name(*arch)));
  } else {
    throw ConfigError("unknown model kind '" + kind + "'");
  }
  if (!valid_name(spec.name) || spec.name == kOracleName) {
    throw ConfigError("invalid model name '" + spec.name + "' (letters, digits, '-', '_', '.')");
  }
  return spec;
}

TrainConfig parse_train(const json& j) {
  check_keys(j, "train",
             {"batch_size", "max_epochs", "clip_norm", "lr", "beta1", "beta2", "eps", "anneal_factor", "patience",
              "window_len", "window_stride", "stop_patience", "validation_fraction", "init"});
  TrainConfig t;
  if (j.contains("batch_size")) t.batch_size = get_u64(j["batch_size"], "batch_size");
  if (j.contains("max_epochs")) t.max_epochs = get_u64(j["max_epochs"], "max_epochs");
  if (j.contains("clip_norm")) t.clip_norm = get_double(j["clip_norm"], "clip_norm");
  if (j.contains("lr")) t.lr = get_double(j["lr"], "lr");
  if (j.contains("beta1")) t.beta1 = get_double(j["beta1"], "beta1");
  if (j.contains("beta2")) t.beta2 = get_double(j["beta2"], "beta2");
  if (j.contains("eps")) t.eps = get_double(j["eps"], "eps");
  if (j.contains("anneal_factor")) t.anneal_factor = get_double(j["anneal_factor"], "anneal_factor");
  if (j.contains("patience")) t.patience = get_u64(j["patience"], "patience");
  if (j.contains("window_len")) t.window_len = get_u64(j["window_len"], "window_len");
  if (j.contains("window_stride")) t.window_stride = get_u64(j["window_stride"], "window_stride");
  if (j.contains("stop_patience")) t.stop_patience = get_u64(j["stop_patience"], "stop_patience");
  if (j.contains("validation_fraction")) t.validation_fraction = get_double(j["validation_fraction"], "validation_fraction");
  if (j.contains("init")) {
    const auto init = get_string(j["init"], "init");
    if (init == "scaled_normal") t.init = InitScheme::scaled_normal;
    else if (init == "standard_normal") t.init = InitScheme::standard_normal;
    else throw ConfigError("init must be 'scaled_normal' or 'standard_normal'");
  }
  t.validate();
  return t;
}

FitOptions parse_fit(const json& j) {
  check_keys(j, "fit", {"restarts", "max_iterations", "gradient_tolerance", "lr"});
  FitOptions f;
  if (j.contains("restarts")) f.restarts = get_u64(j["restarts"], "restarts");
  if (j.contains("max_iterations")) f.max_iterations = get_u64(j["max_iterations"], "max_iterations");
  if (j.contains("gradient_tolerance")) f.gradient_tolerance = get_double(j["gradient_tolerance"], "gradient_tolerance");
  if (j.contains("lr")) f.lr = get_double(j["lr"], "lr");
  if (f.restarts < 1) throw ConfigError("fit.restarts must be at least 1");
  if (f.max_iterations < 1) throw ConfigError("fit.max_iterations must be at least 1");
  if (!(f.lr > 0.0)) throw ConfigError("fit.lr must be positive");
  return f;
}

json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},       {"max_epochs", t.max_epochs},
          {"clip_norm", t.clip_norm},         {"lr", t.lr},
          {"beta1", t.beta1},                 {"beta2", t.beta2},
          {"eps", t.eps},                     {"anneal_factor", t.anneal_factor},
          {"patience", t.patience},           {"window_len", t.window_len},
          {"window_stride", t.window_stride}, {"stop_patience", t.stop_patience},
          {"validation_fraction", t.validation_fraction},
          {"init", t.init == InitScheme::scaled_normal ? "scaled_normal" : "standard_normal"}};
}

}  // namespace

std::string RunConfig::canonical_json() const {
  json j;
  j["seed"] = seed;
  if (csv) j["data"]["csv"] = csv->generic_string();
  if (synthetic) {
    const auto& s = *synthetic;
    j["data"]["synthetic"] = {{"n_series", s.n_series}, {"length", s.length}, {"omega", s.omega},
                              {"alpha", s.alpha},       {"beta", s.beta},     {"seed", s.seed},
                              {"scale", s.scale},       {"start_date", s.start_date.to_string()}};
  }
  j["split_fraction"] = split_fraction;
  j["min_len"] = min_len;
  j["models"] = json::array();
  for (const auto& m : models) {
    json e{{"name", m.name}};
    if (m.neural()) e["config"] = json::parse(std::get<CellConfig>(m.kind).to_json());
    else e["kind"] = std::string(to_string(std::get<ChKind>(m.kind)));
    j["models"].push_back(e);
  }
  j["train"] = train_json(train);
  j["fit"] = {{"restarts", fit.restarts},
              {"max_iterations", fit.max_iterations},
              {"gradient_tolerance", fit.gradient_tolerance},
              {"lr", fit.lr}};
  j["cv_grid"] = json::array();
  for (const auto& g : cv_grid) {
    json e = json::parse(g.cell_json);
    if (g.lr) e["lr"] = *g.lr;
    j["cv_grid"].push_back(e);
  }
  j["case_study"] = case_study;
  j["include_oracle"] = include_oracle;
  return j.dump();
}

std::string RunConfig::digest() const { return to_hex(fnv1a64(canonical_json())); }

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir,
                           std::optional<std::uint64_t> seed_override) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "data", "split_fraction", "min_len", "models", "train", "fit", "cv_grid", "case_study",
              "include_oracle", "output_dir"});
  RunConfig cfg;
  if (j.contains("seed")) cfg.seed = get_u64(j["seed"], "seed");
  if (seed_override) cfg.seed = *seed_override;

  if (!j.contains("data")) throw ConfigError("config needs a 'data' section");
  check_keys(j["data"], "data", {"csv", "synthetic"});
  if (j["data"].contains("csv") == j["data"].contains("synthetic")) {
    throw ConfigError("data needs exactly one of 'csv' or 'synthetic'");
  }
  if (j["data"].contains("csv")) {
    std::filesystem::path p = get_string(j["data"]["csv"], "data.csv");
    cfg.csv = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  } else {
    cfg.synthetic = parse_synthetic(j["data"]["synthetic"]);
  }

  if (j.contains("split_fraction")) cfg.split_fraction = get_double(j["split_fraction"], "split_fraction");
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0, 1)");
  if (j.contains("min_len")) cfg.min_len = get_u64(j["min_len"], "min_len");
  if (cfg.min_len < 2) throw ConfigError("min_len must be at least 2");

  if (!j.contains("models") || !j["models"].is_array() || j["models"].empty()) {
    throw ConfigError("config needs a non-empty 'models' list");
  }
  std::set<std::string> names;
  for (const auto& m : j["models"]) {
    auto spec = parse_model(m);
    if (!names.insert(spec.name).second) throw ConfigError("duplicate model name '" + spec.name + "'");
    cfg.models.push_back(std::move(spec));
  }

  if (j.contains("train")) cfg.train = parse_train(j["train"]);
  if (j.contains("fit")) cfg.fit = parse_fit(j["fit"]);

  if (j.contains("cv_grid")) {
    if (!j["cv_grid"].is_array()) throw ConfigError("cv_grid must be a list");
    for (const auto& point : j["cv_grid"]) {
      if (!point.is_object()) throw ConfigError("cv_grid entries must be objects");
      GridOverride g;
      json cell = json::object();
      for (const auto& [key, value] : point.items()) {
        if (key == "lr") g.lr = get_double(value, "cv_grid.lr");
        else if (key == "kind" || key == "name") throw ConfigError("cv_grid entries cannot set '" + key + "'");
        else cell[key] = value;
      }
      g.cell_json = cell.dump();
      // Validate the override against every neural model up front.
      for (const auto& m : cfg.models) {
        if (!m.neural()) continue;
        auto merged = json::parse(std::get<CellConfig>(m.kind).to_json());
        merged.update(cell);
        CellConfig::from_json(merged.dump());
      }
      cfg.cv_grid.push_back(std::move(g));
    }
  }

  if (j.contains("case_study")) {
    if (!j["case_study"].is_array()) throw ConfigError("case_study must be a list of series ids");
    for (const auto& id : j["case_study"]) cfg.case_study.push_back(get_string(id, "case_study entry"));
  }
  if (j.contains("include_oracle")) {
    if (!j["include_oracle"].is_boolean()) throw ConfigError("include_oracle must be true or false");
    cfg.include_oracle = j["include_oracle"].get<bool>();
    if (cfg.include_oracle && !cfg.synthetic) throw ConfigError("include_oracle needs synthetic data");
  }
  if (j.contains("output_dir")) {
    std::filesystem::path p = get_string(j["output_dir"], "output_dir");
    cfg.output_dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, path.parent_path(), seed_override);
}

std::optional<std::uint64_t> seed_from_environment() {
  const char* raw = std::getenv("VOLBENCH_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  std::string_view text(raw);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("VOLBENCH_SEED must be a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

// ---------------------------------------------------------------- data

std::string synthetic_series_id(std::size_t index, std::size_t count) {
  const std::size_t width = std::max<std::size_t>(2, std::to_string(count).size());
  std::string n = std::to_string(index + 1);
  return "S" + std::string(width - n.size(), '0') + n;
}

std::vector<PriceSeries> synthesize_prices(const SyntheticSpec& spec) {
  const ChParams params = spec.params();
  std::vector<PriceSeries> out;
  std::vector<Date> dates;
  long day = spec.start_date.days_since_epoch();
  while (dates.size() < spec.length) {
    const long weekday = ((day % 7) + 11) % 7;  // 0 = Monday; 1970-01-01 was a Thursday
    if (weekday < 5) dates.push_back(Date::from_days(day));
    ++day;
  }
  for (std::size_t i = 0; i < spec.n_series; ++i) {
    PriceSeries p;
    p.series_id = synthetic_series_id(i, spec.n_series);
    p.dates = dates;
    auto draws = generate_garch_path(params, spec.length - 1, derive_seed(spec.seed, "synthetic", p.series_id));
    p.prices.reserve(spec.length);
    double log_price = 0.0;
    p.prices.push_back(1.0);
    for (double g : draws) {
      log_price += spec.scale * g;
      p.prices.push_back(std::exp(log_price));
    }
    out.push_back(std::move(p));
  }
  return out;
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  d.raw = cfg.synthetic ? synthesize_prices(*cfg.synthetic) : load_price_csv(*cfg.csv);
  auto filtered = filter_series(d.raw, cfg.min_len);
  d.manifest = filtered.manifest;
  d.manifest.split_fraction = cfg.split_fraction;
  d.manifest.kept.clear();
  for (const auto& p : filtered.kept) {
    try {
      d.series.push_back(normalize_and_split(p.series_id, log_returns(p), cfg.split_fraction));
      d.manifest.kept.push_back(p.series_id);
    } catch (const DataError& e) {
      d.manifest.dropped.push_back({p.series_id, "degenerate series"});
    }
  }
  if (d.series.empty()) throw DataError("no usable series after filtering");
  return d;
}

OracleForecaster::OracleForecaster(const SyntheticSpec& spec, const ReturnSeries& series)
    : params_(spec.params()), scale_(spec.scale), mean_(series.mean), std_(series.std) {}

std::vector<double> OracleForecaster::sigma_path(std::span<const double> x) const {
  std::vector<double> draws(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) draws[t] = (x[t] * std_ + mean_) / scale_;
  const double unconditional = params_.omega / (1.0 - params_.alpha[0] - params_.beta[0]);
  auto s2 = variance_path(params_, draws, unconditional);
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) out[t] = std::sqrt(s2[t]) * scale_ / std_;
  return out;
}

// ---------------------------------------------------------------- execution helpers

void run_jobs(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_output(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::string existing((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (existing == content) return;
    throw DataError("refusing to overwrite " + path.string() + ": existing file differs");
  }
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::optional<Stage> parse_stage(std::string_view name) {
  if (name == "synth") return Stage::synth;
  if (name == "prepare") return Stage::prepare;
  if (name == "train") return Stage::train;
  if (name == "evaluate") return Stage::evaluate;
  if (name == "report") return Stage::report;
  if (name == "benchmark") return Stage::benchmark;
  return std::nullopt;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing " + path.string() + " (run the earlier stage first)");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

template <typename Fn>
std::string render(Fn&& fn) {
  std::ostringstream out;
  fn(out);
  return out.str();
}

struct Job {
  const ModelSpec* model;
  const ReturnSeries* series;
  std::string stem() const { return model->name + "__" + series->series_id; }
};

struct TrainedJob {
  std::string model_file;
  std::string log_csv;
  std::string cv_csv;
  std::optional<SequenceModel> neural;
  std::optional<FitResult> classical;
};

std::uint64_t job_seed(const RunConfig& cfg, const Job& job) {
  return derive_seed(cfg.seed, job.model->name, job.series->series_id);
}

TrainedJob train_job(const RunConfig& cfg, const Job& job) {
  TrainedJob out;
  const std::uint64_t seed = job_seed(cfg, job);
  if (!job.model->neural()) {
    FitOptions fit = cfg.fit;
    fit.seed = seed;
    out.classical = fit_mle(std::get<ChKind>(job.model->kind), job.series->train(), fit);
    out.model_file = render([&](std::ostream& o) { write_fit_record(o, *out.classical); });
    return out;
  }
  CellConfig cell = std::get<CellConfig>(job.model->kind);
  TrainConfig train = cfg.train;
  train.seed = seed;
  if (!cfg.cv_grid.empty()) {
    std::vector<GridPoint> grid;
    for (const auto& g : cfg.cv_grid) {
      auto merged = json::parse(cell.to_json());
      merged.update(json::parse(g.cell_json));
      grid.push_back({CellConfig::from_json(merged.dump()), g.lr.value_or(cfg.train.lr)});
    }
    auto cv = cross_validate(grid, *job.series, train);
    out.cv_csv = render([&](std::ostream& o) {
      o << "point";
      for (std::size_t k = 0; k < kFolds; ++k) o << ",fold_" << k + 1;
      o << ",mean,selected\n";
      for (std::size_t g = 0; g < grid.size(); ++g) {
        o << g;
        for (double s : cv.fold_scores[g]) o << ',' << format_double(s);
        o << ',' << format_double(cv.mean_scores[g]) << ',' << (g == cv.best_index ? 1 : 0) << '\n';
      }
    });
    cell = grid[cv.best_index].cell;
    train.lr = grid[cv.best_index].lr;
  }
  auto result = train_model(cell, *job.series, train);
  out.log_csv = render([&](std::ostream& o) { write_training_log(o, result.summary.log); });
  out.model_file = render([&](std::ostream& o) { save_model(o, result.model); });
  out.neural = std::move(result.model);
  return out;
}

std::string model_filename(const Job& job) { return job.stem() + (job.model->neural() ? ".bin" : ".txt"); }

void write_trained(const std::filesystem::path& dir, const Job& job, const TrainedJob& t) {
  write_output(dir / "models" / model_filename(job), t.model_file);
  if (!t.log_csv.empty()) write_output(dir / "logs" / (job.stem() + ".csv"), t.log_csv);
  if (!t.cv_csv.empty()) write_output(dir / "cv" / (job.stem() + ".csv"), t.cv_csv);
}

SigmaForecast evaluate_trained(const Job& job, const TrainedJob& t) {
  if (t.neural) return rolling_evaluate(NeuralForecaster(*t.neural), job.model->name, *job.series);
  return rolling_evaluate(ClassicalForecaster(t.classical->params, t.classical->sigma2_init), job.model->name,
                          *job.series);
}

TrainedJob load_trained(const std::filesystem::path& dir, const Job& job) {
  TrainedJob t;
  std::istringstream in(read_file(dir / "models" / model_filename(job)));
  if (job.model->neural()) t.neural = load_model(in);
  else t.classical = read_fit_record(in);
  return t;
}

std::string forecast_csv(const SigmaForecast& f) {
  return render([&](std::ostream& o) { emit_case_study(o, std::span(&f, 1)); });
}

std::vector<std::string> column_order(const RunConfig& cfg) {
  std::vector<std::string> cols;
  for (const auto& m : cfg.models) cols.push_back(m.name);
  if (cfg.include_oracle) cols.emplace_back(kOracleName);
  return cols;
}

void write_prepared(const std::filesystem::path& dir, const PreparedData& data) {
  write_output(dir / "manifest.csv", render([&](std::ostream& o) { write_manifest_csv(o, data.manifest, data.series); }));
  for (const auto& s : data.series) {
    write_output(dir / "datasets" / (s.series_id + ".csv"), render([&](std::ostream& o) { write_dataset_csv(o, s); }));
  }
}

void write_report(const std::filesystem::path& dir, const RunConfig& cfg, const PreparedData& data,
                  std::vector<SigmaForecast> forecasts) {
  std::vector<std::string> rows;
  for (const auto& s : data.series) rows.push_back(s.series_id);
  const auto report = aggregate_report(forecasts, column_order(cfg), rows);
  write_output(dir / "report.csv", render([&](std::ostream& o) { write_report_csv(o, report); }));
  write_output(dir / "report.txt", render([&](std::ostream& o) { write_report_table(o, report); }));

  for (const auto& id : cfg.case_study) {
    std::vector<SigmaForecast> selected;
    for (const auto& col : report.models) {
      for (const auto& f : forecasts)
        if (f.series_id == id && f.model_id == col) selected.push_back(f);
    }
    if (selected.empty()) throw DataError("case-study series '" + id + "' has no forecasts");
    write_output(dir / "case_study" / (id + ".csv"), render([&](std::ostream& o) { emit_case_study(o, selected); }));
  }

  json meta;
  meta["config_digest"] = cfg.digest();
  meta["seed"] = cfg.seed;
  meta["manifest_hash"] =
      to_hex(fnv1a64(render([&](std::ostream& o) { write_manifest_csv(o, data.manifest, data.series); })));
  meta["models"] = report.models;
  meta["series"] = report.series;
  json seeds = json::object();
  for (const auto& m : cfg.models)
    for (const auto& s : data.series) seeds[m.name + "__" + s.series_id] = job_seed(cfg, {&m, &s});
  meta["job_seeds"] = seeds;
  write_output(dir / "metadata.json", meta.dump(2) + "\n");
}

std::vector<SigmaForecast> oracle_forecasts(const RunConfig& cfg, const PreparedData& data) {
  std::vector<SigmaForecast> out;
  if (!cfg.include_oracle) return out;
  for (const auto& s : data.series) {
    out.push_back(rolling_evaluate(OracleForecaster(*cfg.synthetic, s), std::string(kOracleName), s));
  }
  return out;
}

}  // namespace

std::filesystem::path run_stage(Stage stage, const RunConfig& cfg, const RunOptions& options) {
  const std::filesystem::path dir = options.out_root / cfg.digest();
  auto progress = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  if (stage == Stage::synth) {
    if (!cfg.synthetic) throw ConfigError("synth needs a synthetic data source");
    auto prices = synthesize_prices(*cfg.synthetic);
    write_output(dir / "prices.csv", render([&](std::ostream& o) { write_price_csv(o, prices); }));
    return dir;
  }

  const PreparedData data = prepare_data(cfg);
  if (cfg.synthetic) write_output(dir / "prices.csv", render([&](std::ostream& o) { write_price_csv(o, data.raw); }));
  write_prepared(dir, data);
  if (stage == Stage::prepare) return dir;

  for (const auto& id : cfg.case_study) {
    if (std::none_of(data.series.begin(), data.series.end(), [&](const auto& s) { return s.series_id == id; })) {
      throw ConfigError("case_study names unknown series '" + id + "'");
    }
  }

  std::vector<Job> jobs;
  for (const auto& s : data.series)
    for (const auto& m : cfg.models) jobs.push_back({&m, &s});

  std::mutex progress_mutex;
  std::atomic<std::size_t> done{0};
  auto report_progress = [&](const char* verb, const Job& job) {
    std::lock_guard lock(progress_mutex);
    progress(std::string(verb) + " " + job.model->name + " on " + job.series->series_id + " (" +
             std::to_string(++done) + "/" + std::to_string(jobs.size()) + ")");
  };

  if (stage == Stage::train) {
    run_jobs(jobs.size(), options.jobs, [&](std::size_t i) {
      write_trained(dir, jobs[i], train_job(cfg, jobs[i]));
      report_progress("trained", jobs[i]);
    });
    return dir;
  }

  if (stage == Stage::evaluate) {
    run_jobs(jobs.size(), options.jobs, [&](std::size_t i) {
      auto f = evaluate_trained(jobs[i], load_trained(dir, jobs[i]));
      write_output(dir / "forecasts" / (jobs[i].stem() + ".csv"), forecast_csv(f));
      report_progress("evaluated", jobs[i]);
    });
    for (const auto& f : oracle_forecasts(cfg, data)) {
      write_output(dir / "forecasts" / (f.model_id + "__" + f.series_id + ".csv"), forecast_csv(f));
    }
    return dir;
  }

  if (stage == Stage::report) {
    std::vector<SigmaForecast> forecasts;
    for (const auto& s : data.series) {
      for (const auto& col : column_order(cfg)) {
        const auto path = dir / "forecasts" / (col + "__" + s.series_id + ".csv");
        if (!std::filesystem::exists(path)) continue;  // reported as a gap
        std::istringstream in(read_file(path));
        auto parsed = read_case_study(in, s.series_id);
        if (parsed.size() != 1 || parsed[0].model_id != col) throw DataError("malformed forecast file " + path.string());
        forecasts.push_back(std::move(parsed[0]));
      }
    }
    write_report(dir, cfg, data, std::move(forecasts));
    return dir;
  }

  // benchmark: every stage in one pass
  std::vector<SigmaForecast> forecasts(jobs.size());
  run_jobs(jobs.size(), options.jobs, [&](std::size_t i) {
    auto trained = train_job(cfg, jobs[i]);
    write_trained(dir, jobs[i], trained);
    forecasts[i] = evaluate_trained(jobs[i], trained);
    write_output(dir / "forecasts" / (jobs[i].stem() + ".csv"), forecast_csv(forecasts[i]));
    report_progress("finished", jobs[i]);
  });
  for (auto& f : oracle_forecasts(cfg, data)) {
    write_output(dir / "forecasts" / (f.model_id + "__" + f.series_id + ".csv"), forecast_csv(f));
    forecasts.push_back(std::move(f));
  }
  write_report(dir, cfg, data, std::move(forecasts));
  return dir;
}

}  // namespace volbench
