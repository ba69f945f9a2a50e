#include "volbench/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "volbench/error.hpp"
#include "volbench/format.hpp"

namespace volbench {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError("cannot parse " + std::string(what) + " '" + text + "'");
  }
  return v;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

double gaussian_nll(double x, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("sigma must be positive, got " + format_double(sigma));
  return kHalfLog2Pi + std::log(sigma) + x * x / (2.0 * sigma * sigma);
}

double gaussian_nll_dsigma(double x, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("sigma must be positive, got " + format_double(sigma));
  return 1.0 / sigma - x * x / (sigma * sigma * sigma);
}

Var mean_gaussian_nll(const Var& sigma, std::span<const double> targets) {
  const auto s = sigma.values();
  if (s.size() != targets.size() || s.empty()) {
    throw std::invalid_argument("sigma " + shape_to_string(sigma.shape()) + " does not match " +
                                std::to_string(targets.size()) + " targets");
  }
  const double n = static_cast<double>(s.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) total += gaussian_nll(targets[i], s[i]);
  std::vector<double> x(targets.begin(), targets.end());
  const std::size_t is = sigma.node();
  Var inputs[] = {sigma};
  return sigma.tape().record({}, {total / n}, inputs, [is, x = std::move(x), n](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0] / n;
    auto sv = t.value_of(is);
    auto gs = t.grad_of(is);
    for (std::size_t i = 0; i < x.size(); ++i) gs[i] += g * gaussian_nll_dsigma(x[i], sv[i]);
  });
}

double SigmaForecast::mean_nll() const {
  if (sigmas.size() != targets.size() || sigmas.empty()) {
    throw std::invalid_argument("forecast " + model_id + "/" + series_id + " has mismatched or empty columns");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < sigmas.size(); ++i) total += gaussian_nll(targets[i], sigmas[i]);
  return total / static_cast<double>(sigmas.size());
}

SigmaForecast rolling_evaluate(const Forecaster& model, std::string model_id, const ReturnSeries& series) {
  if (series.test_len == 0) throw std::invalid_argument("series " + series.series_id + " has no test window");
  auto path = model.sigma_path(series.returns);
  if (path.size() != series.returns.size()) {
    throw std::logic_error("forecaster returned " + std::to_string(path.size()) + " values for " +
                           std::to_string(series.returns.size()) + " steps");
  }
  SigmaForecast f;
  f.model_id = std::move(model_id);
  f.series_id = series.series_id;
  f.sigmas.assign(path.begin() + static_cast<std::ptrdiff_t>(series.train_len), path.end());
  auto test = series.test();
  f.targets.assign(test.begin(), test.end());
  for (double s : f.sigmas) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw NumericFailure("model " + f.model_id + " produced sigma " + format_double(s) + " on " + f.series_id);
    }
  }
  return f;
}

std::optional<double> BenchmarkReport::cell(const std::string& series_id, const std::string& model_id) const {
  auto it = cells.find({series_id, model_id});
  if (it == cells.end()) return std::nullopt;
  return it->second;
}

BenchmarkReport aggregate_report(std::span<const SigmaForecast> forecasts, std::vector<std::string> model_order,
                                 std::vector<std::string> series_order) {
  BenchmarkReport r;
  r.models = std::move(model_order);
  r.series = std::move(series_order);
  auto note = [](std::vector<std::string>& order, const std::string& id) {
    if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
  };
  for (const auto& f : forecasts) {
    if (!r.cells.emplace(std::make_pair(f.series_id, f.model_id), f.mean_nll()).second) {
      throw std::invalid_argument("duplicate forecast for model " + f.model_id + " on series " + f.series_id);
    }
    note(r.models, f.model_id);
    note(r.series, f.series_id);
  }
  for (const auto& m : r.models) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& s : r.series) {
      if (auto v = r.cell(s, m)) {
        total += *v;
        ++n;
      }
    }
    r.avg[m] = n == 0 ? std::nullopt : std::optional<double>(total / static_cast<double>(n));
  }
  return r;
}

void write_report_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "series";
  for (const auto& m : report.models) out << ',' << m;
  out << '\n';
  for (const auto& s : report.series) {
    out << s;
    for (const auto& m : report.models) {
      out << ',';
      if (auto v = report.cell(s, m)) out << format_double(*v);
    }
    out << '\n';
  }
  out << "AVG";
  for (const auto& m : report.models) {
    out << ',';
    auto it = report.avg.find(m);
    if (it != report.avg.end() && it->second) out << format_double(*it->second);
  }
  out << '\n';
}

BenchmarkReport read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty report");
  auto header = split_csv(strip_cr(line));
  if (header.empty() || header[0] != "series") throw DataError("report header must start with 'series'");
  BenchmarkReport r;
  r.models.assign(header.begin() + 1, header.end());
  bool saw_avg = false;
  while (std::getline(in, line)) {
    auto cells = split_csv(strip_cr(line));
    if (cells.size() != header.size()) throw DataError("report row has " + std::to_string(cells.size()) + " cells");
    if (cells[0] == "AVG") {
      for (std::size_t j = 1; j < cells.size(); ++j) {
        r.avg[r.models[j - 1]] = cells[j].empty() ? std::nullopt : std::optional(parse_number(cells[j], "report cell"));
      }
      saw_avg = true;
      continue;
    }
    r.series.push_back(cells[0]);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      if (!cells[j].empty()) r.cells[{cells[0], r.models[j - 1]}] = parse_number(cells[j], "report cell");
    }
  }
  if (!saw_avg) throw DataError("report has no AVG row");
  return r;
}

void write_report_table(std::ostream& out, const BenchmarkReport& report) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({""});
  for (const auto& m : report.models) rows[0].push_back(m);
  auto fmt = [](std::optional<double> v) { return v ? format_fixed(*v, 3) : std::string("-"); };
  for (const auto& s : report.series) {
    std::vector<std::string> row{s};
    for (const auto& m : report.models) row.push_back(fmt(report.cell(s, m)));
    rows.push_back(std::move(row));
  }
  std::vector<std::string> avg{"AVG"};
  for (const auto& m : report.models) {
    auto it = report.avg.find(m);
    avg.push_back(fmt(it == report.avg.end() ? std::nullopt : it->second));
  }
  rows.push_back(std::move(avg));

  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j == 0) {
        line += row[j] + std::string(width[j] - row[j].size(), ' ');
      } else {
        line += "  " + std::string(width[j] - row[j].size(), ' ') + row[j];
      }
    }
    out << line << '\n';
  }
}

void emit_case_study(std::ostream& out, std::span<const SigmaForecast> forecasts) {
  if (forecasts.empty()) throw std::invalid_argument("case study needs at least one forecast");
  const auto& first = forecasts.front();
  for (const auto& f : forecasts) {
    if (f.series_id != first.series_id) {
      throw std::invalid_argument("case study mixes series " + first.series_id + " and " + f.series_id);
    }
    if (f.sigmas.size() != first.targets.size() || f.targets != first.targets) {
      throw std::invalid_argument("case study forecasts are not aligned to the same targets");
    }
  }
  out << "t,x_target";
  for (const auto& f : forecasts) out << ",sigma_" << f.model_id;
  out << '\n';
  for (std::size_t t = 0; t < first.targets.size(); ++t) {
    out << t << ',' << format_double(first.targets[t]);
    for (const auto& f : forecasts) out << ',' << format_double(f.sigmas[t]);
    out << '\n';
  }
}

std::vector<SigmaForecast> read_case_study(std::istream& in, const std::string& series_id) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty case-study file");
  auto header = split_csv(strip_cr(line));
  if (header.size() < 2 || header[0] != "t" || header[1] != "x_target") throw DataError("bad case-study header");
  std::vector<SigmaForecast> out;
  for (std::size_t j = 2; j < header.size(); ++j) {
    if (header[j].rfind("sigma_", 0) != 0) throw DataError("bad case-study column " + header[j]);
    out.push_back({header[j].substr(6), series_id, {}, {}});
  }
  std::vector<double> targets;
  while (std::getline(in, line)) {
    auto cells = split_csv(strip_cr(line));
    if (cells.size() != header.size()) throw DataError("case-study row has wrong width");
    targets.push_back(parse_number(cells[1], "target"));
    for (std::size_t j = 2; j < cells.size(); ++j) out[j - 2].sigmas.push_back(parse_number(cells[j], "sigma"));
  }
  for (auto& f : out) f.targets = targets;
  return out;
}

}  // namespace volbench
