#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "volbench/data.hpp"
#include "volbench/tensor.hpp"

namespace volbench {

// -ln N(x; 0, sigma^2). Throws std::domain_error when sigma <= 0.
double gaussian_nll(double x, double sigma);
// dL/dsigma; zero at sigma = |x|.
double gaussian_nll_dsigma(double x, double sigma);

// Mean Gaussian NLL of `targets` under `sigma` (same element count), recorded
// on sigma's tape.
Var mean_gaussian_nll(const Var& sigma, std::span<const double> targets);

/// Anything that maps a return history to one-step-ahead volatilities.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  // sigma[t] for every t, each a function of x[0..t-1] only.
  virtual std::vector<double> sigma_path(std::span<const double> x) const = 0;
};

class ConstantForecaster : public Forecaster {
 public:
  explicit ConstantForecaster(double sigma) : sigma_(sigma) {}
  std::vector<double> sigma_path(std::span<const double> x) const override {
    return std::vector<double>(x.size(), sigma_);
  }

 private:
  double sigma_;
};

struct SigmaForecast {
  std::string model_id;
  std::string series_id;
  std::vector<double> sigmas;
  std::vector<double> targets;

  double mean_nll() const;
};

/// Runs the forecaster over the full history and keeps the test window.
SigmaForecast rolling_evaluate(const Forecaster& model, std::string model_id, const ReturnSeries& series);

struct BenchmarkReport {
  std::vector<std::string> models;  // column order
  std::vector<std::string> series;  // row order
  std::map<std::pair<std::string, std::string>, double> cells;  // (series, model) -> mean NLL
  std::map<std::string, std::optional<double>> avg;              // model -> mean over present series

  std::optional<double> cell(const std::string& series_id, const std::string& model_id) const;
};

/// Per-series mean NLL per model plus the AVG row. Missing pairs stay empty.
/// Model and series order follow first appearance unless given explicitly.
BenchmarkReport aggregate_report(std::span<const SigmaForecast> forecasts,
                                 std::vector<std::string> model_order = {},
                                 std::vector<std::string> series_order = {});

// `series,<model...>` rows then `AVG`; empty cells for gaps.
void write_report_csv(std::ostream& out, const BenchmarkReport& report);
BenchmarkReport read_report_csv(std::istream& in);
// Aligned plain-text table, three decimals, "-" for gaps.
void write_report_table(std::ostream& out, const BenchmarkReport& report);

// `t,x_target,sigma_<model>...` over the test window.
void emit_case_study(std::ostream& out, std::span<const SigmaForecast> forecasts);
std::vector<SigmaForecast> read_case_study(std::istream& in, const std::string& series_id);

}  // namespace volbench
