#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "volbench/evaluation.hpp"

namespace volbench {

enum class ChKind { arch, garch, egarch };

std::string_view to_string(ChKind kind);
std::string_view display_name(ChKind kind);
std::optional<ChKind> parse_ch_kind(std::string_view name);

struct ChParams {
  ChKind kind = ChKind::garch;
  double omega = 0.0;
  std::vector<double> alpha;  // length q
  std::vector<double> beta;   // length p, empty for arch
  double gamma = 0.0;         // egarch asymmetry

  std::size_t q() const { return alpha.size(); }
  std::size_t p() const { return beta.size(); }

  static ChParams arch(double omega, double alpha);
  static ChParams garch(double omega, double alpha, double beta);
  static ChParams egarch(double omega, double alpha, double gamma, double beta);

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

/// One step of the conditional-variance recursion. Histories are most recent
/// first: sigma2_prev[0] = sigma^2_{t-1}, x_prev[0] = x_{t-1}.
double conditional_variance_step(const ChParams& params, std::span<const double> sigma2_prev,
                                 std::span<const double> x_prev);

/// sigma^2_t for t = 0..n, where sigma^2_0 = sigma2_init is the variance of the
/// first observation and sigma^2_n is the forecast after the whole history.
std::vector<double> variance_path(const ChParams& params, std::span<const double> x, double sigma2_init);

// sqrt of the last entry of variance_path.
double forecast_one_step(const ChParams& params, std::span<const double> history, double sigma2_init);

// Mean Gaussian NLL of x under the recursion.
double mean_nll(const ChParams& params, std::span<const double> x, double sigma2_init);

// Population variance, used as the pre-sample variance.
double sample_variance(std::span<const double> x);

struct FitOptions {
  std::size_t restarts = 3;
  std::size_t max_iterations = 2000;
  double gradient_tolerance = 1e-6;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

struct FitResult {
  ChParams params;
  double sigma2_init = 1.0;
  double nll_train = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  std::size_t restarts_used = 0;
  std::uint64_t seed = 0;
};

/// Gaussian maximum likelihood by Adam on an unconstrained parameterisation
/// with seeded random restarts. Throws FitFailure when no restart yields a
/// finite likelihood.
FitResult fit_mle(ChKind kind, std::span<const double> x_train, const FitOptions& options = {});

/// Mean NLL and its gradient in the unconstrained coordinates used by fit_mle.
struct ObjectiveValue {
  double nll = 0.0;
  std::vector<double> gradient;
};
ObjectiveValue unconstrained_objective(ChKind kind, std::span<const double> theta, std::span<const double> x,
                                       double sigma2_init);
ChParams from_unconstrained(ChKind kind, std::span<const double> theta);
std::vector<double> to_unconstrained(const ChParams& params);

// Garch path started at the unconditional variance; deterministic in `seed`.
std::vector<double> generate_garch_path(const ChParams& params, std::size_t length, std::uint64_t seed);

// `key=value` lines: kind, p, q, omega, alpha, beta, gamma, sigma2_init, seed, nll_train.
void write_fit_record(std::ostream& out, const FitResult& fit);
FitResult read_fit_record(std::istream& in);

class ClassicalForecaster : public Forecaster {
 public:
  ClassicalForecaster(ChParams params, double sigma2_init) : params_(std::move(params)), sigma2_init_(sigma2_init) {}
  std::vector<double> sigma_path(std::span<const double> x) const override;

 private:
  ChParams params_;
  double sigma2_init_;
};

}  // namespace volbench
