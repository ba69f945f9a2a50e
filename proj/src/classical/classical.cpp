#include "volbench/classical.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "volbench/error.hpp"
#include "volbench/format.hpp"
#include "volbench/training.hpp"

namespace volbench {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
const double kMeanAbsNormal = std::sqrt(2.0 / std::numbers::pi);
constexpr double kInf = std::numeric_limits<double>::infinity();
// EGARCH log-variance is clamped so exp() neither underflows to 0 nor overflows.
constexpr double kMaxLogVariance = 700.0;

double logistic(double u) { return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

std::size_t dimension(ChKind kind) {
  switch (kind) {
    case ChKind::arch: return 2;
    case ChKind::garch: return 3;
    case ChKind::egarch: return 4;
  }
  return 0;
}

void require_unit_orders(const ChParams& p) {
  const std::size_t want_p = p.kind == ChKind::arch ? 0 : 1;
  if (p.q() != 1 || p.p() != want_p) throw ConfigError("fitting supports ARCH(1), GARCH(1,1) and EGARCH(1,1) only");
}

}  // namespace

std::string_view to_string(ChKind kind) {
  switch (kind) {
    case ChKind::arch: return "arch";
    case ChKind::garch: return "garch";
    case ChKind::egarch: return "egarch";
  }
  return "?";
}

std::string_view display_name(ChKind kind) {
  switch (kind) {
    case ChKind::arch: return "ARCH";
    case ChKind::garch: return "GARCH";
    case ChKind::egarch: return "EGARCH";
  }
  return "?";
}

std::optional<ChKind> parse_ch_kind(std::string_view name) {
  if (name == "arch") return ChKind::arch;
  if (name == "garch") return ChKind::garch;
  if (name == "egarch") return ChKind::egarch;
  return std::nullopt;
}

ChParams ChParams::arch(double omega, double alpha) { return {ChKind::arch, omega, {alpha}, {}, 0.0}; }
ChParams ChParams::garch(double omega, double alpha, double beta) {
  return {ChKind::garch, omega, {alpha}, {beta}, 0.0};
}
ChParams ChParams::egarch(double omega, double alpha, double gamma, double beta) {
  return {ChKind::egarch, omega, {alpha}, {beta}, gamma};
}

void ChParams::validate() const {
  const std::string name(to_string(kind));
  if (alpha.empty()) throw ConfigError(name + ": at least one alpha is required");
  auto all_finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
  };
  if (!std::isfinite(omega) || !all_finite(alpha) || !all_finite(beta) || !std::isfinite(gamma)) {
    throw ConfigError(name + ": parameters must be finite");
  }
  if (kind == ChKind::egarch) {
    if (!beta.empty() && !(std::abs(beta[0]) < 1.0)) throw ConfigError(name + ": |beta_1| must be below 1");
    return;
  }
  if (kind == ChKind::arch && !beta.empty()) throw ConfigError("arch: beta must be empty");
  if (!(omega > 0.0)) throw ConfigError(name + ": omega must be positive");
  double persistence = 0.0;
  for (double a : alpha) {
    if (a < 0.0) throw ConfigError(name + ": alpha must be non-negative");
    persistence += a;
  }
  for (double b : beta) {
    if (b < 0.0) throw ConfigError(name + ": beta must be non-negative");
    persistence += b;
  }
  if (!(persistence < 1.0)) {
    throw ConfigError(name + ": alpha + beta = " + format_double(persistence) + " is not below 1 (non-stationary)");
  }
}

double conditional_variance_step(const ChParams& params, std::span<const double> sigma2_prev,
                                 std::span<const double> x_prev) {
  params.validate();
  if (x_prev.size() < params.q() || sigma2_prev.size() < std::max<std::size_t>(params.p(), 1)) {
    throw std::invalid_argument("history shorter than the model orders");
  }
  if (params.kind == ChKind::egarch) {
    double log_s2 = params.omega;
    for (std::size_t j = 0; j < params.p(); ++j) log_s2 += params.beta[j] * std::log(sigma2_prev[j]);
    for (std::size_t i = 0; i < params.q(); ++i) {
      const double z = x_prev[i] / std::sqrt(sigma2_prev[i]);
      log_s2 += params.alpha[i] * (std::abs(z) - kMeanAbsNormal);
      if (i == 0) log_s2 += params.gamma * z;
    }
    return std::exp(std::clamp(log_s2, -kMaxLogVariance, kMaxLogVariance));
  }
  double s2 = params.omega;
  for (std::size_t i = 0; i < params.q(); ++i) s2 += params.alpha[i] * x_prev[i] * x_prev[i];
  for (std::size_t j = 0; j < params.p(); ++j) s2 += params.beta[j] * sigma2_prev[j];
  return s2;
}

std::vector<double> variance_path(const ChParams& params, std::span<const double> x, double sigma2_init) {
  params.validate();
  if (!(sigma2_init > 0.0)) throw std::invalid_argument("pre-sample variance must be positive");
  const std::size_t depth = std::max<std::size_t>({params.p(), params.q(), 1});
  std::vector<double> s2(x.size() + 1);
  s2[0] = sigma2_init;
  std::vector<double> sp(depth), xp(depth);
  for (std::size_t t = 1; t <= x.size(); ++t) {
    for (std::size_t k = 0; k < depth; ++k) {
      sp[k] = t >= k + 1 ? s2[t - 1 - k] : sigma2_init;
      xp[k] = t >= k + 1 ? x[t - 1 - k] : 0.0;
    }
    s2[t] = conditional_variance_step(params, sp, xp);
  }
  return s2;
}

double forecast_one_step(const ChParams& params, std::span<const double> history, double sigma2_init) {
  return std::sqrt(variance_path(params, history, sigma2_init).back());
}

double mean_nll(const ChParams& params, std::span<const double> x, double sigma2_init) {
  if (x.empty()) throw std::invalid_argument("empty series");
  auto s2 = variance_path(params, x, sigma2_init);
  double total = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) total += kHalfLog2Pi + 0.5 * std::log(s2[t]) + x[t] * x[t] / (2.0 * s2[t]);
  return total / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size());
}

ChParams from_unconstrained(ChKind kind, std::span<const double> theta) {
  if (theta.size() != dimension(kind)) throw std::invalid_argument("wrong number of unconstrained parameters");
  switch (kind) {
    case ChKind::arch: return ChParams::arch(std::exp(theta[0]), logistic(theta[1]));
    case ChKind::garch: {
      const double top = std::max({theta[1], theta[2], 0.0});
      const double e1 = std::exp(theta[1] - top), e2 = std::exp(theta[2] - top), e0 = std::exp(-top);
      const double z = e1 + e2 + e0;
      return ChParams::garch(std::exp(theta[0]), e1 / z, e2 / z);
    }
    case ChKind::egarch: return ChParams::egarch(theta[0], theta[1], theta[2], std::tanh(theta[3]));
  }
  throw std::invalid_argument("unknown model kind");
}

std::vector<double> to_unconstrained(const ChParams& p) {
  require_unit_orders(p);
  constexpr double tiny = 1e-12;
  switch (p.kind) {
    case ChKind::arch: {
      const double a = std::clamp(p.alpha[0], tiny, 1.0 - tiny);
      return {std::log(p.omega), std::log(a / (1.0 - a))};
    }
    case ChKind::garch: {
      const double a = std::max(p.alpha[0], tiny), b = std::max(p.beta[0], tiny);
      const double rest = std::max(1.0 - a - b, tiny);
      return {std::log(p.omega), std::log(a / rest), std::log(b / rest)};
    }
    case ChKind::egarch: return {p.omega, p.alpha[0], p.gamma, std::atanh(p.beta[0])};
  }
  return {};
}

ObjectiveValue unconstrained_objective(ChKind kind, std::span<const double> theta, std::span<const double> x,
                                       double sigma2_init) {
  const ChParams p = from_unconstrained(kind, theta);
  const double n = static_cast<double>(x.size());
  ObjectiveValue out;
  out.gradient.assign(theta.size(), 0.0);
  if (x.empty() || !(sigma2_init > 0.0)) {
    out.nll = kInf;
    return out;
  }
  const double omega = p.omega, alpha = p.alpha[0], gamma = p.gamma;
  const double beta = p.beta.empty() ? 0.0 : p.beta[0];

  // Forward-mode sensitivities of the recursion with respect to the natural
  // coefficients: (omega, alpha, beta) for arch/garch, (omega, alpha, gamma, beta) for egarch.
  std::array<double, 4> d{}, grad{};
  double total = 0.0;
  if (kind == ChKind::egarch) {
    double l = std::log(sigma2_init);
    for (std::size_t t = 0; t < x.size(); ++t) {
      if (t > 0) {
        const double z = x[t - 1] * std::exp(-0.5 * l);
        const double slope = alpha * (z > 0 ? 1.0 : (z < 0 ? -1.0 : 0.0)) + gamma;
        std::array<double, 4> nd{};
        for (int k = 0; k < 4; ++k) nd[k] = beta * d[k] + slope * (-0.5 * z * d[k]);
        nd[0] += 1.0;
        nd[1] += std::abs(z) - kMeanAbsNormal;
        nd[2] += z;
        nd[3] += l;
        l = omega + beta * l + alpha * (std::abs(z) - kMeanAbsNormal) + gamma * z;
        d = nd;
        if (std::abs(l) > kMaxLogVariance) {
          l = std::clamp(l, -kMaxLogVariance, kMaxLogVariance);
          d = {};
        }
      }
      const double inv = std::exp(-l);
      total += kHalfLog2Pi + 0.5 * l + 0.5 * x[t] * x[t] * inv;
      const double dl = 0.5 - 0.5 * x[t] * x[t] * inv;
      for (int k = 0; k < 4; ++k) grad[k] += dl * d[k];
    }
  } else {
    double s2 = sigma2_init;
    for (std::size_t t = 0; t < x.size(); ++t) {
      if (t > 0) {
        const double x2 = x[t - 1] * x[t - 1];
        std::array<double, 4> nd{};
        for (int k = 0; k < 3; ++k) nd[k] = beta * d[k];
        nd[0] += 1.0;
        nd[1] += x2;
        nd[2] += s2;
        s2 = omega + alpha * x2 + beta * s2;
        d = nd;
      }
      total += kHalfLog2Pi + 0.5 * std::log(s2) + x[t] * x[t] / (2.0 * s2);
      const double ds = 0.5 / s2 - x[t] * x[t] / (2.0 * s2 * s2);
      for (int k = 0; k < 3; ++k) grad[k] += ds * d[k];
    }
  }
  out.nll = total / n;
  for (auto& g : grad) g /= n;

  switch (kind) {
    case ChKind::arch:
      out.gradient[0] = grad[0] * omega;
      out.gradient[1] = grad[1] * alpha * (1.0 - alpha);
      break;
    case ChKind::garch:
      out.gradient[0] = grad[0] * omega;
      out.gradient[1] = grad[1] * alpha * (1.0 - alpha) - grad[2] * alpha * beta;
      out.gradient[2] = -grad[1] * alpha * beta + grad[2] * beta * (1.0 - beta);
      break;
    case ChKind::egarch:
      out.gradient[0] = grad[0];
      out.gradient[1] = grad[1];
      out.gradient[2] = grad[2];
      out.gradient[3] = grad[3] * (1.0 - beta * beta);
      break;
  }
  if (!std::isfinite(out.nll)) out.nll = kInf;
  return out;
}

namespace {

struct RestartOutcome {
  std::vector<double> theta;
  double nll = kInf;
  bool converged = false;
  std::size_t iterations = 0;
};

RestartOutcome run_adam(ChKind kind, std::vector<double> theta, std::span<const double> x, double s2,
                        const FitOptions& opt) {
  RestartOutcome best;
  std::size_t sizes[] = {theta.size()};
  OptimState st(sizes, opt.lr);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    auto obj = unconstrained_objective(kind, theta, x, s2);
    if (!std::isfinite(obj.nll)) break;
    if (obj.nll < best.nll) {
      best.theta = theta;
      best.nll = obj.nll;
    }
    best.iterations = it + 1;
    double norm = 0.0;
    for (double g : obj.gradient) norm += g * g;
    if (std::sqrt(norm) < opt.gradient_tolerance) {
      best.converged = true;
      break;
    }
    bool finite = std::all_of(obj.gradient.begin(), obj.gradient.end(), [](double g) { return std::isfinite(g); });
    if (!finite) break;
    // Step size decays geometrically to 1% of its start over the iteration budget.
    st.lr = opt.lr * std::pow(0.01, static_cast<double>(it) / static_cast<double>(opt.max_iterations));
    std::span<double> params[] = {theta};
    std::vector<double> grads[] = {obj.gradient};
    adam_step(params, grads, st);
  }
  return best;
}

ChParams random_start(ChKind kind, double v, std::mt19937_64& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  switch (kind) {
    case ChKind::arch: {
      const double a = u(0.05, 0.9);
      return ChParams::arch(v * (1.0 - a) * u(0.5, 1.5), a);
    }
    case ChKind::garch: {
      const double a = u(0.01, 0.3);
      const double b = u(0.3, 0.97 - a);
      return ChParams::garch(v * (1.0 - a - b) * u(0.5, 1.5), a, b);
    }
    case ChKind::egarch: {
      const double b = u(0.5, 0.98);
      return ChParams::egarch((1.0 - b) * std::log(v), u(0.0, 0.3), u(-0.1, 0.1), b);
    }
  }
  throw std::invalid_argument("unknown model kind");
}

ChParams default_start(ChKind kind, double v) {
  switch (kind) {
    case ChKind::arch: return ChParams::arch(0.7 * v, 0.3);
    case ChKind::garch: return ChParams::garch(0.1 * v, 0.1, 0.8);
    case ChKind::egarch: return ChParams::egarch(0.1 * std::log(v), 0.1, 0.0, 0.9);
  }
  throw std::invalid_argument("unknown model kind");
}

}  // namespace

FitResult fit_mle(ChKind kind, std::span<const double> x_train, const FitOptions& options) {
  if (x_train.size() < 50) {
    throw DataError("fitting needs at least 50 observations, got " + std::to_string(x_train.size()));
  }
  if (options.restarts < 1) throw ConfigError("at least one restart is required");
  FitResult result;
  result.seed = options.seed;
  result.sigma2_init = sample_variance(x_train);
  if (!(result.sigma2_init > 0.0) || !std::isfinite(result.sigma2_init)) {
    throw FitFailure(std::string(to_string(kind)) + " fit: degenerate likelihood (zero sample variance)");
  }
  const double v = result.sigma2_init;

  std::vector<std::vector<double>> starts;
  std::mt19937_64 rng(derive_seed(options.seed, "fit", to_string(kind)));
  starts.push_back(to_unconstrained(default_start(kind, v)));
  for (std::size_t r = 1; r < options.restarts; ++r) starts.push_back(to_unconstrained(random_start(kind, v, rng)));
  // The arch optimum can sit on the alpha = 0 boundary, which the logistic
  // map only reaches in the limit; start one run right next to it.
  if (kind == ChKind::arch) starts.push_back(to_unconstrained(ChParams::arch(v, 1e-8)));
  if (kind == ChKind::garch) {
    // Start from the fitted ARCH(1) with beta near zero so the nested optimum
    // is always reachable.
    auto nested = fit_mle(ChKind::arch, x_train, options);
    starts.push_back(to_unconstrained(ChParams::garch(nested.params.omega, nested.params.alpha[0], 1e-12)));
  }

  RestartOutcome best;
  for (const auto& start : starts) {
    auto r = run_adam(kind, start, x_train, v, options);
    ++result.restarts_used;
    if (r.nll < best.nll) best = std::move(r);
  }
  if (!std::isfinite(best.nll)) {
    throw FitFailure(std::string(to_string(kind)) + " fit: non-finite likelihood at every restart");
  }
  result.params = from_unconstrained(kind, best.theta);
  result.nll_train = best.nll;
  result.converged = best.converged;
  result.iterations = best.iterations;
  return result;
}

std::vector<double> generate_garch_path(const ChParams& params, std::size_t length, std::uint64_t seed) {
  if (params.kind != ChKind::garch) throw ConfigError("path generation needs garch parameters");
  params.validate();
  if (length < 1) throw ConfigError("path length must be at least 1");
  require_unit_orders(params);
  const double a = params.alpha[0], b = params.beta[0];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, 1.0);
  std::vector<double> x(length);
  double s2 = params.omega / (1.0 - a - b);
  for (auto& v : x) {
    v = std::sqrt(s2) * eps(rng);
    s2 = params.omega + a * v * v + b * s2;
  }
  return x;
}

namespace {

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_double(v[i]);
  return s;
}

double number(const std::string& text, const std::string& key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw DataError("fit record: bad value for " + key);
  return v;
}

std::vector<double> numbers(const std::string& text, const std::string& key) {
  std::vector<double> out;
  if (text.empty()) return out;
  std::istringstream s(text);
  std::string part;
  while (std::getline(s, part, ';')) out.push_back(number(part, key));
  return out;
}

}  // namespace

void write_fit_record(std::ostream& out, const FitResult& fit) {
  const auto& p = fit.params;
  out << "kind=" << to_string(p.kind) << '\n'
      << "p=" << p.p() << '\n'
      << "q=" << p.q() << '\n'
      << "omega=" << format_double(p.omega) << '\n'
      << "alpha=" << join(p.alpha) << '\n'
      << "beta=" << join(p.beta) << '\n'
      << "gamma=" << format_double(p.gamma) << '\n'
      << "sigma2_init=" << format_double(fit.sigma2_init) << '\n'
      << "seed=" << fit.seed << '\n'
      << "nll_train=" << format_double(fit.nll_train) << '\n';
}

FitResult read_fit_record(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("fit record: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"kind", "omega", "alpha", "beta", "gamma", "sigma2_init", "seed", "nll_train"}) {
    if (!kv.count(key)) throw DataError(std::string("fit record: missing ") + key);
  }
  auto kind = parse_ch_kind(kv["kind"]);
  if (!kind) throw DataError("fit record: unknown kind " + kv["kind"]);
  FitResult r;
  r.params = {*kind, number(kv["omega"], "omega"), numbers(kv["alpha"], "alpha"), numbers(kv["beta"], "beta"),
              number(kv["gamma"], "gamma")};
  r.sigma2_init = number(kv["sigma2_init"], "sigma2_init");
  r.seed = std::stoull(kv["seed"]);
  r.nll_train = number(kv["nll_train"], "nll_train");
  r.converged = true;
  return r;
}

std::vector<double> ClassicalForecaster::sigma_path(std::span<const double> x) const {
  auto s2 = variance_path(params_, x, sigma2_init_);
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) out[t] = std::sqrt(s2[t]);
  return out;
}

}  // namespace volbench
