#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "volbench/classical.hpp"
#include "volbench/error.hpp"
#include "volbench/evaluation.hpp"
#include "volbench/training.hpp"

using namespace volbench;

namespace {

ReturnSeries iid_series(std::size_t n, std::uint64_t seed, double split = 0.8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return normalize_and_split("iid", x, split);
}

ReturnSeries garch_series(std::size_t n, std::uint64_t seed) {
  auto x = generate_garch_path(ChParams::garch(0.05, 0.1, 0.85), n, seed);
  return normalize_and_split("garch", x, 0.8);
}

double test_nll(const SequenceModel& model, const ReturnSeries& s) {
  auto sigma = model.sigma_path(s.returns);
  double total = 0.0;
  for (std::size_t t = s.train_len; t < s.returns.size(); ++t) total += gaussian_nll(s.returns[t], sigma[t]);
  return total / static_cast<double>(s.test_len);
}

const double kUnitOptimum = 0.5 * std::log(2.0 * std::numbers::pi) + 0.5;

}  // namespace

// ---------------------------------------------------------------- Adam

TEST(Adam, FirstStepIsSignedLearningRate) {
  std::vector<double> p{1.0, -2.0, 0.5, 3.0};
  const std::vector<double> g{0.3, -4.0, 1e-3, -0.02};
  const auto before = p;
  std::size_t sizes[] = {p.size()};
  OptimState st(sizes, 0.01);
  std::span<double> params[] = {p};
  std::vector<double> grads[] = {g};
  adam_step(params, grads, st);
  EXPECT_EQ(st.step, 1u);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double update = p[i] - before[i];
    const double expected = -0.01 * (g[i] > 0 ? 1.0 : -1.0);
    EXPECT_NEAR(update, expected, 0.01 * (st.eps / std::abs(g[i])) + 1e-15);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.0, -2.0};
  std::size_t sizes[] = {2};
  OptimState st(sizes, 0.1);
  std::span<double> params[] = {p};
  std::vector<double> grads[] = {{0.0, 0.0}};
  adam_step(params, grads, st);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, ConstantGradientStepsDoNotGrow) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(5), g(5);
    for (auto& v : g) v = n(rng);
    std::size_t sizes[] = {5};
    OptimState st(sizes, 1e-3);
    std::span<double> params[] = {p};
    std::vector<double> grads[] = {g};
    adam_step(params, grads, st);
    const auto after1 = p;
    adam_step(params, grads, st);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_LE(std::abs(p[i] - after1[i]), std::abs(after1[i]) + 1e-12);
  }
}

TEST(Adam, MatchesReferenceUpdate) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<double> p(3), ref(3), m(3, 0.0), v(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) ref[i] = p[i] = n(rng);
  std::size_t sizes[] = {3};
  OptimState st(sizes, 0.05, 0.8, 0.99, 1e-6);
  for (int step = 1; step <= 10; ++step) {
    std::vector<double> g(3);
    for (auto& x : g) x = n(rng);
    for (std::size_t i = 0; i < 3; ++i) {
      m[i] = 0.8 * m[i] + 0.2 * g[i];
      v[i] = 0.99 * v[i] + 0.01 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.8, step)), vh = v[i] / (1 - std::pow(0.99, step));
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-6);
    }
    std::span<double> params[] = {p};
    std::vector<double> grads[] = {g};
    adam_step(params, grads, st);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], ref[i], 1e-12);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  std::vector<double> a{1.0}, b{2.0};
  std::size_t sizes[] = {1, 1};
  OptimState st(sizes, 0.1);
  std::span<double> params[] = {a, b};
  std::vector<double> grads[] = {{0.1}, {std::nan("")}};
  std::string names[] = {"layer.w", "layer.b"};
  try {
    adam_step(params, grads, st, names);
    FAIL();
  } catch (const NumericFailure& e) {
    EXPECT_NE(std::string(e.what()).find("layer.b"), std::string::npos);
  }
}

// ---------------------------------------------------------------- clipping

TEST(Clip, Examples) {
  std::vector<std::vector<double>> g{{3.0, 4.0}};
  clip_global_norm(g, 10.0);
  EXPECT_EQ(g[0], (std::vector<double>{3.0, 4.0}));
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[0][1], 0.8, 1e-15);
  std::vector<std::vector<double>> z{{0.0, 0.0}, {0.0}};
  clip_global_norm(z, 1.0);
  EXPECT_EQ(z[0], (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(clip_global_norm(z, 0.0), std::invalid_argument);
}

TEST(Clip, NormBoundedAfterClipping) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 10.0);
  std::uniform_real_distribution<double> thr(0.01, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> g(3, std::vector<double>(4));
    for (auto& v : g)
      for (auto& x : v) x = n(rng);
    const double t = thr(rng);
    clip_global_norm(g, t);
    double s = 0.0;
    for (const auto& v : g)
      for (double x : v) s += x * x;
    EXPECT_LE(std::sqrt(s), t + 1e-12);
  }
}

// ---------------------------------------------------------------- dropout

TEST(Dropout, Examples) {
  std::mt19937_64 rng(4);
  const auto off = dropout_mask({3, 4}, 0.0, rng);
  for (double v : off.values()) EXPECT_EQ(v, 1.0);
  const auto eval = dropout_mask({3, 4}, 0.7, rng, false);
  for (double v : eval.values()) EXPECT_EQ(v, 1.0);
  auto big = dropout_mask({1000000}, 0.5, rng);
  double mean = 0.0;
  for (double v : big.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    mean += v;
  }
  mean /= 1e6;
  EXPECT_NEAR(mean, 1.0, 0.01);
  EXPECT_THROW(dropout_mask({2}, 1.0, rng), std::invalid_argument);
}

// ---------------------------------------------------------------- config and log

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.batch_size, 64u);
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.clip_norm = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.anneal_factor = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainingLog, CsvLayout) {
  std::vector<EpochLog> log{{1, 1.5, 1.4, 1e-3}, {2, 1.45, 1.41, 5e-4}};
  std::ostringstream out;
  write_training_log(out, log);
  EXPECT_EQ(out.str(), "epoch,train_nll,val_nll,lr\n1,1.5,1.4,0.001\n2,1.45,1.41,5e-04\n");
}

// ---------------------------------------------------------------- training

TEST(TrainModel, WindowMustFitTrainingPortion) {
  auto s = iid_series(100, 5);
  TrainConfig cfg;
  cfg.window_len = s.train_len;
  EXPECT_THROW(train_model(CellConfig::defaults(ArchKind::tcn), s, cfg), ConfigError);
}

TEST(TrainModel, DeterministicInSeed) {
  auto s = garch_series(400, 6);
  CellConfig cell = CellConfig::defaults(ArchKind::skiprnn);
  cell.hidden_size = 6;
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.window_len = 32;
  cfg.seed = 11;
  auto a = train_model(cell, s, cfg);
  auto b = train_model(cell, s, cfg);
  const auto& pa = a.model.parameters().items();
  const auto& pb = b.model.parameters().items();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i].value.values().begin(), pa[i].value.values().end(), pb[i].value.values().begin()))
        << pa[i].name;
  }
  cfg.seed = 12;
  auto c = train_model(cell, s, cfg);
  EXPECT_NE(a.model.sigma_path(s.returns), c.model.sigma_path(s.returns));
}

TEST(TrainModel, IidNoiseReachesUnitOptimum) {
  auto s = iid_series(2013, 7, 1800.0 / 2013.0);
  TrainConfig cfg;
  cfg.seed = 3;
  auto r = train_model(CellConfig::defaults(ArchKind::indrnn), s, cfg);
  EXPECT_NEAR(test_nll(r.model, s), kUnitOptimum, 0.05);
  EXPECT_EQ(r.summary.best_val_nll, r.summary.log[r.summary.best_epoch - 1].val_nll);
}

TEST(TrainModel, AnnealingNeverRaisesLearningRate) {
  auto s = garch_series(400, 8);
  CellConfig cell = CellConfig::defaults(ArchKind::qrnn);
  cell.hidden_size = 4;
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 1;
  cfg.stop_patience = 0;
  cfg.window_len = 32;
  cfg.lr = 0.05;
  auto r = train_model(cell, s, cfg);
  ASSERT_EQ(r.summary.log.size(), 12u);
  EXPECT_EQ(r.summary.log.front().lr, 0.05);
  for (std::size_t i = 1; i < r.summary.log.size(); ++i) EXPECT_LE(r.summary.log[i].lr, r.summary.log[i - 1].lr);
}

TEST(TrainModel, EarlyStopAfterStalledValidation) {
  auto s = garch_series(400, 9);
  CellConfig cell = CellConfig::defaults(ArchKind::indrnn);
  cell.hidden_size = 4;
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.stop_patience = 3;
  cfg.window_len = 32;
  cfg.lr = 0.05;
  auto r = train_model(cell, s, cfg);
  EXPECT_LT(r.summary.log.size(), 200u);
  EXPECT_EQ(r.summary.log.size(), r.summary.best_epoch + 3);
}

class EveryArchitectureTraining : public ::testing::TestWithParam<ArchKind> {};

TEST_P(EveryArchitectureTraining, EarlyTrainingLossDoesNotRise) {
  auto s = iid_series(2013, 10, 1800.0 / 2013.0);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.stop_patience = 0;
  cfg.seed = 5;
  auto r = train_model(CellConfig::defaults(GetParam()), s, cfg);
  ASSERT_EQ(r.summary.log.size(), 5u);
  int upticks = 0;
  for (std::size_t i = 1; i < 5; ++i) {
    const double prev = r.summary.log[i - 1].train_nll, cur = r.summary.log[i].train_nll;
    if (cur > prev) {
      ++upticks;
      EXPECT_LE(cur, prev * 1.01) << "epoch " << i + 1;
    }
  }
  EXPECT_LE(upticks, 1);
}

INSTANTIATE_TEST_SUITE_P(All, EveryArchitectureTraining, ::testing::ValuesIn(kAllArchKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

// ---------------------------------------------------------------- cross-validation

namespace {

TrainConfig quick_cv_config() {
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.window_len = 16;
  cfg.seed = 21;
  return cfg;
}

GridPoint point(std::size_t hidden, double lr = 1e-3) {
  GridPoint p;
  p.cell = CellConfig::defaults(ArchKind::indrnn);
  p.cell.hidden_size = hidden;
  p.lr = lr;
  return p;
}

}  // namespace

TEST(CrossValidate, SingletonGrid) {
  auto s = garch_series(300, 11);
  std::vector<GridPoint> grid{point(4)};
  auto r = cross_validate(grid, s, quick_cv_config());
  EXPECT_EQ(r.best_index, 0u);
  ASSERT_EQ(r.fold_scores.size(), 1u);
  EXPECT_EQ(r.fold_scores[0].size(), 5u);
  double mean = 0.0;
  for (double v : r.fold_scores[0]) mean += v / 5.0;
  EXPECT_NEAR(r.mean_scores[0], mean, 1e-12);
}

TEST(CrossValidate, DuplicatePointsPickFirst) {
  auto s = garch_series(300, 12);
  std::vector<GridPoint> grid{point(4), point(4), point(4)};
  auto r = cross_validate(grid, s, quick_cv_config());
  EXPECT_EQ(r.mean_scores[0], r.mean_scores[1]);
  EXPECT_EQ(r.best_index, 0u);
}

TEST(CrossValidate, ReproducibleSelection) {
  auto s = garch_series(300, 13);
  std::vector<GridPoint> grid{point(8), point(32)};
  auto a = cross_validate(grid, s, quick_cv_config());
  auto b = cross_validate(grid, s, quick_cv_config());
  EXPECT_EQ(a.best_index, b.best_index);
  EXPECT_EQ(a.fold_scores, b.fold_scores);
}

TEST(CrossValidate, Errors) {
  auto s = garch_series(300, 14);
  EXPECT_THROW(cross_validate({}, s, quick_cv_config()), ConfigError);
  auto tiny = garch_series(20, 15);
  std::vector<GridPoint> grid{point(4)};
  EXPECT_THROW(cross_validate(grid, tiny, quick_cv_config()), DataError);
}
