#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "beatsim/fit.hpp"

using namespace beatsim;

namespace {

struct Curve {
  std::vector<double> taus, g2;
};

Curve sample_model(const G2Params& p, int n, double span, double baseline = 1.0) {
  Curve c;
  for (int k = 0; k < n; ++k) {
    const double tau = span * k / (n - 1);
    c.taus.push_back(tau);
    c.g2.push_back(baseline * g2_model(tau, p));
  }
  return c;
}

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

G2Params with_component(G2Params p, int j, double value) {
  (j == 0 ? p.v : j == 1 ? p.gamma : p.delta_nu) = value;
  return p;
}

double component(const G2Params& p, int j) { return j == 0 ? p.v : j == 1 ? p.gamma : p.delta_nu; }

}  // namespace

TEST(Jacobian, MatchesCentralDifferences) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const G2Params p{0.05 + 0.9 * u(rng), 0.05 + 2.0 * u(rng), 0.1 + 2.0 * u(rng)};
    const double tau = 0.1 + 6.0 * u(rng);
    const auto g = g2_model_gradient(tau, p);
    const double scale = std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])});
    for (int j = 0; j < 3; ++j) {
      const double x = component(p, j);
      const double h = 1e-5 * std::max(1.0, std::abs(x));
      const double fd = (g2_model(tau, with_component(p, j, x + h)) - g2_model(tau, with_component(p, j, x - h))) / (2 * h);
      EXPECT_LT(std::abs(fd - g[j]) / scale, 1e-6) << "param " << j << " at tau " << tau;
    }
  }
}

TEST(InitialGuess, CloseToTruthOnExactData) {
  const G2Params truth{0.47, 0.63, 0.68};
  const auto c = sample_model(truth, 601, 6.0);
  const auto g = initial_guess(c.taus, c.g2);
  EXPECT_LT(rel(g.v, truth.v), 0.2);
  EXPECT_LT(rel(g.gamma, truth.gamma), 0.2);
  EXPECT_LT(rel(g.delta_nu, truth.delta_nu), 0.2);
}

TEST(InitialGuess, FlatCurveGivesZeros) {
  const auto c = sample_model(G2Params{0.0, 0.63, 0.68}, 200, 6.0);
  const auto g = initial_guess(c.taus, c.g2);
  EXPECT_EQ(g.v, 0.0);
  EXPECT_EQ(g.gamma, 0.0);
  EXPECT_EQ(g.delta_nu, 0.0);
}

TEST(InitialGuess, FrequencyInvariantUnderOffset) {
  auto c = sample_model(G2Params{0.47, 0.63, 0.68}, 601, 6.0);
  const auto a = initial_guess(c.taus, c.g2);
  for (auto& y : c.g2) y += 0.37;
  const auto b = initial_guess(c.taus, c.g2);
  EXPECT_DOUBLE_EQ(a.delta_nu, b.delta_nu);
}

TEST(InitialGuess, RejectsIrregularDelays) {
  std::vector<double> t = {0, 0.1, 0.2, 0.35, 0.4}, y(5, 1.0);
  EXPECT_THROW(initial_guess(t, y), FitError);
}

TEST(FitG2, ExactDataRecoveredToHighPrecision) {
  const G2Params truth{0.47, 0.63, 0.68};
  const auto c = sample_model(truth, 64, 6.0);
  const auto fit = fit_g2(c.taus, c.g2, initial_guess(c.taus, c.g2));
  ASSERT_TRUE(fit.converged);
  EXPECT_LT(rel(fit.params.v, truth.v), 1e-8);
  EXPECT_LT(rel(fit.params.gamma, truth.gamma), 1e-8);
  EXPECT_LT(rel(fit.params.delta_nu, truth.delta_nu), 1e-8);
  EXPECT_TRUE(fit.delta_nu_identifiable);
  EXPECT_LE(fit.rss, fit.initial_rss);
}

// Any start within +-30% of truth recovers all parameters to 1e-6.
TEST(FitG2, RecoveryFromPerturbedStarts) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 60; ++i) {
    const G2Params truth{0.1 + 0.8 * u(rng), 0.1 + 1.0 * u(rng), 0.4 + 1.2 * u(rng)};
    const double span = std::max(6.0, 2.5 / truth.delta_nu);  // at least two cycles
    const auto c = sample_model(truth, 200, span);
    auto jitter = [&](double x) { return x * (0.7 + 0.6 * u(rng)); };
    const G2Params guess{jitter(truth.v), jitter(truth.gamma), jitter(truth.delta_nu)};
    const auto fit = fit_g2(c.taus, c.g2, guess);
    EXPECT_TRUE(fit.converged);
    EXPECT_LT(rel(fit.params.v, truth.v), 1e-6) << i;
    EXPECT_LT(rel(fit.params.gamma, truth.gamma), 1e-6) << i;
    EXPECT_LT(rel(fit.params.delta_nu, truth.delta_nu), 1e-6) << i;
  }
}

TEST(FitG2, FlatDataIsUnidentifiable) {
  const auto c = sample_model(G2Params{0.0, 0.0, 0.0}, 300, 6.0);
  const auto fit = fit_g2(c.taus, c.g2, initial_guess(c.taus, c.g2));
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(fit.params.v, 1e-8);
  EXPECT_FALSE(fit.delta_nu_identifiable);
}

TEST(FitG2, ResidualNeverExceedsInitial) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 0.03);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    auto c = sample_model(G2Params{0.47, 0.63, 0.68}, 300, 6.0);
    for (auto& y : c.g2) y += z(rng);
    const G2Params guess{u(rng), 2.0 * u(rng), 0.2 + 1.5 * u(rng)};
    const auto fit = fit_g2(c.taus, c.g2, guess);
    EXPECT_LE(fit.rss, fit.initial_rss);
    EXPECT_GE(fit.params.v, 0.0);
    EXPECT_LE(fit.params.v, 1.0);
    EXPECT_GE(fit.params.gamma, 0.0);
    EXPECT_GE(fit.params.delta_nu, 0.0);
    if (fit.converged && fit.iterations < 200) EXPECT_LT(fit.gradient_norm, 1e-6);
  }
}

// Rescaling tau by c and (gamma, dnu) by 1/c leaves the residual unchanged.
TEST(FitG2, ScaleEquivariance) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0.0, 0.02);
  auto c = sample_model(G2Params{0.47, 0.63, 0.68}, 300, 6.0);
  for (auto& y : c.g2) y += z(rng);
  const auto a = fit_g2(c.taus, c.g2, G2Params{0.4, 0.6, 0.7});
  const double s = 2.5;
  std::vector<double> scaled(c.taus);
  for (auto& t : scaled) t *= s;
  const auto b = fit_g2(scaled, c.g2, G2Params{0.4, 0.6 / s, 0.7 / s});
  EXPECT_NEAR(b.rss, a.rss, 1e-9 * a.rss);
  EXPECT_NEAR(b.params.v, a.params.v, 1e-6);
  EXPECT_NEAR(b.params.gamma * s, a.params.gamma, 1e-6);
  EXPECT_NEAR(b.params.delta_nu * s, a.params.delta_nu, 1e-6);
}

TEST(FitG2, FreeBaselineRecoversScale) {
  const G2Params truth{1.0 / 3.0, 0.2, 0.68};
  const auto c = sample_model(truth, 300, 6.0, 1.5);
  G2FitOptions opts;
  opts.free_baseline = true;
  const auto fit = fit_g2(c.taus, c.g2, initial_guess(c.taus, c.g2), opts);
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(fit.baseline, 1.5, 1e-8);
  EXPECT_NEAR(fit.params.v, truth.v, 1e-8);
}

TEST(FitG2, InputValidation) {
  const auto c = sample_model(G2Params{0.47, 0.63, 0.68}, 20, 6.0);
  EXPECT_THROW(fit_g2(std::span(c.taus).first(5), std::span(c.g2).first(5), G2Params{}), FitError);
  EXPECT_THROW(fit_g2(c.taus, std::span(c.g2).first(19), G2Params{}), FitError);
  auto bad = c.g2;
  bad[3] = std::nan("");
  EXPECT_THROW(fit_g2(c.taus, bad, G2Params{}), FitError);
}

TEST(PowerLaw, ExactLine) {
  std::vector<double> p, b;
  for (int i = 0; i < 8; ++i) {
    p.push_back(0.2 + 0.8 * i / 7.0);
    b.push_back(2.0 * p.back() - 0.24);
  }
  const auto f = fit_power_law(p, b);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, -0.24, 1e-14);
  EXPECT_EQ(f.r2, 1.0);
}

TEST(PowerLaw, TwoPointsInterpolate) {
  const auto f = fit_power_law(std::vector<double>{0.3, 0.9}, std::vector<double>{1.0, 2.5});
  EXPECT_NEAR(f.slope, 2.5, 1e-14);
  EXPECT_NEAR(f.intercept, 0.25, 1e-14);
  EXPECT_EQ(f.r2, 1.0);
  EXPECT_THROW(fit_power_law(std::vector<double>{0.3}, std::vector<double>{1.0}), FitError);
  EXPECT_THROW(fit_power_law(std::vector<double>{0.3, 0.3}, std::vector<double>{1.0, 2.0}), FitError);
}

TEST(PowerLaw, ResidualsOrthogonalAndR2Bounded) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 0.3);
  std::vector<double> p, b;
  for (int i = 0; i < 30; ++i) {
    p.push_back(0.1 * i);
    b.push_back(1.5 * p.back() + 0.2 + z(rng));
  }
  const auto f = fit_power_law(p, b);
  double dot = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = b[i] - (f.intercept + f.slope * p[i]);
    dot += e * p[i];
    sum += e;
  }
  EXPECT_NEAR(dot, 0.0, 1e-10);
  EXPECT_NEAR(sum, 0.0, 1e-10);
  EXPECT_GE(f.r2, 0.0);
  EXPECT_LE(f.r2, 1.0);
}

TEST(Sweeps, PowerSweepRecoversSlope) {
  ExperimentConfig cfg;
  cfg.gamma = 0.0;
  cfg.n_pulses = 50;
  std::vector<double> grid;
  for (int i = 0; i < 8; ++i) grid.push_back(0.2 + 0.8 * i / 7.0);
  SweepOptions opts;
  opts.jobs = 2;
  const auto res = sweep_power(cfg, grid, opts);
  for (const auto& e : res.errors) EXPECT_EQ(e, "");
  ASSERT_TRUE(res.fit);
  EXPECT_GT(res.fit->r2, 0.999);
  EXPECT_NEAR(res.fit->slope, cfg.pair.kappa1, 0.02 * cfg.pair.kappa1);
}

TEST(Sweeps, TemperatureSweepSinglePointAndValidation) {
  ExperimentConfig cfg;
  cfg.pair.p_w1 = 0.46;
  cfg.n_pulses = 300;
  const auto res = sweep_temperature(cfg, std::vector<double>{350.0});
  ASSERT_EQ(res.gammas.size(), 1u);
  EXPECT_EQ(res.errors[0], "");
  EXPECT_DOUBLE_EQ(res.injected[0], 0.63);
  EXPECT_THROW(sweep_temperature(cfg, std::vector<double>{350.0, 340.0}), DomainError);
  EXPECT_THROW(sweep_temperature(cfg, std::vector<double>{}), FitError);
}

TEST(Sweeps, FailedPointsAreRecorded) {
  ExperimentConfig cfg;
  cfg.gamma = 0.0;
  cfg.n_pulses = 20;
  // p_w1 = 0.12 cancels the beat (2 * 0.12 = 0.24).
  const auto res = sweep_power(cfg, std::vector<double>{0.12, 0.5, 0.8});
  EXPECT_NE(res.errors[0], "");
  EXPECT_TRUE(std::isnan(res.beats[0]));
  EXPECT_EQ(res.errors[1], "");
  ASSERT_TRUE(res.fit);
  EXPECT_EQ(res.fit->r2, 1.0);
}
