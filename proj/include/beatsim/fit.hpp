#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beatsim/analyze.hpp"
#include "beatsim/error.hpp"
#include "beatsim/model.hpp"
#include "beatsim/numeric.hpp"
#include "beatsim/parallel.hpp"
#include "beatsim/simulate.hpp"

namespace beatsim {

class FitError : public Error {
 public:
  using Error::Error;
};

struct G2Fit {
  G2Params params;
  double baseline = 1.0;  // fixed at 1 unless fitted
  G2Params stderrs;       // Gauss-Newton standard errors; NaN when unidentifiable
  double baseline_stderr = 0.0;
  double rss = 0.0;
  double initial_rss = 0.0;
  double gradient_norm = 0.0;  // projected gradient of the cost at the result
  int iterations = 0;
  bool converged = false;
  bool delta_nu_identifiable = true;
};

struct G2FitOptions {
  int max_iterations = 200;
  double step_tolerance = 1e-10;      // relative parameter step
  double gradient_tolerance = 1e-12;  // projected gradient norm
  // Fit B (1 + V exp(-gamma tau) cos 2 pi dnu tau) with a free baseline B
  // instead of pinning B = 1. Needed for intensity statistics whose
  // correlation baseline is not 1, e.g. thermal sources.
  bool free_baseline = false;
  std::vector<double> weights;  // optional per-point weights (inverse variances)
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Partial derivatives of 1 + V exp(-gamma tau) cos(2 pi dnu tau) with
// respect to (V, gamma, dnu).
inline std::array<double, 3> g2_model_gradient(double tau, const G2Params& p) {
  const double e = std::exp(-p.gamma * tau);
  const double arg = kTwoPi * p.delta_nu * tau;
  const double c = std::cos(arg);
  const double s = std::sin(arg);
  return {e * c, -p.v * tau * e * c, -p.v * e * kTwoPi * tau * s};
}

// Starting point for the g2 fit: dnu from the spectral peak of g2 - mean(g2),
// V from the largest |g2 - 1| within the first half period, gamma from a
// log-linear fit to the successive extrema of |g2 - 1|. Returns all zeros
// when the curve has no oscillation.
inline G2Params initial_guess(std::span<const double> taus, std::span<const double> g2) {
  if (taus.size() != g2.size() || taus.size() < 4) throw FitError("initial_guess needs at least 4 matching points");
  const double dtau = taus[1] - taus[0];
  for (std::size_t k = 1; k < taus.size(); ++k)
    if (std::abs((taus[k] - taus[k - 1]) - dtau) > 1e-6 * std::abs(dtau))
      throw FitError("initial_guess needs uniformly spaced delays");
  const double span_tau = taus.back() - taus.front();
  const auto peak = dominant_frequency(g2, dtau, 1.0 / span_tau);
  if (!peak) return {};

  G2Params guess;
  guess.delta_nu = peak->frequency;
  const double half_period = 0.5 / guess.delta_nu;

  double v = 0.0;
  for (std::size_t k = 0; k < taus.size() && taus[k] - taus.front() <= half_period; ++k)
    v = std::max(v, std::abs(g2[k] - 1.0));
  guess.v = std::clamp(v, 0.0, 1.0);

  // Extrema of |g2 - 1|: largest value within each half-period block.
  const auto block = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(half_period / dtau)));
  std::vector<double> xs, ys;
  for (std::size_t start = 0; start + block <= taus.size(); start += block) {
    std::size_t best = start;
    for (std::size_t k = start; k < start + block; ++k)
      if (std::abs(g2[k] - 1.0) > std::abs(g2[best] - 1.0)) best = k;
    const double a = std::abs(g2[best] - 1.0);
    if (a > 0.0) {
      xs.push_back(taus[best]);
      ys.push_back(std::log(a));
    }
  }
  if (xs.size() >= 2) {
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx > 0.0) guess.gamma = std::max(0.0, -sxy / sxx);
  }
  return guess;
}

inline G2Params initial_guess(const G2Estimate& est) { return initial_guess(est.taus, est.g2); }

namespace detail {

// Parameter vector layout: (V, gamma, dnu[, B]).
class G2Problem {
 public:
  G2Problem(std::span<const double> taus, std::span<const double> y, std::span<const double> w, bool free_baseline)
      : taus_(taus), y_(y), w_(w), free_(free_baseline) {}

  int dim() const { return free_ ? 4 : 3; }
  std::size_t size() const { return taus_.size(); }

  double baseline(const Eigen::VectorXd& x) const { return free_ ? x[3] : 1.0; }
  double weight(std::size_t k) const { return w_.empty() ? 1.0 : w_[k]; }

  double model(std::size_t k, const Eigen::VectorXd& x) const {
    return baseline(x) * g2_model(taus_[k], G2Params{x[0], x[1], x[2]});
  }

  double cost(const Eigen::VectorXd& x) const {
    double c = 0.0;
    for (std::size_t k = 0; k < size(); ++k) {
      const double r = y_[k] - model(k, x);
      c += weight(k) * r * r;
    }
    return c;
  }

  // Residuals r = y - f and Jacobian J = df/dx, both scaled by sqrt(w).
  void linearize(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& J) const {
    r.resize(static_cast<Eigen::Index>(size()));
    J.resize(static_cast<Eigen::Index>(size()), dim());
    const G2Params p{x[0], x[1], x[2]};
    const double b = baseline(x);
    for (std::size_t k = 0; k < size(); ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      const double sw = std::sqrt(weight(k));
      const double g = g2_model(taus_[k], p);
      const auto grad = g2_model_gradient(taus_[k], p);
      r[row] = sw * (y_[k] - b * g);
      for (int j = 0; j < 3; ++j) J(row, j) = sw * b * grad[static_cast<std::size_t>(j)];
      if (free_) J(row, 3) = sw * g;
    }
  }

  Eigen::VectorXd lower() const {
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(dim());
    if (free_) lo[3] = 1e-12;
    return lo;
  }
  Eigen::VectorXd upper() const {
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(dim(), std::numeric_limits<double>::infinity());
    hi[0] = 1.0;
    return hi;
  }

 private:
  std::span<const double> taus_, y_, w_;
  bool free_;
};

inline Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

inline double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                      const Eigen::VectorXd& hi) {
  // g = J^T r is the descent direction of 0.5 |r|^2.
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] <= lo[i] && g[i] < 0.0) continue;
    if (x[i] >= hi[i] && g[i] > 0.0) continue;
    s += g[i] * g[i];
  }
  return std::sqrt(s);
}

}  // namespace detail

// Bound-constrained Levenberg-Marquardt fit of the dephased beat model with
// the analytic Jacobian. V is kept in [0, 1], gamma and dnu nonnegative.
//
// Before iterating, dnu is refined by scanning +-30% around the guess with V
// set to its linear least-squares value; the scan result is used only if it
// lowers the cost, so the final residual never exceeds the one at the guess.
inline G2Fit fit_g2(std::span<const double> taus, std::span<const double> g2, const G2Params& guess,
                    const G2FitOptions& opts = {}) {
  if (taus.size() != g2.size()) throw FitError("delay and g2 arrays differ in length");
  if (taus.size() < 8) throw FitError("fit needs at least 8 delay points");
  if (!opts.weights.empty() && opts.weights.size() != taus.size()) throw FitError("weights length mismatch");
  if (!std::isfinite(guess.v) || !std::isfinite(guess.gamma) || !std::isfinite(guess.delta_nu))
    throw FitError("initial guess must be finite");
  for (double v : g2)
    if (!std::isfinite(v)) throw FitError("g2 data contains non-finite values");

  const detail::G2Problem prob(taus, g2, opts.weights, opts.free_baseline);
  const Eigen::VectorXd lo = prob.lower();
  const Eigen::VectorXd hi = prob.upper();
  const int dim = prob.dim();

  Eigen::VectorXd x(dim);
  x[0] = guess.v;
  x[1] = guess.gamma;
  x[2] = guess.delta_nu;
  if (opts.free_baseline) {
    double mean = pairwise_sum(g2) / static_cast<double>(g2.size());
    x[3] = mean > 0.0 ? mean : 1.0;
    if (guess.v > 0.0) x[0] = g2.front() / x[3] - 1.0;
  }
  x = detail::project(x, lo, hi);

  G2Fit fit;
  double cost = prob.cost(x);
  fit.initial_rss = cost;

  if (x[2] > 0.0) {
    // Linear-in-V reduced cost scan over dnu.
    const double b = prob.baseline(x);
    Eigen::VectorXd best = x;
    double best_cost = cost;
    for (int j = -30; j <= 30; ++j) {
      Eigen::VectorXd cand = x;
      cand[2] = x[2] * (1.0 + 0.01 * j);
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < prob.size(); ++k) {
        const double basis = b * std::exp(-cand[1] * taus[k]) * std::cos(kTwoPi * cand[2] * taus[k]);
        num += prob.weight(k) * basis * (g2[k] - b);
        den += prob.weight(k) * basis * basis;
      }
      if (den > 0.0) cand[0] = num / den;
      cand = detail::project(cand, lo, hi);
      const double c = prob.cost(cand);
      if (c < best_cost) best_cost = c, best = cand;
    }
    x = best;
    cost = best_cost;
  }

  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  double lambda = 1e-3;
  prob.linearize(x, r, J);
  Eigen::VectorXd grad = J.transpose() * r;
  for (fit.iterations = 0; fit.iterations < opts.max_iterations; ++fit.iterations) {
    if (detail::projected_gradient_norm(x, grad, lo, hi) < opts.gradient_tolerance) {
      fit.converged = true;
      break;
    }
    const Eigen::MatrixXd A = J.transpose() * J;
    Eigen::VectorXd d = A.diagonal();
    const double dmax = std::max(d.maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = std::max(d[i], 1e-12 * dmax);

    bool accepted = false;
    bool stalled = false;
    while (!accepted) {
      Eigen::MatrixXd M = A;
      M.diagonal() += lambda * d;
      const Eigen::VectorXd step = M.ldlt().solve(grad);
      const Eigen::VectorXd trial = detail::project(x + step, lo, hi);
      const double trial_cost = prob.cost(trial);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        const Eigen::VectorXd delta = trial - x;
        double rel = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i)
          rel = std::max(rel, std::abs(delta[i]) / std::max(std::abs(trial[i]), 1e-8));
        const bool improved = trial_cost < cost;
        x = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.3, 1e-15);
        accepted = true;
        if (rel < opts.step_tolerance || !improved) stalled = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e20) {
          stalled = true;
          break;
        }
      }
    }
    prob.linearize(x, r, J);
    grad = J.transpose() * r;
    if (stalled) {
      fit.converged = true;
      ++fit.iterations;
      break;
    }
  }

  fit.params = G2Params{x[0], x[1], x[2]};
  fit.baseline = prob.baseline(x);
  fit.rss = cost;
  fit.gradient_norm = detail::projected_gradient_norm(x, grad, lo, hi);

  const auto n = static_cast<double>(prob.size());
  const double s2 = n > dim ? cost / (n - dim) : 0.0;
  const Eigen::MatrixXd A = J.transpose() * J;
  const Eigen::MatrixXd cov = A.completeOrthogonalDecomposition().pseudoInverse() * s2;
  auto se = [&](int i) { return std::sqrt(std::max(0.0, cov(i, i))); };
  fit.stderrs = G2Params{se(0), se(1), se(2)};
  fit.baseline_stderr = opts.free_baseline ? se(3) : 0.0;

  fit.delta_nu_identifiable = fit.params.v > std::max(1e-8, 3.0 * fit.stderrs.v);
  if (!fit.delta_nu_identifiable) {
    fit.stderrs.gamma = std::numeric_limits<double>::quiet_NaN();
    fit.stderrs.delta_nu = std::numeric_limits<double>::quiet_NaN();
  }
  return fit;
}

inline G2Fit fit_g2(const G2Estimate& est, const G2Params& guess, const G2FitOptions& opts = {}) {
  return fit_g2(est.taus, est.g2, guess, opts);
}

// Ordinary least squares beat = slope * power + intercept.
inline LinearFit fit_power_law(std::span<const double> powers, std::span<const double> beats) {
  if (powers.size() != beats.size()) throw FitError("power and beat arrays differ in length");
  if (powers.size() < 2) throw FitError("linear fit needs at least 2 points");
  const double n = static_cast<double>(powers.size());
  const double mx = pairwise_sum(powers) / n;
  const double my = pairwise_sum(beats) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < powers.size(); ++i) {
    const double dx = powers[i] - mx;
    const double dy = beats[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw FitError("all powers are identical");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < powers.size(); ++i) {
    const double e = beats[i] - (f.intercept + f.slope * powers[i]);
    ss_res += e * e;
  }
  f.r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return f;
}

struct SweepOptions {
  unsigned jobs = 1;
  double tau_max = 6.0;  // us, delay range fitted at each point
  bool free_baseline = false;
};

struct TempSweepResult {
  std::vector<double> temperatures;  // K, ascending
  std::vector<double> injected;      // model gamma at each temperature
  std::vector<double> gammas;        // fitted, NaN where the point failed
  std::vector<double> gamma_stderrs;
  std::vector<std::string> errors;   // empty string where the point succeeded
};

// Fits gamma at each temperature. Every point reuses the base master seed,
// so the points differ only through the injected dephasing rate.
inline TempSweepResult sweep_temperature(const ExperimentConfig& base, std::span<const double> temperatures,
                                         const SweepOptions& opts = {}) {
  if (temperatures.empty()) throw FitError("temperature grid is empty");
  for (std::size_t i = 0; i < temperatures.size(); ++i) {
    if (!(temperatures[i] > 0.0)) throw DomainError("temperatures must be positive");
    if (i > 0 && !(temperatures[i] > temperatures[i - 1])) throw DomainError("temperatures must be strictly ascending");
  }
  base.validate();
  const std::size_t n = temperatures.size();
  TempSweepResult res;
  res.temperatures.assign(temperatures.begin(), temperatures.end());
  res.injected.resize(n);
  res.gammas.assign(n, std::numeric_limits<double>::quiet_NaN());
  res.gamma_stderrs.assign(n, std::numeric_limits<double>::quiet_NaN());
  res.errors.assign(n, {});
  for (std::size_t i = 0; i < n; ++i)
    res.injected[i] = gamma_temperature_model(temperatures[i], base.gamma, base.reference_temperature);

  const unsigned outer = std::min<unsigned>(resolve_jobs(opts.jobs), static_cast<unsigned>(n));
  const unsigned inner = std::max(1u, resolve_jobs(opts.jobs) / std::max(1u, outer));
  parallel_for(n, outer, [&](std::size_t i) {
    try {
      ExperimentConfig cfg = base;
      cfg.temperature = temperatures[i];
      G2PipelineOptions popts;
      popts.tau_max = opts.tau_max;
      const G2Run run = run_g2_pipeline(cfg, inner, popts);
      G2FitOptions fopts;
      fopts.free_baseline = opts.free_baseline;
      const G2Fit fit = fit_g2(run.g2, initial_guess(run.g2), fopts);
      if (!fit.converged) throw FitError("fit did not converge");
      res.gammas[i] = fit.params.gamma;
      res.gamma_stderrs[i] = fit.stderrs.gamma;
    } catch (const Error& e) {
      res.errors[i] = e.what();
    }
  });
  return res;
}

struct PowerSweepResult {
  std::vector<double> powers;  // p_w1, mW
  std::vector<double> beats;   // measured |dnu|, MHz; NaN where the point failed
  std::vector<std::string> errors;
  std::optional<LinearFit> fit;  // over the successful points
};

// Varies the first write power, measures the beat frequency from the average
// beat period of the simulated traces, and regresses beat on power.
inline PowerSweepResult sweep_power(const ExperimentConfig& base, std::span<const double> powers,
                                    const SweepOptions& opts = {}) {
  if (powers.empty()) throw FitError("power grid is empty");
  base.validate();
  const std::size_t n = powers.size();
  PowerSweepResult res;
  res.powers.assign(powers.begin(), powers.end());
  res.beats.assign(n, std::numeric_limits<double>::quiet_NaN());
  res.errors.assign(n, {});
  const unsigned outer = std::min<unsigned>(resolve_jobs(opts.jobs), static_cast<unsigned>(n));
  const unsigned inner = std::max(1u, resolve_jobs(opts.jobs) / std::max(1u, outer));
  parallel_for(n, outer, [&](std::size_t i) {
    try {
      ExperimentConfig cfg = base;
      cfg.pair.p_w1 = powers[i];
      const Ensemble ens = simulate_ensemble(cfg, inner);
      const MeanTrace mean = ensemble_mean(ens);
      res.beats[i] = 1.0 / average_beat_period(ens.traces, mean, 200, inner);
    } catch (const Error& e) {
      res.errors[i] = e.what();
    }
  });
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < n; ++i)
    if (res.errors[i].empty()) xs.push_back(res.powers[i]), ys.push_back(res.beats[i]);
  if (xs.size() >= 2) {
    try {
      res.fit = fit_power_law(xs, ys);
    } catch (const FitError&) {
    }
  }
  return res;
}

}  // namespace beatsim
