#pragma once

// Closed-form beat and correlation formulas for two independent pulsed
// sources. Units throughout: time in microseconds, frequency in MHz, rates in
// inverse microseconds, optical power in mW. MHz * us = 1, so every phase
// argument 2*pi*nu*t needs no conversion factor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "beatsim/error.hpp"
#include "beatsim/numeric.hpp"

namespace beatsim {

// Two sources and the write powers that set their relative AC-Stark shift.
struct FieldPair {
  double i1 = 1.0;      // mean intensity of source 1, detector units
  double i2 = 1.0;      // mean intensity of source 2, detector units
  double kappa1 = 2.0;  // MHz per mW
  double kappa2 = 1.0;  // MHz per mW
  double p_w1 = 0.505;  // mW
  double p_w2 = 0.24;   // mW

  void validate() const {
    auto check = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError(std::string(name) + " must be finite and nonnegative", name);
    };
    check(i1, "i1");
    check(i2, "i2");
    check(kappa1, "kappa1");
    check(kappa2, "kappa2");
    check(p_w1, "p_w1");
    check(p_w2, "p_w2");
  }

  friend bool operator==(const FieldPair&, const FieldPair&) = default;
};

// Signed beat frequency in MHz. The observable beat is its magnitude.
inline double beat_frequency(const FieldPair& pair) {
  return pair.kappa1 * pair.p_w1 - pair.kappa2 * pair.p_w2;
}

inline double observable_beat(const FieldPair& pair) { return std::abs(beat_frequency(pair)); }

// Common temporal profile U(t) of both sources, peak-normalized to 1.
//
// The parametric form is U(t) = (t/t_rise)^a * exp(a (1 - t/t_rise)) with
// a = t_rise / t_decay, i.e. t^a exp(-t/t_decay) scaled so the maximum at
// t = t_rise is exactly 1. With t_rise == t_decay this reduces to
// (t/t_rise) exp(1 - t/t_rise). Its domain is t >= 0.
//
// A tabulated envelope is linearly interpolated on a uniform grid and
// rescaled so its largest sample is 1.
class Envelope {
 public:
  enum class Kind { parametric, tabulated };

  static Envelope parametric(double t_rise, double t_decay) {
    if (!(t_rise > 0.0) || !std::isfinite(t_rise)) throw ConfigError("t_rise must be positive", "t_rise");
    if (!(t_decay > 0.0) || !std::isfinite(t_decay)) throw ConfigError("t_decay must be positive", "t_decay");
    Envelope e;
    e.kind_ = Kind::parametric;
    e.t_rise_ = t_rise;
    e.t_decay_ = t_decay;
    return e;
  }

  static Envelope tabulated(double t0, double dt, std::vector<double> samples) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("envelope_dt must be positive", "envelope_dt");
    if (!std::isfinite(t0)) throw ConfigError("envelope_t0 must be finite", "envelope_t0");
    if (samples.size() < 2) throw ConfigError("tabulated envelope needs at least 2 samples", "envelope_samples");
    double peak = 0.0;
    for (double v : samples) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError("envelope samples must be finite and nonnegative", "envelope_samples");
      peak = std::max(peak, v);
    }
    if (!(peak > 0.0)) throw ConfigError("envelope samples are all zero", "envelope_samples");
    for (double& v : samples) v /= peak;
    Envelope e;
    e.kind_ = Kind::tabulated;
    e.t0_ = t0;
    e.dt_ = dt;
    e.samples_ = std::move(samples);
    return e;
  }

  // U == 1 on [0, duration].
  static Envelope flat(double duration) { return tabulated(0.0, duration, {1.0, 1.0}); }

  Kind kind() const noexcept { return kind_; }
  double t_rise() const noexcept { return t_rise_; }
  double t_decay() const noexcept { return t_decay_; }
  double t0() const noexcept { return t0_; }
  double dt() const noexcept { return dt_; }
  const std::vector<double>& samples() const noexcept { return samples_; }

  double domain_begin() const noexcept { return kind_ == Kind::parametric ? 0.0 : t0_; }
  double domain_end() const noexcept {
    return kind_ == Kind::parametric ? INFINITY : t0_ + dt_ * static_cast<double>(samples_.size() - 1);
  }

  bool contains(double t) const noexcept {
    if (kind_ == Kind::parametric) return t >= 0.0 && std::isfinite(t);
    const double slack = 1e-9 * dt_;
    return t >= t0_ - slack && t <= domain_end() + slack;
  }

  // Time of the maximum.
  double peak_time() const {
    if (kind_ == Kind::parametric) return t_rise_;
    auto it = std::max_element(samples_.begin(), samples_.end());
    return t0_ + dt_ * static_cast<double>(it - samples_.begin());
  }

  double operator()(double t) const {
    if (!contains(t)) throw DomainError("time " + format_double(t) + " us is outside the envelope domain");
    if (kind_ == Kind::parametric) {
      if (t <= 0.0) return 0.0;
      const double a = t_rise_ / t_decay_;
      const double x = t / t_rise_;
      return std::exp(a * (std::log(x) + 1.0 - x));
    }
    const double u = std::clamp((t - t0_) / dt_, 0.0, static_cast<double>(samples_.size() - 1));
    const auto k = std::min(static_cast<std::size_t>(u), samples_.size() - 2);
    const double frac = u - static_cast<double>(k);
    return samples_[k] + frac * (samples_[k + 1] - samples_[k]);
  }

  friend bool operator==(const Envelope&, const Envelope&) = default;

 private:
  Envelope() = default;

  Kind kind_ = Kind::parametric;
  double t_rise_ = 1.0;
  double t_decay_ = 1.0;
  double t0_ = 0.0;
  double dt_ = 1.0;
  std::vector<double> samples_;
};

// Parameters of the dephased two-photon beat 1 + V exp(-gamma tau) cos(2 pi dnu tau).
struct G2Params {
  double v = 0.0;         // visibility
  double gamma = 0.0;     // dephasing rate, 1/us
  double delta_nu = 0.0;  // beat frequency magnitude, MHz

  friend bool operator==(const G2Params&, const G2Params&) = default;
};

// Detector intensity of one realization with phase difference `delta_phi`.
inline double beat_intensity(double t, const Envelope& env, const FieldPair& pair, double delta_phi) {
  const double u = env(t);
  const double nu = beat_frequency(pair);
  const double inner = pair.i1 + pair.i2 + 2.0 * std::sqrt(pair.i1 * pair.i2) * std::cos(kTwoPi * nu * t + delta_phi);
  return std::max(0.0, u * inner);
}

// Two-photon visibility 2 I1 I2 / (I1 + I2)^2, in [0, 1/2].
inline double visibility(double i1, double i2) {
  const double s = i1 + i2;
  if (!(s > 0.0)) throw DomainError("visibility is undefined when both intensities are zero");
  return 2.0 * i1 * i2 / (s * s);
}

inline double dephasing_factor(double gamma, double tau) { return std::exp(-gamma * tau); }

inline double g2_model(double tau, const G2Params& p) {
  return 1.0 + p.v * std::exp(-p.gamma * tau) * std::cos(kTwoPi * p.delta_nu * tau);
}

// Unnormalized two-time correlation <I(t_p) I(t_p + tau)> over random phases,
// given the envelope values at both times.
inline double gamma2_model(double tau, double u_tp, double u_tp_tau, const FieldPair& pair, double gamma) {
  const double s = pair.i1 + pair.i2;
  const double nu = beat_frequency(pair);
  return u_tp * u_tp_tau *
         (s * s + 2.0 * pair.i1 * pair.i2 * std::exp(-gamma * tau) * std::cos(kTwoPi * nu * tau));
}

// Ensemble-mean intensity U(t) (I1 + I2).
inline double mean_intensity(double u_t, const FieldPair& pair) { return u_t * (pair.i1 + pair.i2); }

}  // namespace beatsim
