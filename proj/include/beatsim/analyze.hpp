#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "beatsim/error.hpp"
#include "beatsim/model.hpp"
#include "beatsim/numeric.hpp"
#include "beatsim/parallel.hpp"
#include "beatsim/simulate.hpp"

namespace beatsim {

// Pointwise ensemble average <I(t)>.
struct MeanTrace {
  double t0 = 0.0;
  double dt = 0.01;
  std::vector<double> samples;
  std::uint64_t n_pulses = 0;

  double time(std::size_t k) const noexcept { return t0 + dt * static_cast<double>(k); }
  TimeGrid grid() const noexcept { return TimeGrid{t0, dt, samples.size()}; }
};

struct G2Estimate {
  double t_p = 0.0;                 // reference time, us (on the sample grid)
  std::vector<double> taus;         // us
  std::vector<double> gamma2_raw;   // <I(t_p) I(t_p + tau)>
  std::vector<double> g2;           // gamma2_raw / (<I(t_p)> <I(t_p + tau)>)
  std::uint64_t n_pulses = 0;
};

struct PhaseSample {
  std::uint64_t index = 0;
  double delta_t = 0.0;  // us, first beat maximum after switch-on
  double period = 0.0;   // us
  double phase = 0.0;    // rad in [0, 2 pi)
};

struct HistogramResult {
  std::vector<double> edges;  // n_bins + 1 edges over [0, 2 pi]
  std::vector<std::uint64_t> counts;
  double chi_square = 0.0;
  int dof = 0;
  double p_value = 1.0;  // upper-tail probability under the uniform null
};

namespace detail {

inline bool same_grid(const TimeGrid& a, const TimeGrid& b) {
  return a.size == b.size && std::abs(a.t0 - b.t0) <= 1e-12 * std::max(1.0, std::abs(a.t0)) &&
         std::abs(a.dt - b.dt) <= 1e-12 * a.dt;
}

inline std::size_t grid_index(const TimeGrid& g, double t, const char* what) {
  const double u = (t - g.t0) / g.dt;
  const double k = std::round(u);
  if (!std::isfinite(u) || k < 0.0 || k > static_cast<double>(g.size) - 1.0)
    throw EstimationError(std::string(what) + " " + format_double(t) + " us is outside the pulse window");
  return static_cast<std::size_t>(k);
}

}  // namespace detail

class MeanAccumulator {
 public:
  explicit MeanAccumulator(TimeGrid grid) : grid_(grid), sum_(grid.size) {}

  void add(const PulseTrace& trace) {
    if (!detail::same_grid(grid_, trace.grid())) throw EstimationError("trace grid does not match the ensemble grid");
    sum_.add(trace.samples);
  }

  std::uint64_t count() const noexcept { return sum_.count(); }

  MeanTrace result() const {
    if (sum_.count() == 0) throw EstimationError("empty ensemble");
    MeanTrace mt{grid_.t0, grid_.dt, sum_.sum(), sum_.count()};
    const double n = static_cast<double>(sum_.count());
    for (double& v : mt.samples) v /= n;
    return mt;
  }

 private:
  TimeGrid grid_;
  PairwiseAccumulator sum_;
};

inline MeanTrace ensemble_mean(std::span<const PulseTrace> traces) {
  if (traces.empty()) throw EstimationError("empty ensemble");
  MeanAccumulator acc(traces.front().grid());
  for (const auto& t : traces) acc.add(t);
  return acc.result();
}

inline MeanTrace ensemble_mean(const Ensemble& ens) { return ensemble_mean(ens.traces); }

// Closed-form <I(t)> = U(t) (I1 + I2) on the configuration's grid.
inline MeanTrace model_mean_trace(const ExperimentConfig& config) {
  const TimeGrid g = config.grid();
  MeanTrace mt{g.t0, g.dt, std::vector<double>(g.size), 0};
  for (std::size_t k = 0; k < g.size; ++k) mt.samples[k] = mean_intensity(config.envelope(g.time(k)), config.pair);
  return mt;
}

// Time of the global maximum (earliest among ties), refined by a parabola
// through the maximum and its two neighbours.
inline double find_peak(const MeanTrace& mt) {
  const auto& y = mt.samples;
  if (y.empty()) throw EstimationError("empty mean trace");
  std::size_t best = 0;
  for (std::size_t k = 1; k < y.size(); ++k)
    if (y[k] > y[best]) best = k;
  if (!(y[best] > 0.0)) throw EstimationError("mean trace is identically zero");
  double offset = 0.0;
  if (best > 0 && best + 1 < y.size()) {
    const double denom = y[best - 1] - 2.0 * y[best] + y[best + 1];
    if (denom < 0.0) offset = std::clamp(0.5 * (y[best - 1] - y[best + 1]) / denom, -0.5, 0.5);
  }
  return mt.time(best) + offset * mt.dt;
}

// Delays 0, dt, 2 dt, ... up to min(5 / gamma_guess, window end - t_p).
inline std::vector<double> default_tau_grid(const MeanTrace& mt, double t_p, double gamma_guess = 0.0,
                                            double tau_max = std::numeric_limits<double>::infinity()) {
  const TimeGrid g = mt.grid();
  const std::size_t p = detail::grid_index(g, t_p, "reference time");
  double limit = g.time(g.size - 1) - g.time(p);
  if (gamma_guess > 0.0) limit = std::min(limit, 5.0 / gamma_guess);
  limit = std::min(limit, tau_max);
  const auto steps = static_cast<std::size_t>(std::floor(limit / g.dt + 1e-9));
  std::vector<double> taus(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) taus[k] = g.dt * static_cast<double>(k);
  return taus;
}

// Streaming two-time correlation at a fixed reference time. Delays are
// snapped to the sample grid. Per-trace products are summed pairwise.
class G2Accumulator {
 public:
  G2Accumulator(TimeGrid grid, double t_p, std::span<const double> taus, double floor_fraction = 1e-6)
      : grid_(grid), floor_fraction_(floor_fraction) {
    if (taus.empty()) throw EstimationError("no delays requested");
    ref_ = detail::grid_index(grid_, t_p, "reference time");
    lags_.reserve(taus.size());
    for (double tau : taus) {
      if (!(tau >= 0.0)) throw EstimationError("delays must be nonnegative");
      const std::size_t k = detail::grid_index(grid_, grid_.time(ref_) + tau, "delayed time");
      lags_.push_back(k - ref_);
    }
    sum_ = PairwiseAccumulator(2 * lags_.size() + 1);
    row_.resize(sum_.width());
  }

  void add(const PulseTrace& trace) {
    if (!detail::same_grid(grid_, trace.grid())) throw EstimationError("trace grid does not match the ensemble grid");
    const auto& x = trace.samples;
    const double a = x[ref_];
    const std::size_t m = lags_.size();
    for (std::size_t k = 0; k < m; ++k) {
      const double b = x[ref_ + lags_[k]];
      row_[k] = a * b;
      row_[m + k] = b;
    }
    row_[2 * m] = a;
    sum_.add(row_);
  }

  G2Estimate finish() const {
    const std::uint64_t n = sum_.count();
    if (n == 0) throw EstimationError("empty ensemble");
    const auto s = sum_.sum();
    const std::size_t m = lags_.size();
    const double inv = 1.0 / static_cast<double>(n);
    const double mean_ref = s[2 * m] * inv;
    double peak = mean_ref;
    for (std::size_t k = 0; k < m; ++k) peak = std::max(peak, s[m + k] * inv);
    const double floor = floor_fraction_ * peak;
    if (!(mean_ref > floor)) throw EstimationError("mean intensity at the reference time is below the normalization floor");

    G2Estimate est;
    est.t_p = grid_.time(ref_);
    est.n_pulses = n;
    for (std::size_t k = 0; k < m; ++k) {
      const double mean_lag = s[m + k] * inv;
      if (!(mean_lag > floor)) continue;
      const double raw = s[k] * inv;
      est.taus.push_back(grid_.dt * static_cast<double>(lags_[k]));
      est.gamma2_raw.push_back(raw);
      est.g2.push_back(raw / (mean_ref * mean_lag));
    }
    if (est.taus.empty()) throw EstimationError("every delay falls below the normalization floor");
    return est;
  }

 private:
  TimeGrid grid_;
  double floor_fraction_;
  std::size_t ref_ = 0;
  std::vector<std::size_t> lags_;
  PairwiseAccumulator sum_;
  std::vector<double> row_;
};

inline G2Estimate estimate_g2(std::span<const PulseTrace> traces, double t_p, std::span<const double> taus,
                              double floor_fraction = 1e-6) {
  if (traces.empty()) throw EstimationError("empty ensemble");
  G2Accumulator acc(traces.front().grid(), t_p, taus, floor_fraction);
  for (const auto& t : traces) acc.add(t);
  return acc.finish();
}

inline G2Estimate estimate_g2(const Ensemble& ens, double t_p, std::span<const double> taus,
                              double floor_fraction = 1e-6) {
  return estimate_g2(ens.traces, t_p, taus, floor_fraction);
}

// Relative oscillation x / normalizer - 1, mean-subtracted. Samples whose
// normalizer is below `floor_fraction` of its maximum are set to zero.
inline std::vector<double> normalized_oscillation(std::span<const double> x, std::span<const double> normalizer,
                                                  double floor_fraction = 1e-2) {
  if (x.size() != normalizer.size()) throw EstimationError("trace and normalizer lengths differ");
  const double peak = normalizer.empty() ? 0.0 : *std::max_element(normalizer.begin(), normalizer.end());
  if (!(peak > 0.0)) throw EstimationError("normalizer is identically zero");
  const double floor = floor_fraction * peak;
  std::vector<double> r(x.size(), 0.0);
  std::vector<char> valid(x.size(), 0);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (normalizer[k] >= floor) {
      r[k] = x[k] / normalizer[k] - 1.0;
      valid[k] = 1;
      sum += r[k];
      ++count;
    }
  }
  if (count == 0) throw EstimationError("normalizer is below the floor everywhere");
  const double mean = sum / static_cast<double>(count);
  for (std::size_t k = 0; k < x.size(); ++k) r[k] = valid[k] ? r[k] - mean : 0.0;
  return r;
}

namespace detail {

// `scale` is the magnitude against which an oscillation counts as absent.
inline double period_from_spectrum(std::span<const double> x, double dt, double scale) {
  if (x.empty()) throw EstimationError("empty trace");
  const double mean = pairwise_sum(x) / static_cast<double>(x.size());
  double ac = 0.0;
  for (double v : x) ac += (v - mean) * (v - mean);
  if (!(std::sqrt(ac / static_cast<double>(x.size())) > 1e-9 * scale))
    throw EstimationError("trace carries no oscillation");
  const double window = dt * static_cast<double>(x.size());
  const auto peak = dominant_frequency(x, dt, 2.0 / window);
  if (!peak) throw EstimationError("no spectral peak above the noise floor");
  return 1.0 / peak->frequency;
}

}  // namespace detail

// Beat period from the dominant nonzero spectral line of the mean-subtracted
// trace. Use the overload taking a normalizer when the trace carries a pulse
// envelope.
inline double beat_period(const PulseTrace& trace) {
  double ms = 0.0;
  for (double v : trace.samples) ms += v * v;
  const double scale = trace.samples.empty() ? 0.0 : std::sqrt(ms / static_cast<double>(trace.samples.size()));
  return detail::period_from_spectrum(trace.samples, trace.dt, scale);
}

inline double beat_period(const PulseTrace& trace, const MeanTrace& normalizer) {
  if (!detail::same_grid(trace.grid(), normalizer.grid())) throw EstimationError("normalizer grid mismatch");
  const auto r = normalized_oscillation(trace.samples, normalizer.samples);
  return detail::period_from_spectrum(r, trace.dt, 1.0);
}

// Phase 2 pi dt/T of the first beat maximum after switch-on. A maximum must
// be the largest normalized value within a quarter period on either side;
// maxima inside the first `transient_fraction` of the window are ignored.
inline PhaseSample extract_phase(const PulseTrace& trace, double period, const MeanTrace& normalizer,
                                 double transient_fraction = 0.02) {
  if (!(period > 0.0)) throw EstimationError("period must be positive");
  if (!detail::same_grid(trace.grid(), normalizer.grid())) throw EstimationError("normalizer grid mismatch");
  const auto r = normalized_oscillation(trace.samples, normalizer.samples);
  const std::size_t n = r.size();
  const std::size_t skip = static_cast<std::size_t>(std::ceil(transient_fraction * static_cast<double>(n)));
  const std::size_t q = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.25 * period / trace.dt)));

  int found = 0;
  for (std::size_t k = std::max<std::size_t>(skip, 1); k + 1 < n && found < 2; ++k) {
    if (!(r[k] > 0.0) || !(r[k] > r[k - 1]) || r[k] < r[k + 1]) continue;
    const std::size_t lo = k >= q ? k - q : 0;
    const std::size_t hi = std::min(n - 1, k + q);
    bool dominant = true;
    for (std::size_t j = lo; j <= hi && dominant; ++j) dominant = r[j] <= r[k];
    if (!dominant) continue;
    ++found;
    k = hi;
  }
  if (found < 2) throw EstimationError("trace shows fewer than two beat maxima");

  // First maximum of the sinusoid fitted over one period after the transient.
  const std::size_t span = static_cast<std::size_t>(std::lround(period / trace.dt));
  if (span < 4 || skip + span > n) throw EstimationError("trace shorter than one beat period");
  const double w = kTwoPi / period;
  double re = 0.0, im = 0.0;
  for (std::size_t k = skip; k < skip + span; ++k) {
    const double t = trace.time(k);
    re += r[k] * std::cos(w * t);
    im -= r[k] * std::sin(w * t);
  }
  if (re == 0.0 && im == 0.0) throw EstimationError("no oscillation in the first beat period");
  const double t_start = trace.time(skip);
  double first = std::fmod(-std::atan2(im, re), kTwoPi) / w;
  if (first < 0.0) first += period;
  first += std::ceil((t_start - first) / period) * period;
  if (first < t_start) first += period;

  PhaseSample s;
  s.index = trace.index;
  s.delta_t = first;
  s.period = period;
  double phase = std::fmod(kTwoPi * s.delta_t / period, kTwoPi);
  if (phase < 0.0) phase += kTwoPi;
  if (phase >= kTwoPi) phase = 0.0;
  s.phase = phase;
  return s;
}

// Phase that extract_phase reports for a noiseless trace whose phase
// difference at t = 0 is `initial_phase`: the first maximum sits where
// 2 pi dnu t + initial_phase = 0 (mod 2 pi), so the result is -initial_phase
// wrapped to [0, 2 pi).
inline double first_maximum_phase(double initial_phase) {
  double p = std::fmod(-initial_phase, kTwoPi);
  if (p < 0.0) p += kTwoPi;
  return p >= kTwoPi ? 0.0 : p;
}

// Mean per-trace beat period over at most `max_traces` evenly spaced traces.
inline double average_beat_period(std::span<const PulseTrace> traces, const MeanTrace& normalizer,
                                  std::size_t max_traces = 200, unsigned jobs = 1) {
  if (traces.empty()) throw EstimationError("empty ensemble");
  const std::size_t m = std::min(max_traces, traces.size());
  std::vector<double> periods(m, std::numeric_limits<double>::quiet_NaN());
  parallel_for(m, jobs, [&](std::size_t i) {
    try {
      periods[i] = beat_period(traces[i * traces.size() / m], normalizer);
    } catch (const EstimationError&) {
    }
  });
  double sum = 0.0;
  std::size_t ok = 0;
  for (double p : periods)
    if (std::isfinite(p)) sum += p, ++ok;
  if (ok == 0) throw EstimationError("no trace yields a beat period");
  return sum / static_cast<double>(ok);
}

enum class PeriodSource { average, per_trace, configured };

struct PhaseExtraction {
  std::vector<PhaseSample> phases;
  std::vector<std::uint64_t> failed;  // indices where extraction failed
};

inline PhaseExtraction extract_phases(std::span<const PulseTrace> traces, const MeanTrace& normalizer,
                                      PeriodSource source, double configured_period = 0.0, unsigned jobs = 1) {
  double common = configured_period;
  if (source == PeriodSource::average) common = average_beat_period(traces, normalizer, 200, jobs);
  if (source != PeriodSource::per_trace && !(common > 0.0)) throw EstimationError("no usable beat period");

  std::vector<std::optional<PhaseSample>> out(traces.size());
  parallel_for(traces.size(), jobs, [&](std::size_t i) {
    try {
      const double T = source == PeriodSource::per_trace ? beat_period(traces[i], normalizer) : common;
      out[i] = extract_phase(traces[i], T, normalizer);
    } catch (const EstimationError&) {
    }
  });
  PhaseExtraction result;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i])
      result.phases.push_back(*out[i]);
    else
      result.failed.push_back(traces[i].index);
  }
  return result;
}

inline double chi_square_critical(int dof, double significance) {
  boost::math::chi_squared dist(dof);
  return boost::math::quantile(boost::math::complement(dist, significance));
}

// Equal-width histogram on [0, 2 pi) with a chi-square test against the
// uniform distribution (n_bins - 1 degrees of freedom).
inline HistogramResult phase_histogram(std::span<const double> phases, int n_bins) {
  if (phases.empty()) throw EstimationError("no phases to histogram");
  if (n_bins < 4) throw EstimationError("need at least 4 bins");
  HistogramResult h;
  h.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int b = 0; b <= n_bins; ++b) h.edges[static_cast<std::size_t>(b)] = kTwoPi * b / n_bins;
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (double p : phases) {
    double w = std::fmod(p, kTwoPi);
    if (w < 0.0) w += kTwoPi;
    auto b = static_cast<std::size_t>(w / kTwoPi * n_bins);
    h.counts[std::min(b, static_cast<std::size_t>(n_bins - 1))]++;
  }
  const double expected = static_cast<double>(phases.size()) / n_bins;
  for (auto c : h.counts) {
    const double d = static_cast<double>(c) - expected;
    h.chi_square += d * d / expected;
  }
  h.dof = n_bins - 1;
  boost::math::chi_squared dist(h.dof);
  h.p_value = boost::math::cdf(boost::math::complement(dist, h.chi_square));
  return h;
}

inline HistogramResult phase_histogram(std::span<const PhaseSample> samples, int n_bins) {
  std::vector<double> phases;
  phases.reserve(samples.size());
  for (const auto& s : samples) phases.push_back(s.phase);
  return phase_histogram(phases, n_bins);
}

// T-linear circular association: det(sum x y^T) / sqrt(det(sum x x^T)
// det(sum y y^T)) with x, y the unit vectors of the two angles. Equals +1
// when b = a + const, -1 when b = const - a.
inline double circular_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw EstimationError("circular_correlation needs equal nonempty inputs");
  double xy[2][2] = {}, xx[2][2] = {}, yy[2][2] = {};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x[2] = {std::cos(a[i]), std::sin(a[i])};
    const double y[2] = {std::cos(b[i]), std::sin(b[i])};
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) {
        xy[r][c] += x[r] * y[c];
        xx[r][c] += x[r] * x[c];
        yy[r][c] += y[r] * y[c];
      }
  }
  auto det = [](const double m[2][2]) { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; };
  const double denom = std::sqrt(det(xx) * det(yy));
  if (!(denom > 0.0)) throw EstimationError("circular_correlation: degenerate angles");
  return det(xy) / denom;
}

// Depth of the oscillation at `freq` relative to the local mean level.
// The local level is a one-period moving average; the residual is projected
// onto exp(-2 pi i f t) over an integer number of periods. A single trace
// with intensities I1, I2 gives about 2 sqrt(I1 I2) / (I1 + I2).
inline double modulation_depth(std::span<const double> x, double dt, double freq) {
  if (!(freq > 0.0) || !(dt > 0.0)) throw EstimationError("modulation_depth needs positive frequency and step");
  const auto period = static_cast<std::size_t>(std::lround(1.0 / (freq * dt)));
  if (period < 2 || 2 * period > x.size()) throw EstimationError("window too short for the requested frequency");
  const std::size_t half = period / 2;
  const std::size_t usable = ((x.size() - period) / period) * period;
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) prefix[k + 1] = prefix[k] + x[k];
  std::complex<double> z{0.0, 0.0};
  double level = 0.0;
  for (std::size_t j = 0; j < usable; ++j) {
    const std::size_t k = half + j;
    const double local = (prefix[k - half + period] - prefix[k - half]) / static_cast<double>(period);
    const double ang = -kTwoPi * freq * dt * static_cast<double>(k);
    z += (x[k] - local) * std::complex<double>(std::cos(ang), std::sin(ang));
    level += local;
  }
  if (!(level > 0.0)) throw EstimationError("mean level is zero");
  return 2.0 * std::abs(z) / level;
}

struct G2PipelineOptions {
  double gamma_guess = 0.0;  // only bounds the delay range (5 / gamma_guess)
  double tau_max = std::numeric_limits<double>::infinity();
  std::size_t block_size = 256;
};

struct G2Run {
  MeanTrace mean;
  double t_p = 0.0;
  G2Estimate g2;
};

// Mean trace, peak reference time and g2 for a configuration without holding
// the ensemble in memory: the realizations are generated twice, once for
// <I(t)> and once for the correlation at the located peak.
inline G2Run run_g2_pipeline(const ExperimentConfig& config, unsigned jobs = 1, const G2PipelineOptions& opts = {}) {
  G2Run run;
  MeanAccumulator mean_acc(config.grid());
  for_each_block(config, jobs, opts.block_size, [&](std::span<const PulseTrace> block) {
    for (const auto& t : block) mean_acc.add(t);
  });
  run.mean = mean_acc.result();
  run.t_p = find_peak(run.mean);
  const auto taus = default_tau_grid(run.mean, run.t_p, opts.gamma_guess, opts.tau_max);
  G2Accumulator g2_acc(config.grid(), run.t_p, taus);
  for_each_block(config, jobs, opts.block_size, [&](std::span<const PulseTrace> block) {
    for (const auto& t : block) g2_acc.add(t);
  });
  run.g2 = g2_acc.finish();
  return run;
}

}  // namespace beatsim
