#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "beatsim/error.hpp"
#include "beatsim/model.hpp"
#include "beatsim/numeric.hpp"
#include "beatsim/parallel.hpp"
#include "beatsim/rng.hpp"

namespace beatsim {

enum class AmplitudeMode { coherent, thermal };

inline const char* to_string(AmplitudeMode m) { return m == AmplitudeMode::coherent ? "coherent" : "thermal"; }

// Uniform time grid t_k = t0 + k dt, k in [0, size).
struct TimeGrid {
  double t0 = 0.0;
  double dt = 0.01;
  std::size_t size = 0;

  double time(std::size_t k) const noexcept { return t0 + dt * static_cast<double>(k); }
};

// Dephasing rate as a function of cell temperature: gamma_ref sqrt(T / T_ref),
// following the thermal speed of the atoms.
inline double gamma_temperature_model(double temperature, double gamma_ref, double t_ref) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  if (!(t_ref > 0.0)) throw DomainError("reference temperature must be positive");
  return gamma_ref * std::sqrt(temperature / t_ref);
}

// Complete recipe for one ensemble run.
struct ExperimentConfig {
  double duration = 20.0;  // us; write pulse length
  double dt = 0.01;        // us
  FieldPair pair{};
  Envelope envelope = Envelope::parametric(3.0, 4.0);
  AmplitudeMode amplitude_mode = AmplitudeMode::coherent;
  double gamma = 0.63;     // 1/us; at reference_temperature when temperature is set
  double noise_rms = 0.0;  // detector units
  std::uint64_t n_pulses = 2000;
  std::uint64_t master_seed = 1;
  std::optional<double> temperature;   // K
  double reference_temperature = 350;  // K

  std::size_t sample_count() const {
    const double ratio = duration / dt;
    const double n = std::round(ratio);
    if (!std::isfinite(ratio) || std::abs(ratio - n) > 1e-9 * std::max(1.0, n))
      throw ConfigError("duration / dt must be an integer", "dt");
    return static_cast<std::size_t>(n);
  }

  TimeGrid grid() const { return TimeGrid{0.0, dt, sample_count()}; }

  // Rate actually injected into the phase diffusion.
  double effective_gamma() const {
    if (temperature) return gamma_temperature_model(*temperature, gamma, reference_temperature);
    return gamma;
  }

  void validate() const {
    if (!(duration > 0.0) || !std::isfinite(duration)) throw ConfigError("duration must be positive", "duration");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive", "dt");
    if (sample_count() < 16) throw ConfigError("duration / dt must give at least 16 samples", "dt");
    pair.validate();
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be nonnegative", "gamma");
    if (!(noise_rms >= 0.0) || !std::isfinite(noise_rms))
      throw ConfigError("noise_rms must be nonnegative", "noise_rms");
    if (n_pulses < 1) throw ConfigError("n_pulses must be at least 1", "n_pulses");
    if (temperature && !(*temperature > 0.0)) throw ConfigError("temperature must be positive", "temperature");
    if (!(reference_temperature > 0.0))
      throw ConfigError("reference_temperature must be positive", "reference_temperature");
    const double last = dt * static_cast<double>(sample_count() - 1);
    if (!envelope.contains(0.0) || !envelope.contains(last))
      throw ConfigError("envelope does not cover the pulse window", "envelope");
    if (envelope.kind() == Envelope::Kind::parametric && envelope.t_rise() > last)
      throw ConfigError("t_rise must lie inside the pulse window", "t_rise");
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Ground truth of one realization, kept for oracle tests.
struct PhaseTruth {
  double initial_phase = 0.0;  // rad, phase difference at t = 0
  double i1 = 0.0;             // realized intensities
  double i2 = 0.0;

  friend bool operator==(const PhaseTruth&, const PhaseTruth&) = default;
};

// Sampled detector intensity of one pulse. t = 0 is the write switch-on.
struct PulseTrace {
  std::uint64_t index = 0;
  double t0 = 0.0;
  double dt = 0.01;
  std::vector<double> samples;
  std::optional<PhaseTruth> truth;

  double time(std::size_t k) const noexcept { return t0 + dt * static_cast<double>(k); }
  TimeGrid grid() const noexcept { return TimeGrid{t0, dt, samples.size()}; }

  friend bool operator==(const PulseTrace&, const PulseTrace&) = default;
};

struct Ensemble {
  ExperimentConfig config;
  std::vector<PulseTrace> traces;
};

inline double sample_initial_phase(RngStream& stream) {
  static const double below_two_pi = std::nextafter(kTwoPi, 0.0);
  return std::min(kTwoPi * stream.uniform(), below_two_pi);
}

// Wiener phase path on `grid`: path[0] = initial and independent Gaussian
// increments of variance 2 gamma dt, so <exp(i (phi(t + tau) - phi(t)))> =
// exp(-gamma tau) exactly for every lag on the grid.
inline std::vector<double> sample_phase_path(RngStream& stream, double gamma, double initial, const TimeGrid& grid) {
  if (!(gamma >= 0.0)) throw DomainError("gamma must be nonnegative");
  std::vector<double> path(grid.size, initial);
  if (gamma == 0.0 || grid.size == 0) return path;
  const double step = std::sqrt(2.0 * gamma * grid.dt);
  double phi = initial;
  for (std::size_t k = 1; k < grid.size; ++k) {
    phi += step * stream.normal();
    path[k] = phi;
  }
  return path;
}

// Per-pulse intensities: fixed in coherent mode, independent exponential
// draws in thermal mode.
inline std::pair<double, double> sample_intensities(RngStream& stream, AmplitudeMode mode, double mean1,
                                                    double mean2) {
  if (!(mean1 >= 0.0) || !(mean2 >= 0.0)) throw DomainError("mean intensities must be nonnegative");
  if (mode == AmplitudeMode::coherent) return {mean1, mean2};
  const double a = stream.exponential(mean1);
  const double b = stream.exponential(mean2);
  return {a, b};
}

// Generates individual realizations of a configuration. Construction
// precomputes the envelope on the sample grid; operator() is const and
// thread-safe.
class TraceSynthesizer {
 public:
  explicit TraceSynthesizer(ExperimentConfig config) : config_(std::move(config)) {
    config_.validate();
    grid_ = config_.grid();
    envelope_.resize(grid_.size);
    for (std::size_t k = 0; k < grid_.size; ++k) envelope_[k] = config_.envelope(grid_.time(k));
    beat_ = observable_beat(config_.pair);
    gamma_ = config_.effective_gamma();
  }

  const ExperimentConfig& config() const noexcept { return config_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  std::span<const double> envelope_samples() const noexcept { return envelope_; }

  PulseTrace operator()(std::uint64_t index) const {
    const auto seed = config_.master_seed;
    RngStream phase_stream = RngStream::derive(seed, index, StreamPurpose::initial_phase);
    const double phi0 = sample_initial_phase(phase_stream);

    double i1 = config_.pair.i1;
    double i2 = config_.pair.i2;
    if (config_.amplitude_mode == AmplitudeMode::thermal) {
      RngStream intensity_stream = RngStream::derive(seed, index, StreamPurpose::intensity);
      std::tie(i1, i2) = sample_intensities(intensity_stream, config_.amplitude_mode, i1, i2);
    }

    std::vector<double> phase;
    if (gamma_ > 0.0) {
      RngStream diffusion_stream = RngStream::derive(seed, index, StreamPurpose::diffusion);
      phase = sample_phase_path(diffusion_stream, gamma_, phi0, grid_);
    }

    PulseTrace trace;
    trace.index = index;
    trace.t0 = grid_.t0;
    trace.dt = grid_.dt;
    trace.samples.resize(grid_.size);
    const double dc = i1 + i2;
    const double ac = 2.0 * std::sqrt(i1 * i2);
    const double omega = kTwoPi * beat_;
    if (gamma_ == 0.0) {
      // Constant phase: rotate a unit phasor by omega dt per sample,
      // re-anchored exactly every 64 samples.
      const std::complex<double> step = std::polar(1.0, omega * grid_.dt);
      std::complex<double> z;
      for (std::size_t k = 0; k < grid_.size; ++k) {
        z = (k % 64 == 0) ? std::polar(1.0, omega * grid_.time(k) + phi0) : z * step;
        trace.samples[k] = std::max(0.0, envelope_[k] * (dc + ac * z.real()));
      }
    } else {
      for (std::size_t k = 0; k < grid_.size; ++k)
        trace.samples[k] = std::max(0.0, envelope_[k] * (dc + ac * std::cos(omega * grid_.time(k) + phase[k])));
    }

    if (config_.noise_rms > 0.0) {
      RngStream noise_stream = RngStream::derive(seed, index, StreamPurpose::detector_noise);
      for (double& s : trace.samples) s = std::max(0.0, s + config_.noise_rms * noise_stream.normal());
    }
    trace.truth = PhaseTruth{phi0, i1, i2};
    return trace;
  }

 private:
  ExperimentConfig config_;
  TimeGrid grid_;
  std::vector<double> envelope_;
  double beat_ = 0.0;
  double gamma_ = 0.0;
};

inline PulseTrace synthesize_trace(const ExperimentConfig& config, std::uint64_t index) {
  return TraceSynthesizer(config)(index);
}

// Streams the ensemble in consecutive blocks of at most `block_size` traces.
// Traces inside a block are generated on up to `jobs` threads; blocks are
// delivered to `visit` in index order, so any reduction done in `visit` sees
// the same sequence regardless of `jobs`.
inline void for_each_block(const ExperimentConfig& config, unsigned jobs, std::size_t block_size,
                           const std::function<void(std::span<const PulseTrace>)>& visit) {
  const TraceSynthesizer synth(config);
  block_size = std::max<std::size_t>(block_size, 1);
  std::vector<PulseTrace> block;
  for (std::uint64_t begin = 0; begin < config.n_pulses; begin += block_size) {
    const std::size_t count = static_cast<std::size_t>(std::min<std::uint64_t>(block_size, config.n_pulses - begin));
    block.assign(count, PulseTrace{});
    parallel_for(count, jobs, [&](std::size_t i) { block[i] = synth(begin + i); });
    visit(block);
  }
}

inline Ensemble simulate_ensemble(const ExperimentConfig& config, unsigned jobs = 1) {
  const TraceSynthesizer synth(config);
  Ensemble ens;
  ens.config = config;
  ens.traces.resize(static_cast<std::size_t>(config.n_pulses));
  parallel_for(ens.traces.size(), jobs, [&](std::size_t i) { ens.traces[i] = synth(i); });
  return ens;
}

}  // namespace beatsim
