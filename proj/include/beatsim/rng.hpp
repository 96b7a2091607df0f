#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace beatsim {

// What a stream is used for inside one realization. Each purpose gets its own
// independent stream, so changing how many draws one purpose consumes (e.g.
// switching dephasing off) leaves every other purpose's draws untouched.
enum class StreamPurpose : std::uint32_t {
  initial_phase = 1,
  intensity = 2,
  diffusion = 3,
  detector_noise = 4,
  user = 100,
};

// Deterministic random stream. The 64-bit seed of each (master seed,
// realization, purpose) triple is hashed through std::seed_seq, so any
// realization can be generated in isolation and in any order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  static RngStream derive(std::uint64_t master_seed, std::uint64_t index, StreamPurpose purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(purpose), 0x9e3779b9u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return RngStream((static_cast<std::uint64_t>(words[1]) << 32) | words[0]);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal, Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Exponential with the given mean; mean 0 yields 0.
  double exponential(double mean) { return -mean * std::log1p(-uniform()); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace beatsim
