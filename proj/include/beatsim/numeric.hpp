#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace beatsim {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

template <typename Int>
std::optional<Int> parse_integer(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Streaming pairwise (cascade) summation of fixed-width vectors. Partial sums
// are merged like a binary counter, so the result is a balanced-tree sum that
// depends only on the order of `add` calls.
class PairwiseAccumulator {
 public:
  explicit PairwiseAccumulator(std::size_t width = 0) : width_(width) {}

  std::size_t width() const noexcept { return width_; }
  std::size_t count() const noexcept { return count_; }

  void add(std::span<const double> values) {
    if (values.size() != width_) throw std::invalid_argument("PairwiseAccumulator: width mismatch");
    Partial p{0, std::vector<double>(values.begin(), values.end())};
    while (!stack_.empty() && stack_.back().level == p.level) {
      auto& top = stack_.back();
      for (std::size_t i = 0; i < width_; ++i) top.sum[i] += p.sum[i];
      p = Partial{top.level + 1, std::move(top.sum)};
      stack_.pop_back();
    }
    stack_.push_back(std::move(p));
    ++count_;
  }

  std::vector<double> sum() const {
    std::vector<double> out(width_, 0.0);
    // Smallest partials first.
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it)
      for (std::size_t i = 0; i < width_; ++i) out[i] += it->sum[i];
    return out;
  }

 private:
  struct Partial {
    int level;
    std::vector<double> sum;
  };
  std::size_t width_;
  std::size_t count_ = 0;
  std::vector<Partial> stack_;
};

inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

namespace detail {

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -kTwoPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

struct SpectralPeak {
  double frequency;  // cycles per unit of the sample spacing
  double magnitude;
  double noise_floor;  // median spectral magnitude over the searched band
};

// Dominant spectral line of a real sequence sampled at spacing `dt`.
//
// The input is mean-subtracted, Hann-windowed and zero-padded to at least
// `pad_factor` times its length. Bins below `min_freq` are skipped. The peak
// is refined by a three-point quadratic fit on log-magnitude, which is
// nearly unbiased for a Hann main lobe. Returns nullopt when the peak is not
// at least `min_snr` times the median magnitude of the band.
inline std::optional<SpectralPeak> dominant_frequency(std::span<const double> x, double dt,
                                                      double min_freq, double min_snr = 6.0,
                                                      std::size_t pad_factor = 4) {
  const std::size_t n = x.size();
  if (n < 4 || !(dt > 0.0)) return std::nullopt;
  const double mean = pairwise_sum(x) / static_cast<double>(n);
  const std::size_t nfft = std::bit_ceil(n) * std::max<std::size_t>(pad_factor, 1);
  std::vector<std::complex<double>> buf(nfft);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(k) / static_cast<double>(n - 1));
    buf[k] = (x[k] - mean) * w;
  }
  detail::fft_inplace(buf);

  const double df = 1.0 / (static_cast<double>(nfft) * dt);
  const std::size_t kmin = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(min_freq / df)));
  const std::size_t kmax = nfft / 2;
  if (kmin + 2 > kmax) return std::nullopt;

  std::vector<double> mag(kmax + 1);
  for (std::size_t k = 0; k <= kmax; ++k) mag[k] = std::abs(buf[k]);

  std::size_t best = kmin;
  for (std::size_t k = kmin; k < kmax; ++k)
    if (mag[k] > mag[best]) best = k;

  std::vector<double> band(mag.begin() + static_cast<std::ptrdiff_t>(kmin), mag.begin() + static_cast<std::ptrdiff_t>(kmax));
  auto mid = band.begin() + static_cast<std::ptrdiff_t>(band.size() / 2);
  std::nth_element(band.begin(), mid, band.end());
  const double floor = *mid;
  if (!(mag[best] > 0.0) || mag[best] < min_snr * floor) return std::nullopt;

  double offset = 0.0;
  if (best > kmin && best + 1 < kmax && mag[best - 1] > 0.0 && mag[best + 1] > 0.0) {
    const double a = std::log(mag[best - 1]);
    const double b = std::log(mag[best]);
    const double c = std::log(mag[best + 1]);
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  return SpectralPeak{(static_cast<double>(best) + offset) * df, mag[best], floor};
}

}  // namespace beatsim
