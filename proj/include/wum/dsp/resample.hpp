#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "wum/audio.hpp"
#include "wum/errors.hpp"

namespace wum::dsp {

/// Band-limited interpolation filter: a Kaiser-windowed sinc sampled on a
/// fine grid (`table_resolution` points per zero crossing) and read back with
/// linear interpolation, so any rate ratio can be served from one table.
struct SincFilterSpec {
  int zero_crossings = 64;
  int table_resolution = 512;
  double kaiser_beta = 14.769656459379492;
  // fraction of the lower Nyquist frequency kept as passband
  double rolloff = 0.9475937167399596;
};

namespace detail {

struct SincTable {
  std::vector<double> win;
  std::vector<double> delta;
  SincFilterSpec spec;

  explicit SincTable(const SincFilterSpec& s) : spec(s) {
    const std::size_t n = static_cast<std::size_t>(s.zero_crossings) * s.table_resolution;
    win.resize(n + 1);
    const double i0_beta = std::cyl_bessel_i(0.0, s.kaiser_beta);
    for (std::size_t i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / s.table_resolution;  // in zero crossings
      const double arg = s.rolloff * t;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double r = static_cast<double>(i) / static_cast<double>(n);
      const double taper = std::cyl_bessel_i(0.0, s.kaiser_beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      win[i] = s.rolloff * sinc * taper;
    }
    delta.resize(n + 1);
    for (std::size_t i = 0; i < n; ++i) delta[i] = win[i + 1] - win[i];
    delta[n] = 0.0;
  }

  // Filter value at a distance of `pos` table steps from the kernel centre.
  [[nodiscard]] double at(double pos) const {
    auto idx = static_cast<std::size_t>(pos);
    if (idx >= win.size()) return 0.0;
    return win[idx] + (pos - static_cast<double>(idx)) * delta[idx];
  }
};

inline const SincTable& default_sinc_table() {
  static const SincTable table{SincFilterSpec{}};
  return table;
}

}  // namespace detail

/// Resamples `x` from `from_rate` to `to_rate` (Hz, any positive reals).
/// Output length is round(len * to / from). Rates equal -> exact copy.
inline std::vector<float> resample_sinc(std::span<const float> x, double from_rate, double to_rate) {
  wum::detail::require(!x.empty(), "resample_sinc: empty input");
  wum::detail::require(from_rate > 0.0 && to_rate > 0.0, "resample_sinc: rates must be positive");
  if (from_rate == to_rate) return {x.begin(), x.end()};

  const auto& table = detail::default_sinc_table();
  const double ratio = to_rate / from_rate;
  const double scale = std::min(1.0, ratio);
  const double gain = scale;  // keeps unit DC gain when the kernel is stretched
  const double step = 1.0 / ratio;
  const double res = table.spec.table_resolution;
  const double half_width = table.spec.zero_crossings / scale;  // input samples per wing

  const auto n_in = static_cast<std::ptrdiff_t>(x.size());
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * ratio));
  std::vector<float> y(n_out);
  for (std::size_t t = 0; t < n_out; ++t) {
    const double time = static_cast<double>(t) * step;
    const auto n = static_cast<std::ptrdiff_t>(std::floor(time));
    const double frac = time - static_cast<double>(n);
    double acc = 0.0;
    // left wing: x[n], x[n-1], ... at distances frac, frac+1, ...
    const auto left = std::min<std::ptrdiff_t>(n + 1, static_cast<std::ptrdiff_t>(half_width - frac) + 1);
    for (std::ptrdiff_t i = 0; i < left; ++i) {
      if (n - i >= n_in) continue;
      acc += table.at((frac + static_cast<double>(i)) * scale * res) * x[static_cast<std::size_t>(n - i)];
    }
    // right wing: x[n+1], x[n+2], ... at distances 1-frac, 2-frac, ...
    const double rfrac = 1.0 - frac;
    const auto right = std::min<std::ptrdiff_t>(n_in - n - 1, static_cast<std::ptrdiff_t>(half_width - rfrac) + 1);
    for (std::ptrdiff_t k = 0; k < right; ++k) {
      acc += table.at((rfrac + static_cast<double>(k)) * scale * res) * x[static_cast<std::size_t>(n + 1 + k)];
    }
    y[t] = static_cast<float>(gain * acc);
  }
  return y;
}

inline AudioBuffer resample_sinc(const AudioBuffer& x, int to_rate) {
  wum::detail::require(!x.empty(), "resample_sinc: empty input");
  wum::detail::require(to_rate > 0 && x.rate > 0, "resample_sinc: rates must be positive");
  return {resample_sinc(x.view(), x.rate, to_rate), to_rate};
}

}  // namespace wum::dsp
