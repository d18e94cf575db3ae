#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "wum/audio.hpp"
#include "wum/dsp/chebyshev.hpp"
#include "wum/dsp/resample.hpp"
#include "wum/errors.hpp"

namespace wum::dsp {

inline constexpr int kTargetRate = 48000;
inline constexpr double kMinCutoffHz = 2000.0;
inline constexpr double kMaxCutoffHz = 12000.0;

/// Scales by one positive constant so that max |x| == 1. Silence is returned
/// unchanged rather than rejected.
inline AudioBuffer normalize_peak(const AudioBuffer& x) {
  const float peak = x.peak();
  if (peak == 0.0f) return x;
  AudioBuffer out = x;
  const double scale = 1.0 / peak;
  for (float& v : out.samples) v = static_cast<float>(v * scale);
  // rounding can leave the peak a hair away from 1
  for (float& v : out.samples) {
    if (std::abs(v) >= 1.0f - 1e-7f) v = std::copysign(1.0f, v);
  }
  return out;
}

/// Low-resolution simulation at 48 kHz: Chebyshev low-pass at `cutoff`,
/// resample to 2*cutoff and back. The result is the sinc-interpolated LR
/// signal, same length as the input.
inline std::vector<float> simulate_low_resolution(std::span<const float> y, double cutoff_hz,
                                                  double rate_hz = kTargetRate) {
  wum::detail::require(!y.empty(), "simulate_low_resolution: empty input");
  auto filtered = chebyshev_lowpass(y, rate_hz, cutoff_hz);
  const double low_rate = 2.0 * cutoff_hz;
  auto low = resample_sinc(filtered, rate_hz, low_rate);
  auto back = resample_sinc(low, low_rate, rate_hz);
  back.resize(y.size(), 0.0f);
  return back;
}

inline AudioBuffer simulate_low_resolution(const AudioBuffer& y, double cutoff_hz) {
  wum::detail::require(y.rate == kTargetRate, "simulate_low_resolution: input must be 48 kHz");
  wum::detail::require(cutoff_hz >= kMinCutoffHz && cutoff_hz <= kMaxCutoffHz,
                       "simulate_low_resolution: cutoff must lie in [2000, 12000] Hz");
  return {simulate_low_resolution(y.view(), cutoff_hz, y.rate), y.rate};
}

}  // namespace wum::dsp
