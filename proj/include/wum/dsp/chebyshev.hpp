#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "wum/audio.hpp"
#include "wum/errors.hpp"

namespace wum::dsp {

/// One second-order section, a0 normalised to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

using SosFilter = std::vector<Biquad>;

/// Digital Chebyshev type-I low-pass as cascaded biquads. Even orders only.
/// Analog prototype -> prewarped bilinear transform, zeros at z = -1.
inline SosFilter design_chebyshev1_lowpass(int order, double ripple_db, double cutoff_hz, double rate_hz) {
  wum::detail::require(order > 0 && order % 2 == 0, "chebyshev: order must be positive and even");
  wum::detail::require(ripple_db > 0.0, "chebyshev: ripple must be positive");
  wum::detail::require(cutoff_hz > 0.0 && cutoff_hz < rate_hz / 2.0,
                       "chebyshev: cutoff must lie strictly inside (0, rate/2)");
  using cd = std::complex<double>;
  const double eps = std::sqrt(std::pow(10.0, 0.1 * ripple_db) - 1.0);
  const double mu = std::asinh(1.0 / eps) / order;
  // fs = 2 convention: warped edge = 4 tan(pi * Wn / 2), Wn = cutoff / nyquist
  const double wn = cutoff_hz / (rate_hz / 2.0);
  const double warped = 4.0 * std::tan(std::numbers::pi * wn / 2.0);

  SosFilter sos;
  // poles with positive imaginary part; conjugates pair up into one section each
  for (int m = 1 - order; m < 0; m += 2) {
    const double theta = std::numbers::pi * m / (2.0 * order);
    cd p_analog = -std::sinh(cd(mu, theta)) * warped;
    cd z = (4.0 + p_analog) / (4.0 - p_analog);
    Biquad s;
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    const double g = (1.0 + s.a1 + s.a2) / 4.0;  // unit DC gain per section
    s.b0 = g;
    s.b1 = 2.0 * g;
    s.b2 = g;
    sos.push_back(s);
  }
  // even-order type I sits at the bottom of its ripple at DC
  const double dc = 1.0 / std::sqrt(1.0 + eps * eps);
  sos.front().b0 *= dc;
  sos.front().b1 *= dc;
  sos.front().b2 *= dc;
  return sos;
}

/// |H(e^{jw})| at `freq_hz`.
inline double sos_magnitude(const SosFilter& sos, double freq_hz, double rate_hz) {
  const double w = 2.0 * std::numbers::pi * freq_hz / rate_hz;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

namespace detail {

// Direct-form II transposed, in place, with per-section initial state.
inline void sos_filter_inplace(const SosFilter& sos, std::vector<double>& x,
                               std::vector<std::array<double, 2>> state) {
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    double z1 = state[k][0], z2 = state[k][1];
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

// Steady-state section states for a unit step, scaled through the cascade.
inline std::vector<std::array<double, 2>> sos_step_state(const SosFilter& sos, double level) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double scale = level;
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    zi[k][0] = scale * (s.b1 + s.b2 - (s.a1 + s.a2) * g);
    zi[k][1] = scale * (s.b2 - s.a2 * g);
    scale *= g;
  }
  return zi;
}

}  // namespace detail

/// Zero-phase (forward-backward) filtering with odd-extension padding and
/// steady-state initial conditions. The effective response is |H|^2.
inline std::vector<float> sos_filtfilt(const SosFilter& sos, std::span<const float> x) {
  wum::detail::require(!x.empty(), "filtfilt: empty input");
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  auto pad = static_cast<std::ptrdiff_t>(3 * (2 * sos.size() + 1));
  pad = std::min(pad, n - 1);

  std::vector<double> ext(static_cast<std::size_t>(n + 2 * pad));
  const double first = x.front(), last = x.back();
  for (std::ptrdiff_t i = 0; i < pad; ++i) ext[static_cast<std::size_t>(i)] = 2.0 * first - x[static_cast<std::size_t>(pad - i)];
  for (std::ptrdiff_t i = 0; i < n; ++i) ext[static_cast<std::size_t>(pad + i)] = x[static_cast<std::size_t>(i)];
  for (std::ptrdiff_t i = 0; i < pad; ++i)
    ext[static_cast<std::size_t>(pad + n + i)] = 2.0 * last - x[static_cast<std::size_t>(n - 2 - i)];

  detail::sos_filter_inplace(sos, ext, detail::sos_step_state(sos, ext.front()));
  std::reverse(ext.begin(), ext.end());
  detail::sos_filter_inplace(sos, ext, detail::sos_step_state(sos, ext.front()));
  std::reverse(ext.begin(), ext.end());

  std::vector<float> y(static_cast<std::size_t>(n));
  for (std::ptrdiff_t i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = static_cast<float>(ext[static_cast<std::size_t>(pad + i)]);
  return y;
}

struct ChebyshevSpec {
  int order = 8;
  double ripple_db = 0.05;
  /// Scale so the passband ripple straddles 0 dB instead of sitting below it.
  bool centre_ripple = true;
};

inline SosFilter chebyshev_design(const ChebyshevSpec& spec, double cutoff_hz, double rate_hz) {
  auto sos = design_chebyshev1_lowpass(spec.order, spec.ripple_db, cutoff_hz, rate_hz);
  if (spec.centre_ripple) {
    const double lift = std::pow(10.0, spec.ripple_db / 40.0);
    sos.front().b0 *= lift;
    sos.front().b1 *= lift;
    sos.front().b2 *= lift;
  }
  return sos;
}

inline std::vector<float> chebyshev_lowpass(std::span<const float> x, double rate_hz, double cutoff_hz,
                                            const ChebyshevSpec& spec = {}) {
  wum::detail::require(cutoff_hz > 0.0 && cutoff_hz < rate_hz / 2.0,
                       "chebyshev_lowpass: cutoff must be in (0, Nyquist)");
  return sos_filtfilt(chebyshev_design(spec, cutoff_hz, rate_hz), x);
}

inline AudioBuffer chebyshev_lowpass(const AudioBuffer& x, double cutoff_hz, const ChebyshevSpec& spec = {}) {
  wum::detail::require(!x.empty(), "chebyshev_lowpass: empty input");
  return {chebyshev_lowpass(x.view(), x.rate, cutoff_hz, spec), x.rate};
}

}  // namespace wum::dsp
