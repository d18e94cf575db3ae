#pragma once

#include <torch/torch.h>

#include <cmath>
#include <string>
#include <vector>

#include "wum/audio.hpp"
#include "wum/errors.hpp"

namespace wum::dsp {

/// Centred, reflect-padded STFT with a periodic Hann window zero-padded to
/// `fft_size`.
struct StftConfig {
  int fft_size = 2048;
  int hop = 512;
  int window_length = 2048;

  [[nodiscard]] int bins() const { return fft_size / 2 + 1; }
  // frame count for a signal of `len` samples under centred padding
  [[nodiscard]] std::int64_t frames(std::int64_t len) const { return len / hop + 1; }

  void validate() const {
    wum::detail::require(fft_size > 0 && hop > 0 && window_length > 0, "StftConfig: sizes must be positive");
    wum::detail::require(hop <= window_length && window_length <= fft_size,
                         "StftConfig: need hop <= window_length <= fft_size");
  }
  bool operator==(const StftConfig&) const = default;
};

struct MelConfig {
  StftConfig stft{};
  int n_mels = 128;
  double f_min = 0.0;
  double f_max = 24000.0;
  double log_floor = 1e-5;
  int rate = 48000;

  void validate() const {
    stft.validate();
    wum::detail::require(n_mels >= 1, "MelConfig: n_mels must be >= 1");
    wum::detail::require(f_min >= 0.0 && f_min < f_max && f_max <= rate / 2.0,
                         "MelConfig: need 0 <= f_min < f_max <= rate/2");
    wum::detail::require(log_floor > 0.0, "MelConfig: log_floor must be positive");
  }
  bool operator==(const MelConfig&) const = default;
};

namespace detail {

inline void check_stft_length(std::int64_t len, const StftConfig& cfg) {
  if (len < cfg.window_length || len <= cfg.fft_size / 2) {
    throw InvalidInput("stft: signal of " + std::to_string(len) + " samples is shorter than one window (" +
                       std::to_string(std::max(cfg.window_length, cfg.fft_size / 2 + 1)) + " required)");
  }
}

}  // namespace detail

/// Complex STFT of a (T) or (B, T) tensor -> (F, frames) or (B, F, frames).
inline torch::Tensor stft_complex(const torch::Tensor& x, const StftConfig& cfg) {
  cfg.validate();
  detail::check_stft_length(x.size(-1), cfg);
  auto window = torch::hann_window(cfg.window_length, torch::TensorOptions().dtype(x.dtype()).device(x.device()));
  return torch::stft(x, cfg.fft_size, cfg.hop, cfg.window_length, window,
                     /*center=*/true, /*pad_mode=*/"reflect", /*normalized=*/false,
                     /*onesided=*/true, /*return_complex=*/true);
}

/// Magnitude spectrogram. With `floor > 0` the result is max(|X|, floor),
/// computed as sqrt(max(|X|^2, floor^2)) so the gradient stays finite at 0.
inline torch::Tensor stft_magnitude(const torch::Tensor& x, const StftConfig& cfg, double floor = 0.0) {
  auto spec = stft_complex(x, cfg);
  if (floor <= 0.0) return spec.abs();
  auto power = torch::view_as_real(spec).pow(2).sum(-1);
  return power.clamp_min(floor * floor).sqrt();
}

/// F x T magnitude matrix for a single buffer.
inline torch::Tensor stft_magnitude(const AudioBuffer& x, const StftConfig& cfg) {
  wum::detail::require(!x.empty(), "stft_magnitude: empty input");
  auto t = torch::from_blob(const_cast<float*>(x.samples.data()), {static_cast<std::int64_t>(x.size())},
                            torch::kFloat32);
  return stft_magnitude(t.to(torch::kFloat64), cfg).to(torch::kFloat32);
}

inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz >= min_log_hz ? min_log_mel + std::log(hz / min_log_hz) / logstep : hz / f_sp;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel >= min_log_mel ? min_log_hz * std::exp(logstep * (mel - min_log_mel)) : f_sp * mel;
}

/// Slaney-scale triangular filterbank with area normalisation, (n_mels x bins).
inline torch::Tensor mel_filterbank(const MelConfig& cfg, torch::Dtype dtype = torch::kFloat64) {
  cfg.validate();
  const int bins = cfg.stft.bins();
  std::vector<double> fft_freqs(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) fft_freqs[static_cast<std::size_t>(k)] = k * (cfg.rate / 2.0) / (bins - 1);
  const double mel_lo = hz_to_mel(cfg.f_min), mel_hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

  auto fb = torch::zeros({cfg.n_mels, bins}, torch::kFloat64);
  auto acc = fb.accessor<double, 2>();
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)], mid = edges[static_cast<std::size_t>(m + 1)],
                 hi = edges[static_cast<std::size_t>(m + 2)];
    const double enorm = 2.0 / (hi - lo);
    for (int k = 0; k < bins; ++k) {
      const double f = fft_freqs[static_cast<std::size_t>(k)];
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      acc[m][k] = std::max(0.0, std::min(rise, fall)) * enorm;
    }
  }
  return fb.to(dtype);
}

/// log(mel_fb @ |X| + log_floor): (T) -> (n_mels, frames), (B, T) -> (B, n_mels, frames).
/// `mag_floor` only matters for autograd (see stft_magnitude).
inline torch::Tensor log_mel(const torch::Tensor& x, const MelConfig& cfg, const torch::Tensor& fb,
                             double mag_floor = 0.0) {
  auto mag = stft_magnitude(x, cfg.stft, mag_floor);
  return torch::log(torch::matmul(fb, mag) + cfg.log_floor);
}

inline torch::Tensor log_mel(const torch::Tensor& x, const MelConfig& cfg, double mag_floor = 0.0) {
  return log_mel(x, cfg, mel_filterbank(cfg, x.scalar_type()).to(x.device()), mag_floor);
}

inline torch::Tensor mel_spectrogram(const AudioBuffer& x, const MelConfig& cfg) {
  wum::detail::require(!x.empty(), "mel_spectrogram: empty input");
  auto t = torch::from_blob(const_cast<float*>(x.samples.data()), {static_cast<std::int64_t>(x.size())},
                            torch::kFloat32);
  return log_mel(t.to(torch::kFloat64), cfg).to(torch::kFloat32);
}

}  // namespace wum::dsp
