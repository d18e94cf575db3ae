#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "wum/dsp/spectral.hpp"
#include "wum/errors.hpp"

namespace wum {

struct LossWeights {
  double mel = 45.0;
  double stft = 10.0;
  double l1 = 0.0;

  void validate() const {
    wum::detail::require(mel >= 0.0 && stft >= 0.0 && l1 >= 0.0, "losses: weights must be >= 0");
  }
  bool operator==(const LossWeights&) const = default;
};

struct MultiResConfig {
  std::vector<dsp::StftConfig> resolutions{{2048, 240, 1200}, {4096, 480, 2400}, {1024, 100, 480}};

  void validate() const {
    wum::detail::require(resolutions.size() >= 2, "losses.stft: need at least two resolutions");
    for (std::size_t i = 0; i < resolutions.size(); ++i) {
      resolutions[i].validate();
      for (std::size_t j = 0; j < i; ++j) {
        wum::detail::require(!(resolutions[i] == resolutions[j]), "losses.stft: resolutions must be distinct");
      }
    }
  }
  bool operator==(const MultiResConfig&) const = default;
};

inline constexpr double kStftEpsilon = 1e-7;
inline constexpr double kMelMagnitudeFloor = 1e-9;

namespace detail {

inline void check_pair(const torch::Tensor& y, const torch::Tensor& y_hat, const char* who) {
  wum::detail::require(y.sizes() == y_hat.sizes(), std::string(who) + ": y and y_hat must have equal shapes");
  wum::detail::require(y.dim() == 1 || y.dim() == 2, std::string(who) + ": expected (T) or (B, T) waveforms");
}

inline torch::Tensor flat_wave(const torch::Tensor& x) {
  return x.dim() == 3 ? x.squeeze(1) : x;
}

}  // namespace detail

/// Mean |psi(y) - psi(y_hat)| over mel cells. `fb` may be passed to skip rebuilding the filterbank.
inline torch::Tensor mel_loss(const torch::Tensor& y, const torch::Tensor& y_hat, const dsp::MelConfig& cfg = {},
                              const torch::Tensor& fb = {}) {
  auto a = detail::flat_wave(y), b = detail::flat_wave(y_hat);
  detail::check_pair(a, b, "mel_loss");
  auto bank = fb.defined() ? fb : dsp::mel_filterbank(cfg, a.scalar_type()).to(a.device());
  return (dsp::log_mel(a, cfg, bank, kMelMagnitudeFloor) - dsp::log_mel(b, cfg, bank, kMelMagnitudeFloor))
      .abs()
      .mean();
}

/// Spectral convergence + mean absolute log-magnitude difference, magnitudes floored at eps.
inline torch::Tensor stft_loss_single(const torch::Tensor& y, const torch::Tensor& y_hat, const dsp::StftConfig& cfg,
                                      double eps = kStftEpsilon) {
  auto a = detail::flat_wave(y), b = detail::flat_wave(y_hat);
  detail::check_pair(a, b, "stft_loss");
  auto mag_y = dsp::stft_magnitude(a, cfg, eps);
  auto mag_hat = dsp::stft_magnitude(b, cfg, eps);
  std::vector<std::int64_t> dims{mag_y.dim() - 2, mag_y.dim() - 1};
  auto num = (mag_y - mag_hat).pow(2).sum(dims).sqrt();
  auto den = mag_y.pow(2).sum(dims).sqrt().clamp_min(eps);
  auto sc = (num / den).mean();
  auto log_term = (torch::log(mag_y) - torch::log(mag_hat)).abs().mean();
  return sc + log_term;
}

/// Mean of stft_loss_single over the resolution set.
inline torch::Tensor multi_res_stft_loss(const torch::Tensor& y, const torch::Tensor& y_hat,
                                         const std::vector<dsp::StftConfig>& cfgs, double eps = kStftEpsilon) {
  wum::detail::require(!cfgs.empty(), "multi_res_stft_loss: empty resolution set");
  torch::Tensor total;
  for (const auto& c : cfgs) {
    auto l = stft_loss_single(y, y_hat, c, eps);
    total = total.defined() ? total + l : l;
  }
  return total / static_cast<double>(cfgs.size());
}

inline torch::Tensor multi_res_stft_loss(const torch::Tensor& y, const torch::Tensor& y_hat,
                                         const MultiResConfig& cfg = {}) {
  return multi_res_stft_loss(y, y_hat, cfg.resolutions);
}

/// Least-squares critic loss summed over sub-discriminators.
inline torch::Tensor gan_loss_d(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake) {
  wum::detail::require(!real.empty() && !fake.empty(), "gan_loss_d: empty score lists");
  wum::detail::require(real.size() == fake.size(), "gan_loss_d: real and fake lists differ in length");
  torch::Tensor total;
  for (std::size_t i = 0; i < real.size(); ++i) {
    auto l = (real[i] - 1.0).pow(2).mean() + fake[i].pow(2).mean();
    total = total.defined() ? total + l : l;
  }
  return total;
}

inline torch::Tensor gan_loss_g(const std::vector<torch::Tensor>& fake) {
  wum::detail::require(!fake.empty(), "gan_loss_g: empty score list");
  torch::Tensor total;
  for (const auto& f : fake) {
    auto l = (f - 1.0).pow(2).mean();
    total = total.defined() ? total + l : l;
  }
  return total;
}

struct GeneratorLoss {
  torch::Tensor total;
  torch::Tensor mel;
  torch::Tensor stft;
  torch::Tensor adv;
  torch::Tensor l1;  // undefined unless weights.l1 > 0
};

/// Weighted sum of already-computed components.
inline torch::Tensor combine_losses(const torch::Tensor& mel, const torch::Tensor& stft, const torch::Tensor& adv,
                                    const torch::Tensor& l1, const LossWeights& w) {
  w.validate();
  auto total = mel * w.mel + stft * w.stft + adv;
  if (w.l1 > 0.0) {
    wum::detail::require(l1.defined(), "combine_losses: l1 component missing while its weight is positive");
    total = total + l1 * w.l1;
  }
  return total;
}

/// Precomputed pieces shared across training steps.
struct LossContext {
  dsp::MelConfig mel;
  MultiResConfig stft;
  LossWeights weights;
  torch::Tensor fb;

  LossContext() : LossContext(dsp::MelConfig{}, MultiResConfig{}, LossWeights{}) {}
  LossContext(dsp::MelConfig m, MultiResConfig s, LossWeights w)
      : mel(std::move(m)), stft(std::move(s)), weights(w), fb(dsp::mel_filterbank(mel, torch::kFloat32)) {}

  [[nodiscard]] torch::Tensor bank_for(const torch::Tensor& like) const {
    return fb.scalar_type() == like.scalar_type() && fb.device() == like.device()
               ? fb
               : fb.to(like.device(), like.scalar_type());
  }
};

inline GeneratorLoss generator_total_loss(const torch::Tensor& y, const torch::Tensor& y_hat,
                                          const std::vector<torch::Tensor>& fake_scores, const LossContext& ctx) {
  GeneratorLoss out;
  out.mel = mel_loss(y, y_hat, ctx.mel, ctx.bank_for(y));
  out.stft = multi_res_stft_loss(y, y_hat, ctx.stft);
  out.adv = gan_loss_g(fake_scores);
  if (ctx.weights.l1 > 0.0) out.l1 = (detail::flat_wave(y) - detail::flat_wave(y_hat)).abs().mean();
  out.total = combine_losses(out.mel, out.stft, out.adv, out.l1, ctx.weights);
  return out;
}

}  // namespace wum
