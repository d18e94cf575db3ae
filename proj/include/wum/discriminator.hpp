#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "wum/errors.hpp"
#include "wum/nn/weight_norm.hpp"

namespace wum {

struct DiscriminatorConfig {
  std::vector<std::int64_t> periods{2, 3, 5, 7, 11};
  std::vector<std::int64_t> mpd_channels{32, 128, 512, 1024};
  std::int64_t mpd_kernel = 5;
  std::int64_t mpd_stride = 3;
  std::int64_t mpd_extra_layers = 1;

  std::int64_t msd_scales = 3;
  std::vector<std::int64_t> msd_channels{16, 64, 256, 1024, 1024};
  std::vector<std::int64_t> msd_groups{1, 4, 16, 64, 256};
  std::int64_t msd_extra_layers = 1;

  double leaky_slope = 0.1;

  void validate() const {
    using wum::detail::require;
    require(!periods.empty(), "discriminator.periods must not be empty");
    for (auto p : periods) require(p >= 1, "discriminator.periods entries must be >= 1");
    require(!mpd_channels.empty(), "discriminator.mpd_channels must not be empty");
    require(mpd_kernel >= 1 && mpd_stride >= 1, "discriminator: mpd kernel and stride must be positive");
    require(mpd_extra_layers >= 0 && msd_extra_layers >= 0, "discriminator: extra layer counts must be >= 0");
    require(msd_scales >= 1, "discriminator.msd_scales must be >= 1");
    require(msd_channels.size() >= 2, "discriminator.msd_channels needs at least two entries");
    require(msd_groups.size() == msd_channels.size(), "discriminator.msd_groups must match msd_channels in length");
    for (std::size_t i = 1; i < msd_channels.size(); ++i) {
      require(msd_channels[i - 1] % msd_groups[i] == 0 && msd_channels[i] % msd_groups[i] == 0,
              "discriminator.msd_groups must divide adjacent channel widths");
    }
    require(leaky_slope >= 0.0, "discriminator.leaky_slope must be >= 0");
  }

  bool operator==(const DiscriminatorConfig&) const = default;
};

/// Score map and intermediate activations of one sub-discriminator.
struct SubDiscriminatorOutput {
  torch::Tensor score;
  std::vector<torch::Tensor> features;
};

struct DiscriminatorOutput {
  std::vector<SubDiscriminatorOutput> subs;

  [[nodiscard]] std::size_t size() const { return subs.size(); }
  [[nodiscard]] std::vector<torch::Tensor> scores() const {
    std::vector<torch::Tensor> out;
    out.reserve(subs.size());
    for (const auto& s : subs) out.push_back(s.score);
    return out;
  }
  void append(DiscriminatorOutput&& other) {
    for (auto& s : other.subs) subs.push_back(std::move(s));
  }
};

namespace disc {

inline torch::Tensor as_batch_wave(const torch::Tensor& y, const char* who) {
  wum::detail::require(y.dim() == 2 || (y.dim() == 3 && y.size(1) == 1),
                       std::string(who) + ": expected (batch, length) or (batch, 1, length) input");
  wum::detail::require(y.size(0) >= 1 && y.size(-1) >= 1, std::string(who) + ": empty input");
  return y.dim() == 2 ? y.unsqueeze(1) : y;
}

class PeriodDiscriminatorImpl : public torch::nn::Module {
 public:
  PeriodDiscriminatorImpl(std::int64_t period, const DiscriminatorConfig& cfg)
      : period_(period), slope_(cfg.leaky_slope) {
    convs = register_module("convs", torch::nn::ModuleList());
    std::int64_t in = 1;
    const auto pad = (cfg.mpd_kernel - 1) / 2;
    for (auto c : cfg.mpd_channels) {
      convs->push_back(nn::WNConv2d(nn::Conv2dSpec{in, c, cfg.mpd_kernel, cfg.mpd_stride, pad}));
      in = c;
    }
    for (std::int64_t i = 0; i < 1 + cfg.mpd_extra_layers; ++i) {
      convs->push_back(nn::WNConv2d(nn::Conv2dSpec{in, in, cfg.mpd_kernel, 1, pad}));
    }
    post = register_module("post", nn::WNConv2d(nn::Conv2dSpec{in, 1, 3, 1, 1}));
  }

  /// (B, 1, T) -> right-pad to a multiple of the period -> (B, 1, T/p, p) -> conv stack.
  SubDiscriminatorOutput forward(const torch::Tensor& x) {
    const auto t = x.size(2);
    auto h = x;
    if (t % period_ != 0) {
      const auto pad = period_ - t % period_;
      namespace F = torch::nn::functional;
      const auto mode = pad < t ? F::PadFuncOptions::mode_t(torch::kReflect) : F::PadFuncOptions::mode_t(torch::kReplicate);
      h = F::pad(h, F::PadFuncOptions({0, pad}).mode(mode));
    }
    h = h.view({h.size(0), 1, h.size(2) / period_, period_});
    SubDiscriminatorOutput out;
    for (auto& c : *convs) {
      h = torch::leaky_relu(c->as<nn::WNConv2dImpl>()->forward(h), slope_);
      out.features.push_back(h);
    }
    h = post(h);
    out.features.push_back(h);
    out.score = h.flatten(1);
    return out;
  }

  [[nodiscard]] std::int64_t period() const { return period_; }

  torch::nn::ModuleList convs{nullptr};
  nn::WNConv2d post{nullptr};

 private:
  std::int64_t period_;
  double slope_;
};
TORCH_MODULE(PeriodDiscriminator);

class ScaleDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit ScaleDiscriminatorImpl(const DiscriminatorConfig& cfg) : slope_(cfg.leaky_slope) {
    convs = register_module("convs", torch::nn::ModuleList());
    const auto& ch = cfg.msd_channels;
    nn::Conv1dSpec first;
    first.in = 1;
    first.out = ch[0];
    first.kernel = 15;
    first.pad_left = first.pad_right = 7;
    convs->push_back(nn::WNConv1d(first));
    for (std::size_t i = 1; i < ch.size(); ++i) {
      nn::Conv1dSpec s;
      s.in = ch[i - 1];
      s.out = ch[i];
      s.kernel = 41;
      s.stride = 4;
      s.groups = cfg.msd_groups[i];
      s.pad_left = s.pad_right = 20;
      convs->push_back(nn::WNConv1d(s));
    }
    for (std::int64_t i = 0; i < 1 + cfg.msd_extra_layers; ++i) {
      nn::Conv1dSpec s;
      s.in = s.out = ch.back();
      s.kernel = 5;
      s.pad_left = s.pad_right = 2;
      convs->push_back(nn::WNConv1d(s));
    }
    nn::Conv1dSpec p;
    p.in = ch.back();
    p.out = 1;
    p.kernel = 3;
    p.pad_left = p.pad_right = 1;
    post = register_module("post", nn::WNConv1d(p));
  }

  SubDiscriminatorOutput forward(const torch::Tensor& x) {
    SubDiscriminatorOutput out;
    auto h = x;
    for (auto& c : *convs) {
      h = torch::leaky_relu(c->as<nn::WNConv1dImpl>()->forward(h), slope_);
      out.features.push_back(h);
    }
    h = post(h);
    out.features.push_back(h);
    out.score = h.flatten(1);
    return out;
  }

  torch::nn::ModuleList convs{nullptr};
  nn::WNConv1d post{nullptr};

 private:
  double slope_;
};
TORCH_MODULE(ScaleDiscriminator);

}  // namespace disc

class MultiPeriodDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit MultiPeriodDiscriminatorImpl(const DiscriminatorConfig& cfg) {
    cfg.validate();
    subs = register_module("subs", torch::nn::ModuleList());
    for (auto p : cfg.periods) {
      subs->push_back(disc::PeriodDiscriminator(p, cfg));
      max_period_ = std::max(max_period_, p);
    }
  }

  DiscriminatorOutput forward(const torch::Tensor& y) {
    auto x = disc::as_batch_wave(y, "mpd");
    wum::detail::require(x.size(2) >= max_period_, "mpd: waveform shorter than the largest period");
    DiscriminatorOutput out;
    for (auto& s : *subs) out.subs.push_back(s->as<disc::PeriodDiscriminatorImpl>()->forward(x));
    return out;
  }

  torch::nn::ModuleList subs{nullptr};

 private:
  std::int64_t max_period_ = 1;
};
TORCH_MODULE(MultiPeriodDiscriminator);

/// Sub-discriminators on the raw waveform and on repeated AvgPool(4, 2, 1) copies.
class MultiScaleDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit MultiScaleDiscriminatorImpl(const DiscriminatorConfig& cfg) {
    cfg.validate();
    subs = register_module("subs", torch::nn::ModuleList());
    for (std::int64_t i = 0; i < cfg.msd_scales; ++i) subs->push_back(disc::ScaleDiscriminator(cfg));
  }

  DiscriminatorOutput forward(const torch::Tensor& y) {
    auto x = disc::as_batch_wave(y, "msd");
    const auto pools = static_cast<std::int64_t>(subs->size()) - 1;
    wum::detail::require((x.size(2) >> pools) >= 16, "msd: waveform too short for the pooled scales");
    DiscriminatorOutput out;
    for (std::size_t i = 0; i < subs->size(); ++i) {
      if (i > 0) x = torch::avg_pool1d(x, {4}, {2}, {1});
      out.subs.push_back(subs[i]->as<disc::ScaleDiscriminatorImpl>()->forward(x));
    }
    return out;
  }

  torch::nn::ModuleList subs{nullptr};
};
TORCH_MODULE(MultiScaleDiscriminator);

/// MPD followed by MSD; outputs are concatenated in that order.
class DiscriminatorsImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorsImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    mpd = register_module("mpd", MultiPeriodDiscriminator(cfg));
    msd = register_module("msd", MultiScaleDiscriminator(cfg));
  }

  DiscriminatorOutput forward(const torch::Tensor& y) {
    auto out = mpd(y);
    out.append(msd(y));
    return out;
  }

  [[nodiscard]] const DiscriminatorConfig& config() const { return cfg_; }

  MultiPeriodDiscriminator mpd{nullptr};
  MultiScaleDiscriminator msd{nullptr};

 private:
  DiscriminatorConfig cfg_;
};
TORCH_MODULE(Discriminators);

}  // namespace wum
