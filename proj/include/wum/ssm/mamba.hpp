#pragma once

#include <torch/torch.h>

#include <cmath>

#include "wum/errors.hpp"
#include "wum/nn/weight_norm.hpp"
#include "wum/ssm/scan_op.hpp"

namespace wum::ssm {

struct MambaConfig {
  std::int64_t d_state = 16;
  std::int64_t expand = 2;
  std::int64_t conv_width = 4;
  std::int64_t dt_rank = 0;  // 0 -> ceil(d_model / 16)
  double dt_min = 1e-3;
  double dt_max = 1e-1;
  Discretization disc = Discretization::kZeroOrderHold;
  std::int64_t chunk = kDefaultChunk;

  [[nodiscard]] std::int64_t rank_for(std::int64_t d_model) const {
    return dt_rank > 0 ? dt_rank : (d_model + 15) / 16;
  }
  bool operator==(const MambaConfig&) const = default;
};

/// Selective SSM layer on (B, T, d_model): input projection with gating
/// branch, causal depthwise conv, input-dependent (delta, B, C), scan,
/// gated output projection.
class MambaImpl : public torch::nn::Module {
 public:
  MambaImpl(std::int64_t d_model, const MambaConfig& cfg)
      : d_model_(d_model), d_inner_(cfg.expand * d_model), rank_(cfg.rank_for(d_model)), cfg_(cfg) {
    wum::detail::require(d_model >= 1, "Mamba: d_model must be >= 1");
    in_proj = register_module("in_proj", torch::nn::Linear(torch::nn::LinearOptions(d_model, 2 * d_inner_).bias(false)));
    nn::Conv1dSpec cs;
    cs.in = d_inner_;
    cs.out = d_inner_;
    cs.kernel = cfg.conv_width;
    cs.groups = d_inner_;
    cs.pad_left = cfg.conv_width - 1;  // causal
    cs.pad_mode = nn::PadMode::kZeros;
    conv = register_module("conv", nn::WNConv1d(cs));
    x_proj = register_module("x_proj",
                             torch::nn::Linear(torch::nn::LinearOptions(d_inner_, rank_ + 2 * cfg.d_state).bias(false)));
    dt_proj = register_module("dt_proj", torch::nn::Linear(torch::nn::LinearOptions(rank_, d_inner_).bias(true)));
    out_proj = register_module("out_proj", torch::nn::Linear(torch::nn::LinearOptions(d_inner_, d_model).bias(false)));

    torch::NoGradGuard no_grad;
    const double std = 1.0 / std::sqrt(static_cast<double>(rank_));
    dt_proj->weight.uniform_(-std, std);
    // bias = softplus^-1(dt) with dt log-uniform in [dt_min, dt_max]
    auto dt = torch::exp(torch::rand({d_inner_}) * (std::log(cfg.dt_max) - std::log(cfg.dt_min)) + std::log(cfg.dt_min))
                  .clamp_min(1e-4);
    dt_proj->bias.copy_(dt + torch::log(-torch::expm1(-dt)));
    auto a = torch::arange(1, cfg.d_state + 1, torch::kFloat32).repeat({d_inner_, 1});
    A_log = register_parameter("A_log", torch::log(a));
    D = register_parameter("D", torch::ones({d_inner_}));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    wum::detail::require(x.dim() == 3 && x.size(2) == d_model_,
                         "Mamba: expected (batch, length, " + std::to_string(d_model_) + ") input");
    auto xz = in_proj(x);
    auto parts = xz.chunk(2, -1);
    auto u = torch::silu(conv(parts[0].transpose(1, 2)).transpose(1, 2));
    auto x_dbl = x_proj(u);
    auto pieces = x_dbl.split_with_sizes({rank_, cfg_.d_state, cfg_.d_state}, -1);
    SsmParams p;
    p.delta = torch::nn::functional::softplus(dt_proj(pieces[0]));
    p.A = -torch::exp(A_log);
    p.B = pieces[1];
    p.C = pieces[2];
    p.D = D;
    auto y = selective_scan(u, p, ScanOptions{cfg_.disc, cfg_.chunk});
    return out_proj(y * torch::silu(parts[1]));
  }

  [[nodiscard]] std::int64_t d_model() const { return d_model_; }
  [[nodiscard]] std::int64_t d_inner() const { return d_inner_; }
  [[nodiscard]] std::int64_t dt_rank() const { return rank_; }
  [[nodiscard]] const MambaConfig& config() const { return cfg_; }

  /// Closed-form parameter count with the conv's weight-norm magnitude folded in.
  static std::int64_t parameter_count(std::int64_t d_model, const MambaConfig& cfg) {
    const std::int64_t di = cfg.expand * d_model;
    const std::int64_t r = cfg.rank_for(d_model);
    return d_model * 2 * di                // in_proj
           + di * cfg.conv_width + di      // depthwise conv + bias
           + di * (r + 2 * cfg.d_state)    // x_proj
           + r * di + di                   // dt_proj
           + di * cfg.d_state + di         // A_log, D
           + di * d_model;                 // out_proj
  }

  torch::nn::Linear in_proj{nullptr}, x_proj{nullptr}, dt_proj{nullptr}, out_proj{nullptr};
  nn::WNConv1d conv{nullptr};
  torch::Tensor A_log, D;

 private:
  std::int64_t d_model_, d_inner_, rank_;
  MambaConfig cfg_;
};
TORCH_MODULE(Mamba);

/// x + Mamba(LayerNorm(x)) on (B, T, d_model).
class MambaBlockImpl : public torch::nn::Module {
 public:
  MambaBlockImpl(std::int64_t d_model, const MambaConfig& cfg) {
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})));
    mixer = register_module("mixer", Mamba(d_model, cfg));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    wum::detail::require(x.dim() == 3 && x.size(2) == mixer->d_model(),
                         "MambaBlock: expected (batch, length, " + std::to_string(mixer->d_model()) + ") input");
    return x + mixer(norm(x));
  }

  static std::int64_t parameter_count(std::int64_t d_model, const MambaConfig& cfg) {
    return 2 * d_model + MambaImpl::parameter_count(d_model, cfg);
  }

  torch::nn::LayerNorm norm{nullptr};
  Mamba mixer{nullptr};
};
TORCH_MODULE(MambaBlock);

}  // namespace wum::ssm
