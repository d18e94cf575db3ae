#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

#include "wum/errors.hpp"
#include "wum/nn/weight_norm.hpp"
#include "wum/ssm/mamba.hpp"

namespace wum {

struct GeneratorConfig {
  std::int64_t depth = 4;
  std::int64_t stem_blocks = 2;
  std::int64_t stem_width = 16;
  std::int64_t stem_kernel = 4;
  std::int64_t mamba_blocks = 2;
  std::vector<std::int64_t> channel_schedule{32, 64, 128, 256};
  std::int64_t bottleneck_dim = 256;
  std::int64_t down_kernel = 3;
  std::int64_t resblock_kernel = 3;
  std::vector<std::int64_t> resblock_dilations{1, 3};
  std::int64_t up_kernel = 4;
  std::int64_t up_stride = 2;
  std::int64_t out_kernel = 7;
  double leaky_slope = 0.1;
  bool deep = false;
  bool no_mamba = false;
  ssm::MambaConfig mamba;

  /// `deep` adds one level and doubles the bottleneck; everything else reads the resolved config.
  [[nodiscard]] GeneratorConfig resolved() const {
    GeneratorConfig r = *this;
    if (deep) {
      r.deep = false;
      r.depth += 1;
      r.bottleneck_dim *= 2;
      r.channel_schedule.push_back(r.bottleneck_dim);
    }
    return r;
  }

  void validate() const {
    using wum::detail::require;
    const auto r = resolved();
    require(r.depth >= 1, "generator.depth must be >= 1");
    require(r.stem_blocks >= 1, "generator.stem_blocks must be >= 1");
    require(r.mamba_blocks >= 0, "generator.mamba_blocks must be >= 0");
    require(r.stem_width >= 1 && r.stem_kernel >= 1 && r.down_kernel >= 1 && r.out_kernel >= 1,
            "generator: widths and kernels must be positive");
    require(static_cast<std::int64_t>(r.channel_schedule.size()) == r.depth,
            "generator.channel_schedule must have one entry per level (" + std::to_string(r.depth) + ")");
    for (auto c : r.channel_schedule) require(c >= 1, "generator.channel_schedule entries must be positive");
    require(r.channel_schedule.back() == r.bottleneck_dim,
            "generator.channel_schedule last entry must equal bottleneck_dim");
    require(r.up_stride == 2, "generator.up_stride must be 2 to mirror the average pooling");
    require(r.up_kernel % r.up_stride == 0, "generator.up_kernel must be a multiple of up_stride");
    require((r.up_kernel - r.up_stride) % 2 == 0, "generator.up_kernel - up_stride must be even");
    require(r.resblock_kernel % 2 == 1, "generator.resblock_kernel must be odd");
    require(!r.resblock_dilations.empty(), "generator.resblock_dilations must not be empty");
    for (auto d : r.resblock_dilations) require(d >= 1, "generator.resblock_dilations entries must be >= 1");
    require(r.leaky_slope >= 0.0, "generator.leaky_slope must be >= 0");
    require(r.mamba.d_state >= 1 && r.mamba.expand >= 1 && r.mamba.conv_width >= 1,
            "generator.mamba sizes must be positive");
    require(r.mamba.dt_min > 0.0 && r.mamba.dt_min <= r.mamba.dt_max, "generator.mamba dt range invalid");
  }

  [[nodiscard]] std::int64_t multiple() const { return std::int64_t{1} << resolved().depth; }

  bool operator==(const GeneratorConfig&) const = default;
};

namespace gen {

inline torch::Tensor leaky(const torch::Tensor& x, double slope) {
  return torch::leaky_relu(x, slope);
}

/// conv -> channel LayerNorm -> LeakyReLU, plus a residual (1x1 conv when widths differ).
class StemEmbedBlockImpl : public torch::nn::Module {
 public:
  StemEmbedBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, double slope) : slope_(slope) {
    conv = register_module("conv", nn::WNConv1d(nn::Conv1dSpec::same(in, out, kernel)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({out})));
    if (in != out) {
      nn::Conv1dSpec s;
      s.in = in;
      s.out = out;
      shortcut = register_module("shortcut", nn::WNConv1d(s));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = leaky(nn::channel_layer_norm(conv(x), norm), slope_);
    return h + (shortcut ? shortcut(x) : x);
  }

  static std::int64_t parameter_count(std::int64_t in, std::int64_t out, std::int64_t kernel) {
    std::int64_t n = in * out * kernel + out + 2 * out;
    if (in != out) n += in * out + out;
    return n;
  }

  nn::WNConv1d conv{nullptr}, shortcut{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  double slope_;
};
TORCH_MODULE(StemEmbedBlock);

/// Waveform (B, 1, T) -> (B, C0, T): 1 -> stem_width projection, then the
/// stem blocks; the last block lifts to the first schedule width.
class StemImpl : public torch::nn::Module {
 public:
  explicit StemImpl(const GeneratorConfig& cfg) {
    input = register_module("input", nn::WNConv1d(nn::Conv1dSpec::same(1, cfg.stem_width, cfg.stem_kernel)));
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (std::int64_t i = 0; i < cfg.stem_blocks; ++i) {
      const auto out = i + 1 == cfg.stem_blocks ? cfg.channel_schedule.front() : cfg.stem_width;
      blocks->push_back(StemEmbedBlock(cfg.stem_width, out, cfg.stem_kernel, cfg.leaky_slope));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    wum::detail::require(x.dim() == 3 && x.size(1) == 1, "stem: expected (batch, 1, length) input");
    wum::detail::require(x.size(2) >= 16, "stem: input must have at least 16 samples");
    auto h = input(x);
    for (auto& b : *blocks) h = b->as<StemEmbedBlockImpl>()->forward(h);
    return h;
  }

  static std::int64_t parameter_count(const GeneratorConfig& cfg) {
    std::int64_t n = cfg.stem_width * cfg.stem_kernel + cfg.stem_width;
    for (std::int64_t i = 0; i < cfg.stem_blocks; ++i) {
      const auto out = i + 1 == cfg.stem_blocks ? cfg.channel_schedule.front() : cfg.stem_width;
      n += StemEmbedBlockImpl::parameter_count(cfg.stem_width, out, cfg.stem_kernel);
    }
    return n;
  }

  nn::WNConv1d input{nullptr};
  torch::nn::ModuleList blocks{nullptr};
};
TORCH_MODULE(Stem);

/// Stack of MambaBlocks applied along time on (B, C, T).
class MambaStackImpl : public torch::nn::Module {
 public:
  MambaStackImpl(std::int64_t channels, std::int64_t count, const ssm::MambaConfig& cfg) {
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (std::int64_t i = 0; i < count; ++i) blocks->push_back(ssm::MambaBlock(channels, cfg));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    if (blocks->is_empty()) return x;
    auto h = x.transpose(1, 2);
    for (auto& b : *blocks) h = b->as<ssm::MambaBlockImpl>()->forward(h);
    return h.transpose(1, 2);
  }

  [[nodiscard]] std::size_t size() const { return blocks->size(); }

  torch::nn::ModuleList blocks{nullptr};
};
TORCH_MODULE(MambaStack);

/// Channel projection -> MambaBlocks -> optional average pool (2, 2).
class DownBlockImpl : public torch::nn::Module {
 public:
  DownBlockImpl(std::int64_t in, std::int64_t out, bool pool, const GeneratorConfig& cfg) : pool_(pool) {
    proj = register_module("proj", nn::WNConv1d(nn::Conv1dSpec::same(in, out, cfg.down_kernel)));
    mamba = register_module("mamba", MambaStack(out, cfg.no_mamba ? 0 : cfg.mamba_blocks, cfg.mamba));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    wum::detail::require(x.dim() == 3, "down block: expected (batch, channels, time)");
    if (pool_) wum::detail::require(x.size(2) % 2 == 0, "down block: time length must be even");
    auto h = mamba(proj(x));
    return pool_ ? torch::avg_pool1d(h, {2}, {2}) : h;
  }

  static std::int64_t parameter_count(std::int64_t in, std::int64_t out, const GeneratorConfig& cfg) {
    const std::int64_t m = cfg.no_mamba ? 0 : cfg.mamba_blocks;
    return in * out * cfg.down_kernel + out + m * ssm::MambaBlockImpl::parameter_count(out, cfg.mamba);
  }

  nn::WNConv1d proj{nullptr};
  MambaStack mamba{nullptr};

 private:
  bool pool_;
};
TORCH_MODULE(DownBlock);

/// x + conv_d2(lrelu(conv_d1(lrelu(x)))) for the configured dilations.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(std::int64_t channels, std::int64_t kernel, const std::vector<std::int64_t>& dilations,
                    double slope)
      : slope_(slope) {
    convs = register_module("convs", torch::nn::ModuleList());
    for (auto d : dilations) convs->push_back(nn::WNConv1d(nn::Conv1dSpec::same(channels, channels, kernel, d)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = x;
    for (auto& c : *convs) h = c->as<nn::WNConv1dImpl>()->forward(leaky(h, slope_));
    return x + h;
  }

  static std::int64_t parameter_count(std::int64_t channels, std::int64_t kernel, std::size_t n_dilations) {
    return static_cast<std::int64_t>(n_dilations) * (channels * channels * kernel + channels);
  }

  torch::nn::ModuleList convs{nullptr};

 private:
  double slope_;
};
TORCH_MODULE(ResidualBlock);

/// Transposed conv doubling time -> + skip -> MambaBlocks -> ResidualBlock.
class UpBlockImpl : public torch::nn::Module {
 public:
  UpBlockImpl(std::int64_t in, std::int64_t out, const GeneratorConfig& cfg) : out_(out) {
    nn::ConvTranspose1dSpec s;
    s.in = in;
    s.out = out;
    s.kernel = cfg.up_kernel;
    s.stride = cfg.up_stride;
    s.padding = (cfg.up_kernel - cfg.up_stride) / 2;
    up = register_module("up", nn::WNConvTranspose1d(s));
    mamba = register_module("mamba", MambaStack(out, cfg.no_mamba ? 0 : cfg.mamba_blocks, cfg.mamba));
    res = register_module("res", ResidualBlock(out, cfg.resblock_kernel, cfg.resblock_dilations, cfg.leaky_slope));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip) {
    wum::detail::require(x.dim() == 3 && skip.dim() == 3, "up block: expected (batch, channels, time) tensors");
    wum::detail::require(skip.size(0) == x.size(0) && skip.size(1) == out_ && skip.size(2) == 2 * x.size(2),
                         "up block: skip must be (batch, " + std::to_string(out_) + ", 2 * time)");
    return res(mamba(up(x) + skip));
  }

  static std::int64_t parameter_count(std::int64_t in, std::int64_t out, const GeneratorConfig& cfg) {
    const std::int64_t m = cfg.no_mamba ? 0 : cfg.mamba_blocks;
    return in * out * cfg.up_kernel + out + m * ssm::MambaBlockImpl::parameter_count(out, cfg.mamba) +
           ResidualBlockImpl::parameter_count(out, cfg.resblock_kernel, cfg.resblock_dilations.size());
  }

  nn::WNConvTranspose1d up{nullptr};
  MambaStack mamba{nullptr};
  ResidualBlock res{nullptr};

 private:
  std::int64_t out_;
};
TORCH_MODULE(UpBlock);

}  // namespace gen

/// Waveform U-Net. Input and output are (B, T) or (B, 1, T) at 48 kHz.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config) : config_(config), cfg_(config.resolved()) {
    config.validate();
    const auto& s = cfg_.channel_schedule;
    const auto depth = cfg_.depth;
    stem = register_module("stem", gen::Stem(cfg_));
    downs = register_module("downs", torch::nn::ModuleList());
    for (std::int64_t k = 0; k < depth; ++k) {
      const auto out = k + 1 < depth ? s[k + 1] : cfg_.bottleneck_dim;
      downs->push_back(gen::DownBlock(s[k], out, true, cfg_));
    }
    bottleneck = register_module("bottleneck", gen::DownBlock(cfg_.bottleneck_dim, cfg_.bottleneck_dim, false, cfg_));
    ups = register_module("ups", torch::nn::ModuleList());
    for (std::int64_t k = depth - 1; k >= 0; --k) {
      const auto in = k + 1 < depth ? s[k + 1] : cfg_.bottleneck_dim;
      ups->push_back(gen::UpBlock(in, s[k], cfg_));
    }
    head = register_module("head", nn::WNConv1d(nn::Conv1dSpec::same(s.front(), 1, cfg_.out_kernel)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    wum::detail::require(x.dim() == 2 || (x.dim() == 3 && x.size(1) == 1),
                         "generator: expected (batch, length) or (batch, 1, length) input");
    wum::detail::require(x.size(-1) >= 1 && x.size(0) >= 1, "generator: empty input");
    auto wave = x.dim() == 2 ? x.unsqueeze(1) : x;
    const auto length = wave.size(2);
    const auto padded = pad_to_multiple(wave);

    auto h = stem(padded);
    std::vector<torch::Tensor> skips;
    for (auto& d : *downs) {
      skips.push_back(h);
      h = d->as<gen::DownBlockImpl>()->forward(h);
    }
    h = bottleneck(h);
    for (std::size_t i = 0; i < ups->size(); ++i) {
      h = (*ups)[i]->as<gen::UpBlockImpl>()->forward(h, skips[skips.size() - 1 - i]);
    }
    auto y = torch::tanh(head(h) + padded).slice(2, 0, length);
    return x.dim() == 2 ? y.squeeze(1) : y;
  }

  /// Reflect-pad right to a multiple of 2^depth (replicate when the pad exceeds the signal).
  [[nodiscard]] torch::Tensor pad_to_multiple(const torch::Tensor& wave) const {
    const auto length = wave.size(2);
    const auto m = std::int64_t{1} << cfg_.depth;
    auto target = (length + m - 1) / m * m;
    target = std::max<std::int64_t>(target, 16);
    const auto pad = target - length;
    if (pad == 0) return wave;
    namespace F = torch::nn::functional;
    if (pad < length) return F::pad(wave, F::PadFuncOptions({0, pad}).mode(torch::kReflect));
    return F::pad(wave, F::PadFuncOptions({0, pad}).mode(torch::kReplicate));
  }

  [[nodiscard]] const GeneratorConfig& config() const { return config_; }
  [[nodiscard]] const GeneratorConfig& resolved_config() const { return cfg_; }

  gen::Stem stem{nullptr};
  torch::nn::ModuleList downs{nullptr}, ups{nullptr};
  gen::DownBlock bottleneck{nullptr};
  nn::WNConv1d head{nullptr};

 private:
  GeneratorConfig config_, cfg_;
};
TORCH_MODULE(Generator);

/// Closed-form trainable parameter count, layer by layer. Weight-norm
/// magnitudes are folded into their weights.
inline std::int64_t count_parameters(const GeneratorConfig& config) {
  config.validate();
  const auto cfg = config.resolved();
  const auto& s = cfg.channel_schedule;
  std::int64_t n = gen::StemImpl::parameter_count(cfg);
  for (std::int64_t k = 0; k < cfg.depth; ++k) {
    const auto out = k + 1 < cfg.depth ? s[k + 1] : cfg.bottleneck_dim;
    n += gen::DownBlockImpl::parameter_count(s[k], out, cfg);
    n += gen::UpBlockImpl::parameter_count(out, s[k], cfg);
  }
  n += gen::DownBlockImpl::parameter_count(cfg.bottleneck_dim, cfg.bottleneck_dim, cfg);
  n += s.front() * cfg.out_kernel + 1;
  return n;
}

/// Parameter count as stored by the framework, minus weight-norm magnitudes.
inline std::int64_t folded_parameter_count(torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.named_parameters()) {
    const auto& key = p.key();
    if (key.size() >= 8 && key.compare(key.size() - 8, 8, "weight_g") == 0) continue;
    n += p.value().numel();
  }
  return n;
}

}  // namespace wum
