#pragma once

#include <torch/torch.h>

#include <cmath>
#include <string>
#include <vector>

#include "wum/errors.hpp"

namespace wum::nn {

enum class PadMode { kZeros, kReplicate, kReflect };

/// Weight-normalised convolution: weight = g * v / ||v||, the norm taken
/// over every dim except the first. Subclasses differ only in the conv call.
class WeightNormConvImpl : public torch::nn::Module {
 public:
  [[nodiscard]] torch::Tensor weight() const {
    std::vector<std::int64_t> dims;
    for (std::int64_t d = 1; d < v_.dim(); ++d) dims.push_back(d);
    auto norm = v_.pow(2).sum(dims, /*keepdim=*/true).clamp_min(1e-24).sqrt();
    return g_ * (v_ / norm);
  }
  [[nodiscard]] const torch::Tensor& direction() const { return v_; }
  [[nodiscard]] const torch::Tensor& magnitude() const { return g_; }
  [[nodiscard]] const torch::Tensor& bias() const { return bias_; }

  /// Parameter count with g folded into the weight (what an exported model carries).
  [[nodiscard]] std::int64_t folded_parameter_count() const {
    return v_.numel() + (bias_.defined() ? bias_.numel() : 0);
  }

  /// Zeroes g and bias so the layer outputs exactly 0.
  void zero_() {
    torch::NoGradGuard no_grad;
    g_.zero_();
    if (bias_.defined()) bias_.zero_();
  }

 protected:
  void init_params(std::vector<std::int64_t> v_shape, std::int64_t fan_in, std::int64_t bias_len, bool with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
    v_ = register_parameter("weight_v", torch::empty(v_shape).uniform_(-bound, bound));
    std::vector<std::int64_t> g_shape(v_shape.size(), 1);
    g_shape[0] = v_shape[0];
    std::vector<std::int64_t> dims;
    for (std::size_t d = 1; d < v_shape.size(); ++d) dims.push_back(static_cast<std::int64_t>(d));
    g_ = register_parameter("weight_g", v_.detach().pow(2).sum(dims, true).sqrt().clone());
    if (with_bias) bias_ = register_parameter("bias", torch::empty({bias_len}).uniform_(-bound, bound));
  }

  torch::Tensor v_, g_, bias_;
};

struct Conv1dSpec {
  std::int64_t in = 1, out = 1, kernel = 1, stride = 1, dilation = 1, groups = 1;
  std::int64_t pad_left = 0, pad_right = 0;
  PadMode pad_mode = PadMode::kZeros;
  bool bias = true;

  /// Length-preserving padding for stride 1 (extra sample on the right for even extents).
  static Conv1dSpec same(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t dilation = 1,
                         PadMode mode = PadMode::kReplicate) {
    Conv1dSpec s;
    s.in = in;
    s.out = out;
    s.kernel = kernel;
    s.dilation = dilation;
    const std::int64_t extent = dilation * (kernel - 1);
    s.pad_left = extent / 2;
    s.pad_right = extent - extent / 2;
    s.pad_mode = mode;
    return s;
  }
};

class WNConv1dImpl : public WeightNormConvImpl {
 public:
  explicit WNConv1dImpl(const Conv1dSpec& spec) : spec_(spec) {
    wum::detail::require(spec.in % spec.groups == 0 && spec.out % spec.groups == 0,
                    "WNConv1d: channels must be divisible by groups");
    init_params({spec.out, spec.in / spec.groups, spec.kernel}, spec.in / spec.groups * spec.kernel, spec.out,
                spec.bias);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    torch::Tensor in = x;
    if (spec_.pad_left > 0 || spec_.pad_right > 0) {
      namespace F = torch::nn::functional;
      if (spec_.pad_mode == PadMode::kZeros) {
        in = F::pad(x, F::PadFuncOptions({spec_.pad_left, spec_.pad_right}));
      } else if (spec_.pad_mode == PadMode::kReplicate) {
        in = F::pad(x, F::PadFuncOptions({spec_.pad_left, spec_.pad_right}).mode(torch::kReplicate));
      } else {
        in = F::pad(x, F::PadFuncOptions({spec_.pad_left, spec_.pad_right}).mode(torch::kReflect));
      }
    }
    const std::int64_t stride[] = {spec_.stride}, no_pad[] = {0}, dilation[] = {spec_.dilation};
    return torch::conv1d(in, weight(), bias_, stride, no_pad, dilation, spec_.groups);
  }

  [[nodiscard]] const Conv1dSpec& spec() const { return spec_; }

 private:
  Conv1dSpec spec_;
};
TORCH_MODULE(WNConv1d);

/// Conv along the first spatial axis only: kernel (k, 1), stride (s, 1),
/// zero padding (p, 0). The layout used by period discriminators.
struct Conv2dSpec {
  std::int64_t in = 1, out = 1, kernel = 1, stride = 1, padding = 0;
};

class WNConv2dImpl : public WeightNormConvImpl {
 public:
  explicit WNConv2dImpl(const Conv2dSpec& spec) : spec_(spec) {
    init_params({spec.out, spec.in, spec.kernel, 1}, spec.in * spec.kernel, spec.out, true);
  }
  torch::Tensor forward(const torch::Tensor& x) {
    return torch::conv2d(x, weight(), bias_, {spec_.stride, 1}, {spec_.padding, 0});
  }
  [[nodiscard]] const Conv2dSpec& spec() const { return spec_; }

 private:
  Conv2dSpec spec_;
};
TORCH_MODULE(WNConv2d);

struct ConvTranspose1dSpec {
  std::int64_t in = 1, out = 1, kernel = 4, stride = 2, padding = 1;
};

/// Weight layout (in, out, k); the norm runs per input channel.
class WNConvTranspose1dImpl : public WeightNormConvImpl {
 public:
  explicit WNConvTranspose1dImpl(const ConvTranspose1dSpec& spec) : spec_(spec) {
    init_params({spec.in, spec.out, spec.kernel}, spec.out * spec.kernel, spec.out, true);
  }
  torch::Tensor forward(const torch::Tensor& x) {
    return torch::conv_transpose1d(x, weight(), bias_, spec_.stride, spec_.padding);
  }
  [[nodiscard]] const ConvTranspose1dSpec& spec() const { return spec_; }

 private:
  ConvTranspose1dSpec spec_;
};
TORCH_MODULE(WNConvTranspose1d);

/// LayerNorm over the channel axis of a (B, C, T) tensor.
inline torch::Tensor channel_layer_norm(const torch::Tensor& x, torch::nn::LayerNorm& norm) {
  return norm(x.transpose(1, 2)).transpose(1, 2);
}

/// Every weight-normalised conv reachable from `root`.
inline std::vector<std::shared_ptr<WeightNormConvImpl>> weight_norm_convs(torch::nn::Module& root) {
  std::vector<std::shared_ptr<WeightNormConvImpl>> out;
  for (auto& m : root.modules(/*include_self=*/true)) {
    if (auto wn = std::dynamic_pointer_cast<WeightNormConvImpl>(m)) out.push_back(wn);
  }
  return out;
}

/// Modules that are plain (un-normalised) torch convolutions.
inline std::vector<std::string> plain_convs(torch::nn::Module& root) {
  std::vector<std::string> out;
  for (auto& item : root.named_modules()) {
    auto& m = item.value();
    if (std::dynamic_pointer_cast<torch::nn::Conv1dImpl>(m) || std::dynamic_pointer_cast<torch::nn::Conv2dImpl>(m) ||
        std::dynamic_pointer_cast<torch::nn::ConvTranspose1dImpl>(m)) {
      out.push_back(item.key());
    }
  }
  return out;
}

}  // namespace wum::nn
