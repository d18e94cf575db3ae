#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>

#include "test_support.hpp"
#include "wum/losses.hpp"

using namespace wum;
using testkit::to_tensor;
using testkit::white_noise;

namespace {

torch::Tensor noise(std::int64_t n, std::uint64_t seed, torch::Dtype dt = torch::kFloat32) {
  auto v = white_noise(static_cast<std::size_t>(n), seed, 0.3);
  return to_tensor(v).to(dt);
}

// independent log-mel: explicit DFT-free path via torch::fft on manually framed signal
torch::Tensor oracle_log_mel(const torch::Tensor& x, const dsp::MelConfig& cfg) {
  const int n_fft = cfg.stft.fft_size, hop = cfg.stft.hop, win = cfg.stft.window_length;
  auto xd = x.to(torch::kFloat64);
  auto padded = torch::nn::functional::pad(xd.view({1, 1, -1}),
                                           torch::nn::functional::PadFuncOptions({n_fft / 2, n_fft / 2})
                                               .mode(torch::kReflect))
                    .view({-1});
  auto w = torch::zeros({n_fft}, torch::kFloat64);
  const int off = (n_fft - win) / 2;
  for (int i = 0; i < win; ++i) w[off + i] = 0.5 - 0.5 * std::cos(2 * M_PI * i / win);
  const auto frames = x.size(0) / hop + 1;
  auto fb = dsp::mel_filterbank(cfg);
  std::vector<torch::Tensor> cols;
  for (std::int64_t t = 0; t < frames; ++t) {
    auto seg = padded.slice(0, t * hop, t * hop + n_fft) * w;
    cols.push_back(torch::fft::rfft(seg).abs());
  }
  auto mag = torch::stack(cols, 1);
  return torch::log(torch::matmul(fb, mag) + cfg.log_floor);
}

}  // namespace

TEST(MelLoss, ZeroOnIdentityAndSilence) {
  auto y = noise(9600, 1);
  EXPECT_EQ(mel_loss(y, y).item<float>(), 0.0f);
  auto z = torch::zeros({9600});
  EXPECT_EQ(mel_loss(z, z).item<float>(), 0.0f);
}

TEST(MelLoss, HalfAmplitudeMatchesOracle) {
  auto y = noise(9600, 2, torch::kFloat64);
  auto y_hat = 0.5 * y;
  dsp::MelConfig cfg;
  const double got = mel_loss(y, y_hat, cfg).item<double>();
  const double expect = (oracle_log_mel(y, cfg) - oracle_log_mel(y_hat, cfg)).abs().mean().item<double>();
  EXPECT_GT(got, 0.0);
  EXPECT_NEAR(got, expect, 1e-6 * expect);
}

TEST(MelLoss, LengthMismatchRejected) {
  EXPECT_THROW(mel_loss(torch::zeros({4096}), torch::zeros({4097})), InvalidInput);
}

TEST(StftLoss, ZeroOnIdentity) {
  auto y = noise(9600, 3);
  EXPECT_EQ(stft_loss_single(y, y, {1024, 100, 480}).item<float>(), 0.0f);
  EXPECT_EQ(multi_res_stft_loss(y, y).item<float>(), 0.0f);
}

TEST(StftLoss, DoubledSignalGivesOnePlusLogTwo) {
  auto y = noise(9600, 4, torch::kFloat64);
  dsp::StftConfig cfg{1024, 100, 480};
  const double v = stft_loss_single(y, 2.0 * y, cfg).item<double>();
  EXPECT_NEAR(v, 1.0 + std::log(2.0), 1e-6);
  // components separately: spectral convergence 1, log term log 2
  auto my = dsp::stft_magnitude(y, cfg, kStftEpsilon), mh = dsp::stft_magnitude(2.0 * y, cfg, kStftEpsilon);
  EXPECT_NEAR(((my - mh).norm() / my.norm()).item<double>(), 1.0, 1e-9);
  EXPECT_NEAR((my.log() - mh.log()).abs().mean().item<double>(), std::log(2.0), 1e-6);
}

TEST(StftLoss, Asymmetric) {
  auto y = noise(9600, 5);
  dsp::StftConfig cfg{1024, 100, 480};
  const double a = stft_loss_single(y, 2.0 * y, cfg).item<double>();
  const double b = stft_loss_single(2.0 * y, y, cfg).item<double>();
  EXPECT_GT(std::abs(a - b), 0.1);
}

TEST(StftLoss, SilentTargetStaysFinite) {
  auto z = torch::zeros({4096});
  auto v = stft_loss_single(z, noise(4096, 6), {1024, 100, 480});
  EXPECT_TRUE(std::isfinite(v.item<double>()));
}

TEST(MultiResStft, SingleResolutionDegenerates) {
  auto y = noise(9600, 7);
  dsp::StftConfig cfg{2048, 240, 1200};
  EXPECT_EQ(multi_res_stft_loss(y, 0.7 * y, std::vector{cfg}).item<float>(),
            stft_loss_single(y, 0.7 * y, cfg).item<float>());
}

TEST(MultiResStft, DefaultIsMeanOfThree) {
  auto y = noise(12000, 8, torch::kFloat64);
  auto y_hat = 0.6 * y + 0.01 * noise(12000, 9, torch::kFloat64);
  MultiResConfig cfg;
  ASSERT_EQ(cfg.resolutions.size(), 3u);
  double sum = 0;
  for (const auto& r : cfg.resolutions) sum += stft_loss_single(y, y_hat, r).item<double>();
  EXPECT_NEAR(multi_res_stft_loss(y, y_hat, cfg).item<double>(), sum / 3.0, 1e-12);
}

TEST(MultiResStft, ConfigNeedsTwoDistinct) {
  MultiResConfig c;
  EXPECT_NO_THROW(c.validate());
  c.resolutions = {{1024, 100, 480}};
  EXPECT_THROW(c.validate(), InvalidInput);
  c.resolutions = {{1024, 100, 480}, {1024, 100, 480}};
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(GanLoss, DiscriminatorArithmetic) {
  auto full = [](double v) { return std::vector<torch::Tensor>{torch::full({3, 7}, v), torch::full({2, 5}, v)}; };
  EXPECT_DOUBLE_EQ(gan_loss_d(full(1.0), full(0.0)).item<double>(), 0.0);
  EXPECT_NEAR(gan_loss_d(full(0.5), full(0.5)).item<double>(), 2 * 0.5, 1e-7);
  EXPECT_NEAR(gan_loss_d(full(0.0), full(1.0)).item<double>(), 2 * 2.0, 1e-7);
  EXPECT_THROW(gan_loss_d({}, {}), InvalidInput);
  EXPECT_THROW(gan_loss_d(full(1.0), {torch::zeros({1})}), InvalidInput);
}

TEST(GanLoss, GeneratorArithmetic) {
  auto full = [](double v) { return std::vector<torch::Tensor>{torch::full({4}, v), torch::full({9}, v)}; };
  EXPECT_DOUBLE_EQ(gan_loss_g(full(1.0)).item<double>(), 0.0);
  EXPECT_NEAR(gan_loss_g(full(0.0)).item<double>(), 2.0, 1e-7);
  EXPECT_NEAR(gan_loss_g(full(0.5)).item<double>(), 0.5, 1e-7);
  EXPECT_THROW(gan_loss_g({}), InvalidInput);
}

TEST(Composite, UnitComponentsGive56) {
  auto one = torch::ones({});
  EXPECT_DOUBLE_EQ(combine_losses(one, one, one, {}, LossWeights{45, 10, 0}).item<double>(), 56.0);
}

TEST(Composite, IdentityWithPerfectFakeIsZero) {
  auto y = noise(9600, 10);
  LossContext ctx;
  auto l = generator_total_loss(y, y, {torch::ones({5}), torch::ones({3})}, ctx);
  EXPECT_EQ(l.total.item<float>(), 0.0f);
  EXPECT_FALSE(l.l1.defined());
}

TEST(Composite, L1AblationAddsMeanAbsoluteError) {
  auto y = noise(9600, 11, torch::kFloat64);
  auto y_hat = 0.8 * y;
  std::vector<torch::Tensor> fake{torch::full({4}, 0.3, torch::kFloat64)};
  LossContext base;
  LossContext with_l1(dsp::MelConfig{}, MultiResConfig{}, LossWeights{45, 10, 1});
  auto a = generator_total_loss(y, y_hat, fake, base);
  auto b = generator_total_loss(y, y_hat, fake, with_l1);
  EXPECT_NEAR((b.total - a.total).item<double>(), (y - y_hat).abs().mean().item<double>(), 1e-9);
}

TEST(Composite, LinearInMelWeight) {
  auto y = noise(9600, 12, torch::kFloat64);
  auto y_hat = 0.5 * y;
  std::vector<torch::Tensor> fake{torch::full({4}, 0.2, torch::kFloat64)};
  LossContext w1(dsp::MelConfig{}, MultiResConfig{}, LossWeights{45, 10, 0});
  LossContext w2(dsp::MelConfig{}, MultiResConfig{}, LossWeights{90, 10, 0});
  auto a = generator_total_loss(y, y_hat, fake, w1);
  auto b = generator_total_loss(y, y_hat, fake, w2);
  EXPECT_NEAR((b.total - a.total).item<double>(), 45.0 * a.mel.item<double>(), 1e-9);
}

TEST(Losses, TimeReversalInvariance) {
  // L - 1 divisible by every hop so reversed frames land on reversed centres
  const std::int64_t n = 38401;
  auto y = noise(n, 13, torch::kFloat64);
  auto y_hat = 0.5 * y + 0.05 * noise(n, 14, torch::kFloat64);
  auto ry = y.flip(0), rh = y_hat.flip(0);
  EXPECT_NEAR(mel_loss(y, y_hat).item<double>(), mel_loss(ry, rh).item<double>(), 1e-5);
  EXPECT_NEAR(multi_res_stft_loss(y, y_hat).item<double>(), multi_res_stft_loss(ry, rh).item<double>(), 1e-5);
}

TEST(Losses, NonNegative) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto y = noise(6000, 100 + s), y_hat = noise(6000, 200 + s);
    EXPECT_GE(mel_loss(y, y_hat).item<double>(), 0.0);
    EXPECT_GE(multi_res_stft_loss(y, y_hat).item<double>(), 0.0);
  }
}

namespace {

template <class F>
void expect_fd_gradient(F loss_of, std::int64_t n, std::uint64_t seed) {
  auto y = noise(n, seed, torch::kFloat64);
  auto y_hat = (0.7 * y + 0.1 * noise(n, seed + 1, torch::kFloat64)).requires_grad_(true);
  loss_of(y, y_hat).backward();
  auto grad = y_hat.grad().clone();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  torch::NoGradGuard ng;
  for (int k = 0; k < 5; ++k) {
    const auto i = pick(rng);
    const double h = 1e-6;
    auto p = y_hat.detach().clone(), m = y_hat.detach().clone();
    p[i] += h;
    m[i] -= h;
    const double fd = (loss_of(y, p).template item<double>() - loss_of(y, m).template item<double>()) / (2 * h);
    const double ad = grad[i].template item<double>();
    EXPECT_NEAR(ad, fd, 1e-2 * std::max(std::abs(fd), 1e-8)) << "index " << i;
  }
}

}  // namespace

TEST(LossGradients, MelMatchesFiniteDifference) {
  expect_fd_gradient([](const torch::Tensor& y, const torch::Tensor& h) { return mel_loss(y, h); }, 6000, 20);
}

TEST(LossGradients, StftMatchesFiniteDifference) {
  expect_fd_gradient([](const torch::Tensor& y, const torch::Tensor& h) { return multi_res_stft_loss(y, h); }, 6000,
                     30);
}

TEST(LossGradients, GanMatchesFiniteDifference) {
  expect_fd_gradient(
      [](const torch::Tensor& y, const torch::Tensor& h) {
        return gan_loss_d({y.slice(0, 0, 3000), y.slice(0, 3000)}, {h.slice(0, 0, 3000), h.slice(0, 3000)}) +
               gan_loss_g({h.slice(0, 0, 2000), h.slice(0, 2000)});
      },
      6000, 40);
}
