#include <gtest/gtest.h>
#include <torch/torch.h>

#include "test_support.hpp"
#include "wum/generator.hpp"

using namespace wum;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.stem_width = 4;
  c.channel_schedule = {8, 8, 16, 16};
  c.bottleneck_dim = 16;
  c.mamba.d_state = 4;
  return c;
}

void zero_all_convs(torch::nn::Module& m) {
  for (auto& c : nn::weight_norm_convs(m)) c->zero_();
}

}  // namespace

TEST(GeneratorConfig, DefaultsValidate) {
  GeneratorConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.multiple(), 16);
}

TEST(GeneratorConfig, CheckerboardGuard) {
  GeneratorConfig c;
  c.up_kernel = 3;
  EXPECT_THROW(c.validate(), InvalidInput);
  c.up_kernel = 5;
  EXPECT_THROW(c.validate(), InvalidInput);
  c.up_kernel = 6;
  EXPECT_NO_THROW(c.validate());
}

TEST(GeneratorConfig, ScheduleMustEndAtBottleneck) {
  GeneratorConfig c;
  c.bottleneck_dim = 512;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = GeneratorConfig{};
  c.channel_schedule = {32, 64, 128};
  EXPECT_THROW(c.validate(), InvalidInput);
  c = GeneratorConfig{};
  c.depth = 0;
  c.channel_schedule = {};
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(GeneratorConfig, DeepResolvesToFiveLevels) {
  GeneratorConfig c;
  c.deep = true;
  auto r = c.resolved();
  EXPECT_EQ(r.depth, 5);
  EXPECT_EQ(r.bottleneck_dim, 512);
  EXPECT_EQ(r.channel_schedule, (std::vector<std::int64_t>{32, 64, 128, 256, 512}));
  EXPECT_EQ(c.multiple(), 32);
}

TEST(Stem, ShapeAt2100) {
  torch::manual_seed(0);
  gen::Stem stem(GeneratorConfig{});
  auto y = stem(torch::randn({1, 1, 2100}));
  EXPECT_EQ(y.sizes(), (std::vector<std::int64_t>{1, 32, 2100}));
}

TEST(Stem, ZeroInputGivesTimeInvariantColumns) {
  torch::manual_seed(1);
  gen::Stem stem(GeneratorConfig{});
  torch::NoGradGuard ng;
  auto y = stem(torch::zeros({1, 1, 300}));
  auto first = y.select(2, 0).unsqueeze(2);
  EXPECT_LT((y - first).abs().max().item<float>(), 1e-6);
}

TEST(Stem, ReceptiveFieldIsLocal) {
  torch::manual_seed(2);
  gen::Stem stem(GeneratorConfig{});
  torch::NoGradGuard ng;
  auto x = torch::randn({1, 1, 200});
  auto x2 = x.clone();
  const std::int64_t t = 100;
  x2[0][0][t] += 0.5;
  auto diff = (stem(x2) - stem(x)).abs().amax(1).squeeze(0);
  for (std::int64_t i = 0; i < 200; ++i) {
    if (std::abs(i - t) > 9) EXPECT_EQ(diff[i].item<float>(), 0.0f) << "t'=" << i;
  }
  EXPECT_GT(diff[t].item<float>(), 0.0f);
}

TEST(Stem, RejectsShortInput) {
  gen::Stem stem(GeneratorConfig{});
  EXPECT_THROW(stem(torch::zeros({1, 1, 15})), InvalidInput);
}

TEST(DownBlock, ShapeAndOddTime) {
  torch::manual_seed(3);
  GeneratorConfig c;
  gen::DownBlock down(32, 64, true, c);
  torch::NoGradGuard ng;
  auto y = down(torch::randn({1, 32, 2100}));
  EXPECT_EQ(y.sizes(), (std::vector<std::int64_t>{1, 64, 1050}));
  EXPECT_THROW(down(torch::randn({1, 32, 2101})), InvalidInput);
}

TEST(DownBlock, PoolingOfConstantIsSameConstant) {
  GeneratorConfig c = small_config();
  c.no_mamba = true;
  gen::DownBlock down(8, 8, true, c);
  torch::NoGradGuard ng;
  auto x = torch::randn({1, 8, 1}).expand({1, 8, 64}).contiguous();
  auto pre = down->mamba(down->proj(x));
  auto post = down(x);
  EXPECT_TRUE(torch::allclose(post, pre.slice(2, 0, 32), 1e-6, 1e-6));
}

TEST(DownBlock, NoMambaBypassesSsm) {
  torch::manual_seed(4);
  GeneratorConfig c = small_config();
  c.no_mamba = true;
  gen::DownBlock down(8, 16, true, c);
  EXPECT_EQ(down->mamba->size(), 0u);
  torch::NoGradGuard ng;
  auto x = torch::randn({2, 8, 64});
  auto expect = torch::avg_pool1d(down->proj(x), {2}, {2});
  EXPECT_TRUE(torch::equal(down(x), expect));
}

TEST(UpBlock, ShapeContract) {
  torch::manual_seed(5);
  GeneratorConfig c;
  gen::UpBlock up(256, 128, c);
  torch::NoGradGuard ng;
  auto y = up(torch::randn({1, 256, 131}), torch::randn({1, 128, 262}));
  EXPECT_EQ(y.sizes(), (std::vector<std::int64_t>{1, 128, 262}));
  EXPECT_THROW(up(torch::randn({1, 256, 131}), torch::randn({1, 128, 261})), InvalidInput);
  EXPECT_THROW(up(torch::randn({1, 256, 131}), torch::randn({1, 64, 262})), InvalidInput);
}

TEST(UpBlock, TransposedConvCoversPhasesEvenly) {
  // oracle: output n = 2 i - p + j for input i and tap j; count taps per phase
  const int k = 4, s = 2, p = 1;
  std::array<int, 2> per_phase{0, 0};
  for (int j = 0; j < k; ++j) per_phase[static_cast<std::size_t>(((-p + j) % s + s) % s)]++;
  EXPECT_EQ(per_phase[0], per_phase[1]);

  nn::ConvTranspose1dSpec spec;
  spec.in = 1;
  spec.out = 1;
  nn::WNConvTranspose1d up(spec);
  torch::NoGradGuard ng;
  up->bias().zero_();
  up->direction().fill_(1.0);
  auto impulse = torch::zeros({1, 1, 16});
  impulse[0][0][8] = 1.0;
  auto y = up(impulse).squeeze();
  EXPECT_EQ(y.size(0), 32);
  EXPECT_EQ((y != 0).sum().item<std::int64_t>(), k);
  // constant input: every interior output sees the same tap sum
  auto flat = up(torch::ones({1, 1, 16})).squeeze().slice(0, 2, 30);
  EXPECT_LT((flat - flat[0]).abs().max().item<float>(), 1e-6);
}

TEST(ResidualBlock, ZeroWeightsIsIdentity) {
  gen::ResidualBlock rb(8, 3, std::vector<std::int64_t>{1, 3}, 0.1);
  zero_all_convs(*rb);
  torch::NoGradGuard ng;
  auto x = torch::randn({2, 8, 50});
  EXPECT_TRUE(torch::equal(rb(x), x));
}

TEST(Generator, PreservesLengthAcrossPadPaths) {
  torch::manual_seed(6);
  Generator g(small_config());
  torch::NoGradGuard ng;
  for (std::int64_t t : {16, 17, 31, 33, 1000, 33600, 33601}) {
    auto x = torch::rand({1, t}) * 2 - 1;
    auto y = g(x);
    EXPECT_EQ(y.sizes(), x.sizes()) << "T=" << t;
  }
  EXPECT_EQ(g(torch::zeros({2, 1, 48})).sizes(), (std::vector<std::int64_t>{2, 1, 48}));
  EXPECT_THROW(g(torch::zeros({1, 0})), InvalidInput);
}

TEST(Generator, DefaultConfigShapesAndRange) {
  torch::manual_seed(7);
  Generator g(GeneratorConfig{});
  torch::NoGradGuard ng;
  auto x = torch::rand({1, 33601}) * 2 - 1;
  auto y = g(x);
  EXPECT_EQ(y.sizes(), x.sizes());
  EXPECT_LT(y.abs().max().item<float>(), 1.0f);
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
}

TEST(Generator, ZeroConvsCollapseToTanhOfInput) {
  torch::manual_seed(8);
  Generator g(small_config());
  zero_all_convs(*g);
  torch::NoGradGuard ng;
  auto x = torch::rand({1, 500}) * 2 - 1;
  EXPECT_TRUE(torch::allclose(g(x), torch::tanh(x), 0.0, 1e-6));
}

TEST(Generator, EveryConvIsWeightNormalised) {
  Generator g(GeneratorConfig{});
  EXPECT_TRUE(nn::plain_convs(*g).empty());
  std::size_t wn = 0;
  for (const auto& p : g->named_parameters()) {
    const auto& key = p.key();
    if (key.ends_with("weight_v")) ++wn;
  }
  EXPECT_EQ(wn, nn::weight_norm_convs(*g).size());
  // stem 1 + 2 blocks + 1 shortcut, down 4 + bottleneck 1 each with a mamba conv pair, ups, head
  EXPECT_GT(wn, 20u);
}

TEST(Generator, DeepVariantBuildsAndPreservesShape) {
  torch::manual_seed(9);
  GeneratorConfig c = small_config();
  c.deep = true;
  Generator g(c);
  EXPECT_EQ(g->downs->size(), 5u);
  torch::NoGradGuard ng;
  for (std::int64_t t : {16, 33600, 33601}) EXPECT_EQ(g(torch::zeros({1, t})).size(1), t);
}

TEST(CountParameters, SingleConvExample) {
  nn::WNConv1d conv(nn::Conv1dSpec::same(1, 16, 4));
  EXPECT_EQ(conv->folded_parameter_count(), 80);
}

TEST(CountParameters, ClosedFormMatchesModules) {
  for (bool deep : {false, true}) {
    for (bool no_mamba : {false, true}) {
      GeneratorConfig c;
      c.deep = deep;
      c.no_mamba = no_mamba;
      Generator g(c);
      EXPECT_EQ(count_parameters(c), folded_parameter_count(*g)) << deep << no_mamba;
    }
  }
}

TEST(CountParameters, DefaultWithinBudget) {
  const auto n = count_parameters(GeneratorConfig{});
  EXPECT_GE(n, 2'000'000);
  EXPECT_LE(n, 8'000'000);
}

TEST(Generator, AllParametersReceiveGradient) {
  torch::manual_seed(10);
  Generator g(small_config());
  auto x = torch::rand({2, 256}) * 2 - 1;
  auto y = g(x);
  (y - x).pow(2).sum().backward();
  for (const auto& p : g->named_parameters()) {
    ASSERT_TRUE(p.value().grad().defined()) << p.key();
    EXPECT_TRUE(torch::isfinite(p.value().grad()).all().item<bool>()) << p.key();
    EXPECT_GT(p.value().grad().abs().sum().item<double>(), 0.0) << p.key();
  }
}
