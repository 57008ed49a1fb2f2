#include <gtest/gtest.h>

#include <cmath>

#include "dcl/analysis.hpp"
#include "dcl/gradcheck.hpp"
#include "dcl/layers.hpp"
#include "dcl/network.hpp"

using namespace dcl;

namespace {

Tensor<double> random_batch(const Shape& s, Rng& rng, double lo = 0, double hi = 1) {
  Tensor<double> t(s);
  for (auto& v : t.vec()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace

TEST(ParseArch, LenetString) {
  auto spec = parse_arch("C5@20-MP2S2-C5@50-MP2S2-FC500-D0.5-OUT", Shape{1, 28, 28}, 100);
  // 7 layers plus the appended softmax loss
  ASSERT_EQ(spec.size(), 8u);
  EXPECT_EQ(spec.layers.back().kind, LayerKind::SoftmaxLoss);
  EXPECT_EQ(spec.layers[4].kind, LayerKind::FullyConnected);
  EXPECT_EQ(spec.shapes[4], Shape({50, 4, 4}));
  EXPECT_EQ(spec.shapes[4].numel(), 800u);
  EXPECT_EQ(spec.layers[6].filters, 100u);
  EXPECT_EQ(spec.shapes.back(), Shape({100, 1, 1}));
}

TEST(ParseArch, OutAlone) {
  auto spec = parse_arch("OUT", Shape{12, 1, 1}, 10);
  ASSERT_EQ(spec.size(), 2u);
  EXPECT_EQ(spec.layers[0].kind, LayerKind::FullyConnected);
  EXPECT_EQ(spec.layers[0].filters, 10u);
  EXPECT_FALSE(spec.layers[0].relu);
}

TEST(ParseArch, MalformedTokenPosition) {
  try {
    parse_arch("C5@20-XX", Shape{1, 28, 28}, 10);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.token(), 2u);
  }
}

TEST(ParseArch, ShapeChainNamesLayer) {
  try {
    parse_arch("C5@4-C5@4-C5@4", Shape{1, 8, 8}, 10);
    FAIL() << "expected ShapeChainError";
  } catch (const ShapeChainError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2 (C5@4)"), std::string::npos) << e.what();
  }
}

TEST(ParseArch, ConvOptionsAndPoolForms) {
  auto spec = parse_arch("C3(S1)(P1)@8-MP3(S2)-C3(S1P1)@8-OUT", Shape{3, 8, 8}, 10);
  EXPECT_EQ(spec.layers[0].pad, 1u);
  EXPECT_EQ(spec.shapes[1], Shape({8, 8, 8}));
  EXPECT_EQ(spec.shapes[2], Shape({8, 4, 4}));
}

TEST(ParseArch, RenderRoundTrip) {
  for (const auto& name : arch_preset_names()) {
    auto p = arch_preset(name, 100);
    auto spec = parse_arch(p.arch, p.input_shape, p.num_classes);
    const std::string text = render_arch(spec);
    EXPECT_EQ(text, p.arch) << name;
    EXPECT_EQ(render_arch(parse_arch(text, p.input_shape, p.num_classes)), text);
  }
}

TEST(ParseArch, DclTokens) {
  auto spec = parse_arch("FC16-DCL3S@2,3,4/20-OUT", Shape{1, 8, 8}, 10);
  const auto& cfg = *spec.layers[1].dcl;
  EXPECT_EQ(cfg.branch_filters, (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_EQ(cfg.fused_channels, 20u);
  EXPECT_EQ(cfg.strategy, DclStrategy::Stochastic);
  EXPECT_THROW(parse_arch("DCL2S@4/8-OUT", Shape{1, 8, 8}, 10), Error);
}

TEST(Network, ZeroFinalWeightsGiveLogC) {
  Network<double> net(parse_arch("C3@4-FC8-OUT", Shape{1, 8, 8}, 10), 1);
  auto& p = net.mutable_params();
  p[p.size() - 2].value.fill(0);
  Rng rng = make_rng(1);
  auto x = random_batch(Shape{3, 1, 8, 8}, rng);
  std::vector<int> y{0, 4, 9};
  auto r = net.forward(x, y, Mode::Train, rng);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-15);
}

TEST(Network, LossDecreasesAsCorrectLogitGrows) {
  Tensor<double> probs;
  double prev = 1e300;
  for (double v : {0.0, 1.0, 5.0}) {
    auto logits = Tensor<double>::from(Shape{1, 3}, {v, 0.5, -0.5});
    const std::vector<int> y{0};
    const double loss = softmax_cross_entropy(logits, std::span<const int>(y), probs);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(Network, EvalIsDeterministic) {
  auto p = arch_preset("dcl-a3s-tiny");
  Network<double> net(parse_arch(p.arch, p.input_shape, p.num_classes), 3);
  Rng rng = make_rng(2);
  auto x = random_batch(Shape{4, 1, 16, 16}, rng);
  std::vector<int> y{1, 2, 3, 4};
  Rng r1 = make_rng(10), r2 = make_rng(99);
  auto a = net.forward(x, y, Mode::Eval, r1), b = net.forward(x, y, Mode::Eval, r2);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.logits.vec(), b.logits.vec());
  EXPECT_EQ(net.predict(x).vec(), a.logits.vec());
}

TEST(Network, ZeroLossWeightZeroGradients) {
  auto p = arch_preset("dcl-a2-tiny");
  Network<double> net(parse_arch(p.arch, p.input_shape, p.num_classes), 4);
  Rng rng = make_rng(3);
  auto x = random_batch(Shape{2, 1, 16, 16}, rng);
  std::vector<int> y{5, 6};
  auto r = net.forward(x, y, Mode::Train, rng);
  auto g = net.backward(r.cache, 0.0);
  for (const auto& t : g.params)
    for (double v : t.vec()) EXPECT_EQ(v, 0.0);
  for (double v : g.input.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Network, StaleCache) {
  auto p = arch_preset("lenet-tiny");
  Network<double> net(parse_arch(p.arch, p.input_shape, p.num_classes), 5);
  Rng rng = make_rng(4);
  auto x = random_batch(Shape{2, 1, 16, 16}, rng);
  std::vector<int> y{0, 1};
  auto eval = net.forward(x, y, Mode::Eval, rng);
  EXPECT_THROW(net.backward(eval.cache), StaleCache);
  auto r = net.forward(x, y, Mode::Train, rng);
  EXPECT_NO_THROW(net.backward(r.cache));
  Network<double> other(net);
  EXPECT_THROW(other.backward(r.cache), StaleCache);
  net.mutable_params();
  EXPECT_THROW(net.backward(r.cache), StaleCache);
}

TEST(Network, BatchShapeMismatch) {
  auto p = arch_preset("lenet-tiny");
  Network<double> net(parse_arch(p.arch, p.input_shape, p.num_classes), 5);
  Rng rng = make_rng(4);
  std::vector<int> y{0};
  EXPECT_THROW(net.forward(Tensor<double>(Shape{1, 1, 15, 15}), y, Mode::Eval, rng), ShapeChainError);
}

TEST(Network, CountsMatchAnalyzer) {
  for (const auto& name : arch_preset_names()) {
    if (name == "alexnet") continue;  // 62M floats; counted in the analysis tests
    auto p = arch_preset(name, 100);
    auto spec = parse_arch(p.arch, p.input_shape, p.num_classes);
    Network<float> net(spec, 1);
    const Cost c = spec_cost(spec);
    EXPECT_EQ(net.weight_count(), c.params) << name;
    EXPECT_EQ(net.bias_count(), c.bias) << name;
  }
}

TEST(Network, GlorotRangeAndZeroBiases) {
  auto p = arch_preset("lenet");
  Network<float> net(parse_arch(p.arch, p.input_shape, 100), 9);
  for (const auto& prm : net.params()) {
    if (prm.is_bias) {
      for (float v : prm.value.vec()) EXPECT_EQ(v, 0.0f);
      continue;
    }
    const auto& s = prm.value.shape();
    // fan_out is O (fully connected) or O k^2 (conv); O gives the wider bound
    const double limit = std::sqrt(6.0 / static_cast<double>(s.numel() / s[0] + s[0]));
    double widest = 0;
    for (float v : prm.value.vec()) widest = std::max(widest, static_cast<double>(std::abs(v)));
    EXPECT_LE(widest, limit + 1e-6) << prm.name;
    EXPECT_GT(widest, 0.0) << prm.name;
  }
}

TEST(Dropout, InvertedScalingMean) {
  DropoutLayer<double> d(0.5);
  Tensor<double> x(Shape{1, 10000, 1, 1}, 1.0);
  Rng rng = make_rng(6);
  LayerCache<double> cache;
  auto y = d.forward(x, {}, Mode::Train, rng, cache);
  double mean = 0;
  for (double v : y.vec()) mean += v;
  mean /= 10000.0;
  // each output is 0 or 2, sd 1 per element
  EXPECT_NEAR(mean, 1.0, 3.0 / 100.0);
  LayerCache<double> ec;
  EXPECT_EQ(d.forward(x, {}, Mode::Eval, rng, ec).vec(), x.vec());
}

TEST(Dropout, BackwardZeroesDroppedCoordinates) {
  DropoutLayer<double> d(0.3);
  Rng rng = make_rng(7);
  auto x = random_batch(Shape{2, 50, 1, 1}, rng, 0.5, 1.0);
  LayerCache<double> cache;
  auto y = d.forward(x, {}, Mode::Train, rng, cache);
  Tensor<double> dy(y.shape(), 1.0);
  std::vector<bool> active;
  auto dx = d.backward(x, y, dy, {}, cache, {}, active.begin());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0)
      EXPECT_EQ(dx[i], 0.0);
    else
      EXPECT_NEAR(dx[i], 1.0 / 0.7, 1e-15);
  }
}

TEST(Softmax, GradientIsProbsMinusOnehotOverBatch) {
  Rng rng = make_rng(8);
  auto logits = random_batch(Shape{3, 5}, rng, -2, 2);
  std::vector<int> y{1, 4, 0};
  Tensor<double> probs;
  softmax_cross_entropy(logits, std::span<const int>(y), probs);
  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto lp = logits, lm = logits;
    lp[i] += h;
    lm[i] -= h;
    Tensor<double> tmp;
    const double num = (softmax_cross_entropy(lp, std::span<const int>(y), tmp) -
                        softmax_cross_entropy(lm, std::span<const int>(y), tmp)) /
                       (2 * h);
    const std::size_t n = i / 5, c = i % 5;
    const double analytic = (probs[i] - (static_cast<int>(c) == y[n] ? 1.0 : 0.0)) / 3.0;
    EXPECT_NEAR(analytic, num, 1e-8);
  }
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_NEAR(relative_error(0.5, 0.5 + 1e-5), 1e-5, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(100, 101), 1.0 / 101);
}

TEST(GradCheck, DefaultSuitePasses) {
  double total = 0;
  for (const auto& name : default_gradcheck_suite()) {
    auto p = arch_preset(name);
    auto r = grad_check(parse_arch(p.arch, p.input_shape, p.num_classes), 1);
    EXPECT_TRUE(r.passed()) << name << " max err " << r.max_error();
    EXPECT_LT(r.max_error(), 1e-4);
    total += r.seconds;
  }
  EXPECT_LT(total, 60.0);
}

TEST(GradCheck, MixedTinyNet) {
  auto r = grad_check(parse_arch("C3@4-C3@4-FC16-DCL2@4/8-OUT", Shape{1, 8, 8}, 10), 2);
  EXPECT_TRUE(r.passed()) << r.max_error();
  bool saw_fusion = false;
  for (const auto& e : r.entries) saw_fusion = saw_fusion || e.name.find("fusion") != std::string::npos;
  EXPECT_TRUE(saw_fusion);
}

TEST(GradCheck, SmoothFcNet) {
  EXPECT_TRUE(grad_check(parse_arch("FC8-OUT", Shape{4, 1, 1}, 3), 3).passed());
}

TEST(GradCheck, StochasticPathAcrossSeeds) {
  auto p = arch_preset("dcl-a3s-tiny");
  auto spec = parse_arch(p.arch, p.input_shape, p.num_classes);
  // seed 6 has a ReLU/max kink within 1e-5 of a conv1 weight; a smaller step clears it
  for (std::uint64_t seed : {4, 5, 6}) {
    GradCheckOptions fine;
    fine.step = 1e-6;
    EXPECT_TRUE(grad_check(spec, seed).passed() || grad_check(spec, seed, fine).passed()) << seed;
  }
}

TEST(GradCheck, InputTransformIncluded) {
  auto spec = parse_arch("C3@4-FC8-OUT", Shape{1, 6, 6}, 3);
  spec.input_shift = 0.3;
  spec.input_scale = 2.5;
  EXPECT_TRUE(grad_check(spec, 3).passed());
}

TEST(Network, InputTransformEqualsPreScaledInput) {
  auto spec = parse_arch("C3@4-FC8-OUT", Shape{1, 6, 6}, 3);
  Network<double> plain(spec, 5);
  spec.input_shift = 0.2;
  spec.input_scale = 4.0;
  Network<double> shifted(spec, 5);
  Rng rng = make_rng(6);
  Tensor<double> x(Shape{2, 1, 6, 6});
  for (auto& v : x.vec()) v = uniform01(rng);
  Tensor<double> xs = x;
  for (auto& v : xs.vec()) v = (v - 0.2) * 4.0;
  EXPECT_EQ(shifted.predict(x).vec(), plain.predict(xs).vec());
}
