#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dcl/analysis.hpp"
#include "dcl/dcl_block.hpp"
#include "dcl/train.hpp"

using namespace dcl;

namespace {

using Vecs = std::vector<std::vector<double>>;

std::vector<double> fuse_d(const Vecs& v, double eps) { return fuse<double>(std::span<const std::vector<double>>(v), eps); }

DclConfig fc_config(std::vector<std::size_t> m, std::size_t k2, DclStrategy s = DclStrategy::Deterministic) {
  DclConfig c;
  c.branch_filters = std::move(m);
  c.fused_channels = k2;
  c.strategy = s;
  return c;
}

std::vector<double> random_patch(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  for (auto& v : p) v = uniform(rng, -1, 1);
  return p;
}

// Draws states and patches until every projection at k is strictly positive.
struct Instance {
  DclState<double> state;
  std::vector<double> patch;
  std::size_t k;
};

Instance positive_instance(const DclConfig& cfg, std::size_t patch_len, Rng& rng, bool zero_bias) {
  for (;;) {
    Instance in{DclState<double>::random(cfg, patch_len, rng), random_patch(patch_len, rng),
                uniform_index(rng, cfg.fused_channels)};
    if (zero_bias)
      for (auto& b : in.state.fusion_bias) b.fill(0);
    const auto r = respond_at<double>(in.state, in.patch);
    bool ok = true;
    for (const auto& p : r.projection) ok = ok && p[in.k] > 0;
    if (ok) return in;
  }
}

}  // namespace

TEST(Fuse, TwoBranchArithmetic) {
  EXPECT_NEAR(fuse_d({{3}, {12}}, 0.01)[0], std::sqrt(36.01), 1e-15);
  EXPECT_NEAR(fuse_d({{3}, {12}}, 0.01)[0], 6.000833275, 1e-9);
}

TEST(Fuse, ZeroProductCollapsesToRootEpsilon) { EXPECT_NEAR(fuse_d({{0}, {7}}, 0.01)[0], 0.1, 1e-16); }

TEST(Fuse, ThreeBranchArithmetic) {
  EXPECT_NEAR(fuse_d({{1}, {1}, {1}}, 0.001)[0], std::cbrt(1.001), 1e-15);
  EXPECT_NEAR(fuse_d({{1}, {1}, {1}}, 0.001)[0], 1.000333222, 1e-9);
}

TEST(Fuse, Errors) {
  EXPECT_THROW(fuse_d({{-1e-9}, {1}}, 0.01), NegativeInput);
  EXPECT_THROW(fuse_d({{1, 2}, {1}}, 0.01), ShapeMismatch);
}

TEST(Fuse, Monotone) {
  Rng rng = make_rng(1);
  for (int i = 0; i < 200; ++i) {
    Vecs v{{uniform(rng, 0.01, 2)}, {uniform(rng, 0.01, 2)}, {uniform(rng, 0.01, 2)}};
    const double base = fuse_d(v, 1e-3)[0];
    v[uniform_index(rng, 3)][0] += uniform(rng, 1e-3, 1);
    EXPECT_GT(fuse_d(v, 1e-3)[0], base);
  }
}

TEST(Fuse, ScaleLawWithZeroEpsilon) {
  Rng rng = make_rng(2);
  for (std::size_t T : {2u, 3u}) {
    Vecs v(T, std::vector<double>(4));
    for (auto& vt : v)
      for (auto& e : vt) e = uniform(rng, 0, 3);
    const double alpha = uniform(rng, 0.1, 5);
    Vecs scaled = v;
    for (auto& e : scaled[0]) e *= alpha;
    const auto a = fuse_d(scaled, 0.0), b = fuse_d(v, 0.0);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a[k], std::pow(alpha, 1.0 / T) * b[k], 1e-12);
  }
}

TEST(FuseBackward, FiniteDifferences) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 2 + trial % 2, K = 3;
    const double eps = fusion_epsilon(T);
    Vecs v(T, std::vector<double>(K));
    for (auto& vt : v)
      for (auto& e : vt) e = uniform(rng, 0.05, 2);
    std::vector<double> dz(K);
    for (auto& e : dz) e = uniform(rng, -1, 1);
    const auto g = fuse_backward<double>(std::span<const std::vector<double>>(v), eps, dz);
    const double h = 1e-6;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) {
        Vecs p = v, m = v;
        p[t][k] += h;
        m[t][k] -= h;
        const double num = (fuse_d(p, eps)[k] - fuse_d(m, eps)[k]) / (2 * h) * dz[k];
        ASSERT_LT(std::abs(g[t][k] - num) / std::max({1.0, std::abs(g[t][k]), std::abs(num)}), 1e-6);
      }
  }
}

TEST(FuseBackward, ZeroFactorIsFinite) {
  const double c = 7.0;
  const std::vector<double> dz{1.0};
  const auto g = fuse_backward<double>(std::span<const std::vector<double>>(Vecs{{0}, {c}}), 0.01, dz);
  EXPECT_NEAR(g[0][0], c / (2 * std::sqrt(0.01)), 1e-12);
  EXPECT_EQ(g[1][0], 0.0);
}

TEST(FuseBackward, Symmetric) {
  const std::vector<double> dz{1.0, 0.5};
  const auto g = fuse_backward<double>(std::span<const std::vector<double>>(Vecs{{2, 3}, {2, 3}}), 0.01, dz);
  EXPECT_EQ(g[0], g[1]);
}

TEST(DclConfig, EpsilonIsDecimal) {
  EXPECT_EQ(fusion_epsilon(2), 0.01);
  EXPECT_EQ(fusion_epsilon(3), 0.001);
  EXPECT_EQ(fc_config({4, 4}, 16).epsilon(), 0.01);
}

TEST(DclConfig, Validation) {
  EXPECT_THROW(fc_config({4}, 16).validate(), InvalidConfig);
  EXPECT_THROW(fc_config({4, 0}, 16).validate(), InvalidConfig);
  EXPECT_THROW(fc_config({4, 4}, 16, DclStrategy::Stochastic).validate(), InvalidConfig);
  EXPECT_NO_THROW(fc_config({4, 4, 4}, 16, DclStrategy::Stochastic).validate());
  EXPECT_TRUE(fc_config({4, 4}, 16).within_budget());
  EXPECT_FALSE(fc_config({5, 4}, 16).within_budget());
}

TEST(DclConfig, BudgetViolationWarns) {
  auto spec = parse_arch("FC16-DCL2@6/8-OUT", Shape{1, 4, 4}, 10);
  EXPECT_FALSE(spec.warnings.empty());
}

TEST(SamplePair, UniformOverPairs) {
  Rng rng = make_rng(4);
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto p = sample_active_pair(3, rng);
    ASSERT_LT(p.first, p.second);
    ++counts[p];
  }
  ASSERT_EQ(counts.size(), 3u);
  const double sigma = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
  double chi2 = 0;
  for (auto& [pair, c] : counts) {
    EXPECT_NEAR(c, n / 3.0, 3 * sigma);
    chi2 += (c - n / 3.0) * (c - n / 3.0) / (n / 3.0);
  }
  // 2 degrees of freedom, 99.9th percentile
  EXPECT_LT(chi2, 13.82);
}

TEST(SamplePair, ReproducibleAndNeedsThreeBranches) {
  Rng a = make_rng(5), b = make_rng(5);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_active_pair(4, a), sample_active_pair(4, b));
  Rng r = make_rng(6);
  EXPECT_THROW(sample_active_pair(2, r), InvalidConfig);
  EXPECT_EQ(branch_pairs(3), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {0, 2}, {1, 2}}));
}

TEST(DclForward, TwoBranchEvalIsThePairFusion) {
  Rng rng = make_rng(7);
  const auto state = DclState<double>::random(fc_config({3, 3}, 4), 6, rng, 0.5);
  const auto patch = random_patch(6, rng);
  Tensor<double> x(Shape{1, 6, 1, 1}, patch);
  auto z = dcl_forward(state, Shape{6, 1, 1}, x, Mode::Eval, rng);
  auto train = dcl_forward(state, Shape{6, 1, 1}, x, Mode::Train, rng);
  const auto r = respond_at<double>(state, patch);
  const auto ref = fuse_d({r.fused_in[0], r.fused_in[1]}, 0.01);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(z[k], ref[k], 1e-15);
    EXPECT_EQ(z[k], train[k]);
  }
}

TEST(DclForward, ThreeBranchEvalHandEnumeration) {
  // 1 position, patch of 2, one filter per branch, K2 = 2
  DclState<double> s;
  s.config = fc_config({1, 1, 1}, 2, DclStrategy::Stochastic);
  s.patch = 2;
  const double theta[3][2] = {{1.0, 0.5}, {0.25, 2.0}, {-1.0, 3.0}};
  const double w[3][2] = {{2.0, 0.5}, {1.0, 3.0}, {0.5, 0.25}};
  for (int t = 0; t < 3; ++t) {
    s.branch_weights.push_back(Tensor<double>::from(Shape{1, 2}, {theta[t][0], theta[t][1]}));
    s.branch_bias.push_back(Tensor<double>::from(Shape{1}, {0.1}));
    s.fusion_weights.push_back(Tensor<double>::from(Shape{1, 2}, {w[t][0], w[t][1]}));
    s.fusion_bias.push_back(Tensor<double>::from(Shape{2}, {0.0, 0.0}));
  }
  const double x0 = 0.4, x1 = 0.3;
  Tensor<double> x = Tensor<double>::from(Shape{1, 2, 1, 1}, {x0, x1});
  Rng rng = make_rng(8);
  auto z = dcl_forward(s, Shape{2, 1, 1}, x, Mode::Eval, rng);
  // y = relu(theta.x + 0.1): 0.65, 0.8, 0.6
  const double y[3] = {0.65, 0.8, 0.6};
  for (std::size_t k = 0; k < 2; ++k) {
    const double v0 = w[0][k] * y[0], v1 = w[1][k] * y[1], v2 = w[2][k] * y[2];
    const double expect =
        (std::sqrt(v0 * v1 + 0.01) + std::sqrt(v0 * v2 + 0.01) + std::sqrt(v1 * v2 + 0.01)) / 3.0;
    EXPECT_NEAR(z[k], expect, 1e-12);
  }
}

TEST(DclForward, IdenticalBranchesEqualAnyPair) {
  Rng rng = make_rng(9);
  auto one = DclState<double>::random(fc_config({2, 2}, 3), 5, rng, 0.6);
  DclState<double> s;
  s.config = fc_config({2, 2, 2}, 3, DclStrategy::Stochastic);
  s.patch = 5;
  for (int t = 0; t < 3; ++t) {
    s.branch_weights.push_back(one.branch_weights[0]);
    s.branch_bias.push_back(one.branch_bias[0]);
    s.fusion_weights.push_back(one.fusion_weights[0]);
    s.fusion_bias.push_back(one.fusion_bias[0]);
  }
  auto patch = random_patch(5, rng);
  Tensor<double> x(Shape{1, 5, 1, 1}, patch);
  auto z = dcl_forward(s, Shape{5, 1, 1}, x, Mode::Eval, rng);
  const auto r = respond_at<double>(s, patch);
  const auto pair = fuse_d({r.fused_in[0], r.fused_in[1]}, 0.01);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(z[k], pair[k], 1e-15);
}

TEST(DclForward, StochasticEvalPermutationInvariant) {
  Rng rng = make_rng(10);
  auto s = DclState<double>::random(fc_config({2, 3, 4}, 5, DclStrategy::Stochastic), 6, rng, 0.7);
  Tensor<double> x(Shape{2, 6, 1, 1});
  for (auto& v : x.vec()) v = uniform(rng, -1, 1);
  auto z = dcl_forward(s, Shape{6, 1, 1}, x, Mode::Eval, rng);
  const std::size_t perm[3] = {2, 0, 1};
  DclState<double> p;
  p.patch = 6;
  p.config = s.config;
  p.config.branch_filters.clear();
  for (std::size_t t : perm) {
    p.config.branch_filters.push_back(s.config.branch_filters[t]);
    p.branch_weights.push_back(s.branch_weights[t]);
    p.branch_bias.push_back(s.branch_bias[t]);
    p.fusion_weights.push_back(s.fusion_weights[t]);
    p.fusion_bias.push_back(s.fusion_bias[t]);
  }
  auto zp = dcl_forward(p, Shape{6, 1, 1}, x, Mode::Eval, rng);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], zp[i], 1e-15);
}

TEST(DclForward, StochasticTrainUsesSampledPairWithSquareRoot) {
  Rng rng = make_rng(11);
  auto s = DclState<double>::random(fc_config({2, 2, 2}, 3, DclStrategy::Stochastic), 4, rng, 0.8);
  const auto patch = random_patch(4, rng);
  Tensor<double> x(Shape{1, 4, 1, 1}, patch);
  Rng step = make_rng(12), copy = make_rng(12);
  LayerCache<double> cache;
  auto z = dcl_forward(s, Shape{4, 1, 1}, x, Mode::Train, step, &cache);
  const auto pair = sample_active_pair(3, copy);
  const auto r = respond_at<double>(s, patch);
  const auto ref = fuse_d({r.fused_in[pair.first], r.fused_in[pair.second]}, 0.01);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(z[k], ref[k], 1e-15);
  EXPECT_EQ(cache.indices, (std::vector<std::size_t>{pair.first, pair.second}));
}

TEST(DclForward, ConvFormBranchesShareGrid) {
  DclConfig c = fc_config({3, 2}, 6);
  c.kernel = 3;
  c.stride = 2;
  c.pad = 1;
  DclLayer<double> layer("dcl", Shape{2, 7, 7}, c);
  EXPECT_EQ(layer.geometry().out_h, 4u);
  Rng rng = make_rng(13);
  auto params = layer.make_params(rng);
  Tensor<double> x(Shape{2, 2, 7, 7});
  for (auto& v : x.vec()) v = uniform(rng, 0, 1);
  LayerCache<double> cache;
  auto z = layer.forward(x, params, Mode::Train, rng, cache);
  EXPECT_EQ(z.shape(), Shape({2, 6, 4, 4}));
  for (std::size_t t = 0; t < 2; ++t)
    EXPECT_EQ(DclLayer<double>::cached_branch(cache, t).dim(1), 2u * 16u);
  c.stride = 3;
  c.pad = 0;
  EXPECT_THROW(DclLayer<double>("dcl", Shape{2, 7, 7}, c), NonIntegralOutput);
}

TEST(DclState, CountsMatchAnalyzer) {
  Rng rng = make_rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 2 + uniform_index(rng, 2), C = 1 + uniform_index(rng, 6), u = 1 + uniform_index(rng, 4);
    std::vector<std::size_t> M(T);
    for (auto& m : M) m = 1 + uniform_index(rng, 8);
    const std::size_t K2 = 1 + uniform_index(rng, 20);
    DclConfig c = fc_config(M, K2);
    c.kernel = u;
    DclLayer<float> layer("dcl", Shape{C, u + 3, u + 3}, c);
    Rng init = make_rng(trial);
    auto params = layer.make_params(init);
    const auto st = layer.state(params);
    const Cost cost = dcl_cost(u, C, K2, M, 4, 4);
    EXPECT_EQ(st.weight_count(), cost.params);
    EXPECT_EQ(st.bias_count(), cost.bias);
    std::size_t n = 0;
    for (const auto& p : params)
      if (!p.is_bias) n += p.value.size();
    EXPECT_EQ(n, cost.params);
  }
}

TEST(Compositional, TwoByTwoFourTerms) {
  Rng rng = make_rng(15);
  auto in = positive_instance(fc_config({2, 2}, 1), 5, rng, true);
  const auto e = compositional_expand<double>(in.state, in.patch, in.k);
  EXPECT_EQ(e.terms, 4u);
  const auto r = respond_at<double>(in.state, in.patch);
  const double z = fuse_d(r.fused_in, 0.0)[in.k];
  EXPECT_NEAR(e.value, z * z, 1e-9);
}

TEST(Compositional, ThreeBranchesEightTerms) {
  Rng rng = make_rng(16);
  auto in = positive_instance(fc_config({2, 2, 2}, 2), 5, rng, true);
  const auto e = compositional_expand<double>(in.state, in.patch, in.k);
  EXPECT_EQ(e.terms, 8u);
  const double z = fuse_d(respond_at<double>(in.state, in.patch).fused_in, 0.0)[in.k];
  EXPECT_NEAR(e.value, z * z * z, 1e-9);
}

TEST(Compositional, RandomInstancesMatchFusedPower) {
  Rng rng = make_rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 2 + trial % 2;
    std::vector<std::size_t> M(T);
    for (auto& m : M) m = 1 + uniform_index(rng, 4);
    auto in = positive_instance(fc_config(M, 1 + uniform_index(rng, 3)), 4, rng, trial % 4 == 0);
    const auto e = compositional_expand<double>(in.state, in.patch, in.k);
    const double z = fuse_d(respond_at<double>(in.state, in.patch).fused_in, 0.0)[in.k];
    ASSERT_NEAR(e.value, std::pow(z, static_cast<double>(T)), 1e-9) << trial;
  }
}

TEST(Compositional, ZeroProjectionRowGivesZero) {
  Rng rng = make_rng(18);
  auto in = positive_instance(fc_config({3, 2}, 2), 4, rng, true);
  for (std::size_t i = 0; i < 3; ++i) in.state.fusion_weights[0][i * 2 + in.k] = 0;
  const auto e = compositional_expand<double>(in.state, in.patch, in.k);
  EXPECT_EQ(e.value, 0.0);
  EXPECT_EQ(fuse_d(respond_at<double>(in.state, in.patch).fused_in, 0.0)[in.k], 0.0);
}

TEST(Compositional, NegativeProjectionRejected) {
  Rng rng = make_rng(19);
  auto in = positive_instance(fc_config({2, 2}, 1), 4, rng, true);
  for (auto& w : in.state.fusion_weights[1].vec()) w = -std::abs(w) - 0.1;
  in.state.fusion_bias[1].fill(-0.1);
  EXPECT_THROW(compositional_expand<double>(in.state, in.patch, 0), PreconditionViolated);
  EXPECT_THROW(bcnn_equivalence<double>(in.state, in.patch, 0), PreconditionViolated);
}

TEST(Bcnn, RandomInstancesAgree) {
  Rng rng = make_rng(20);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = positive_instance(fc_config({1 + uniform_index(rng, 4), 1 + uniform_index(rng, 4)}, 3), 4, rng,
                                trial % 3 == 0);
    const auto c = bcnn_equivalence<double>(in.state, in.patch, in.k);
    const double z = respond_at<double>(in.state, in.patch).z[in.k];
    ASSERT_NEAR(c.dcl_sq, z * z - 0.01, 1e-12);
    ASSERT_NEAR(c.dcl_sq, c.bilinear, 1e-9) << trial;
  }
}

TEST(Bcnn, ThreeByFourAndRankOneU) {
  Rng rng = make_rng(21);
  auto in = positive_instance(fc_config({3, 4}, 2), 5, rng, true);
  const auto ref = make_bcnn_reference(in.state);
  EXPECT_EQ(ref.U.shape(), Shape({4, 5, 2}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        EXPECT_EQ(ref.U.at({i, j, k}), in.state.fusion_weights[0][i * 2 + k] * in.state.fusion_weights[1][j * 2 + k]);
  const auto c = bcnn_equivalence<double>(in.state, in.patch, in.k);
  EXPECT_NEAR(c.dcl_sq, c.bilinear, 1e-9);
}

TEST(Bcnn, ZeroColumnAndScaleInvariance) {
  Rng rng = make_rng(22);
  auto in = positive_instance(fc_config({3, 3}, 2), 4, rng, true);
  const auto base = bcnn_equivalence<double>(in.state, in.patch, in.k);
  auto scaled = in.state;
  const double alpha = 3.5;
  for (std::size_t i = 0; i < 3; ++i) {
    scaled.fusion_weights[0][i * 2 + in.k] *= alpha;
    scaled.fusion_weights[1][i * 2 + in.k] /= alpha;
  }
  const auto s = bcnn_equivalence<double>(scaled, in.patch, in.k);
  EXPECT_NEAR(s.dcl_sq, base.dcl_sq, 1e-12);
  EXPECT_NEAR(s.bilinear, base.bilinear, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) in.state.fusion_weights[0][i * 2 + in.k] = 0;
  const auto z = bcnn_equivalence<double>(in.state, in.patch, in.k);
  EXPECT_NEAR(z.dcl_sq, 0.0, 1e-15);
  EXPECT_EQ(z.bilinear, 0.0);
}

TEST(DclNetwork, ExtractStoreRoundTrip) {
  auto p = arch_preset("dcl-a2-tiny");
  auto spec = parse_arch(p.arch, p.input_shape, p.num_classes);
  Network<double> net(spec, 1);
  const std::size_t at = spec.index_of("dcl3");
  auto st = extract_dcl_state(net, at);
  for (auto& w : st.fusion_weights[1].vec()) w += 1.0;
  store_dcl_state(net, at, st);
  EXPECT_EQ(extract_dcl_state(net, at).fusion_weights[1].vec(), st.fusion_weights[1].vec());
  EXPECT_THROW(extract_dcl_state(net, 0), NoDclBlock);
}

TEST(DclNetwork, InactiveBranchBitUnchanged) {
  auto p = arch_preset("dcl-a3s-tiny");
  Network<float> net(parse_arch(p.arch, p.input_shape, p.num_classes), 2);
  Sgd<float> sgd(net.params(), 0.9, 5e-4);
  Rng data = make_rng(23);
  Tensor<float> x(Shape{8, 1, 16, 16});
  for (auto& v : x.vec()) v = static_cast<float>(uniform01(data));
  std::vector<int> y{0, 1, 2, 3, 4, 5, 6, 7};
  for (int iter = 0; iter < 3; ++iter) {
    const auto before = net.params();
    Rng step = make_rng(24, iter);
    auto r = net.forward(x, y, Mode::Train, step);
    auto g = net.backward(r.cache);
    sgd.step(net.mutable_params(), g.params, g.active, 0.1);
    std::size_t inactive = 0, changed = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const bool same = before[i].value.vec() == net.params()[i].value.vec();
      if (!g.active[i]) {
        ++inactive;
        EXPECT_TRUE(same) << before[i].name;
        EXPECT_NE(before[i].name.find("dcl"), std::string::npos);
      } else if (!same) {
        ++changed;
      }
    }
    // one branch: conv weight, conv bias, projection weight, projection bias
    EXPECT_EQ(inactive, 4u);
    EXPECT_GT(changed, 0u);
  }
}
