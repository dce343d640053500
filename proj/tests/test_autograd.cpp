#include <gtest/gtest.h>

#include <random>

#include "trident/trident.hpp"

using namespace trident;

namespace {

Tensor randn(Dims dims, std::uint64_t seed, Real lo = -1.0, Real hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(lo, hi);
  std::vector<Real> v(product(dims));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(dims), std::move(v));
}

std::vector<Real> coeffs(std::size_t n) {
  std::vector<Real> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = std::cos(1.3 * static_cast<Real>(i) + 0.2);
  return c;
}

// Values kept away from relu's kink so central differences are smooth.
Tensor away_from_zero(Dims dims, std::uint64_t seed) {
  auto t = randn(std::move(dims), seed);
  auto d = t.mutable_data();
  for (auto& v : d) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

void expect_passes(const CheckReport& r) {
  EXPECT_TRUE(r.passed) << "max relative error " << r.max_relative_error << " at " << r.worst_index;
}

}  // namespace

TEST(GradCheck, Relu) {
  auto x = away_from_zero({2, 3, 2, 2}, 1);
  expect_passes(grad_check([](const Tensor& t) { return weighted_sum(relu(t), coeffs(t.numel())); }, x));
}

TEST(GradCheck, AddBothSides) {
  auto a = randn({3, 4}, 2), b = randn({3, 4}, 3);
  expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(add(t, b), coeffs(12)); }, a));
  expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(add(a, t), coeffs(12)); }, b));
}

TEST(GradCheck, Scale) {
  expect_passes(grad_check([](const Tensor& t) { return weighted_sum(scale(t, -2.5), coeffs(t.numel())); },
                           randn({5}, 4)));
}

TEST(GradCheck, BiasAdd) {
  auto x = randn({2, 3, 2, 2}, 5), b = randn({3}, 6);
  expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(bias_add(t, b), coeffs(24)); }, x));
  expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(bias_add(x, t), coeffs(24)); }, b));
}

TEST(GradCheck, MaxPool) {
  // Distinct values so the argmax is stable under the probe step.
  std::vector<Real> v(2 * 2 * 6 * 6);
  std::mt19937_64 rng(7);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<Real>(i);
  std::shuffle(v.begin(), v.end(), rng);
  Tensor x({2, 2, 6, 6}, v);
  expect_passes(grad_check([](const Tensor& t) {
    auto y = maxpool2d(t, 2, 2);
    return weighted_sum(y, coeffs(y.numel()));
  }, x));
}

TEST(GradCheck, AffineAllInputs) {
  auto x = randn({3, 4}, 8), w = randn({2, 4}, 9), b = randn({2}, 10);
  auto c = coeffs(6);
  expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(affine(t, w, b), c); }, x));
  expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(affine(x, t, b), c); }, w));
  expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(affine(x, w, t), c); }, b));
}

TEST(GradCheck, ConvInputAndWeightEveryDilation) {
  for (std::size_t d = 1; d <= 3; ++d)
    for (std::size_t stride : {1, 2})
      for (auto algo : {ConvAlgorithm::direct, ConvAlgorithm::lowered}) {
        auto spec = ConvSpec::same(3, 2, 2, stride, d);
        auto x = randn({1, 2, 7, 7}, 11 + d), w = randn({2, 2, 3, 3}, 20 + d);
        auto out = spec.output_extent(7);
        auto c = coeffs(2 * out * out);
        expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(conv2d(t, w, spec, algo), c); }, x));
        expect_passes(grad_check([&](const Tensor& t) { return weighted_sum(conv2d(x, t, spec, algo), c); }, w));
      }
}

TEST(GradCheck, ReshapeAndSum) {
  expect_passes(grad_check([](const Tensor& t) { return sum(scale(reshape(t, {6}), 3.0)); }, randn({2, 3}, 30)));
}

TEST(GradCheck, SmoothL1BothRegimes) {
  // Differences on either side of beta, none near the switch.
  Tensor pred({6}, {0.01, -0.02, 0.5, -0.7, 0.05, 2.0});
  std::vector<Real> target(6, 0.0), w = {1, 2, 0.5, 1, 0, 3};
  expect_passes(grad_check([&](const Tensor& t) { return smooth_l1(t, target, w, 1.0 / 9.0); }, pred));
}

TEST(GradCheck, BceWithLogits) {
  auto x = randn({8}, 31, -4.0, 4.0);
  std::vector<Real> t = {0, 1, 1, 0, 1, 0, 0, 1}, w = {1, 1, 0.5, 2, 0, 1, 1, 1};
  expect_passes(grad_check([&](const Tensor& v) { return bce_with_logits(v, t, w); }, x));
}

TEST(GradCheck, DetectionLossThroughHead) {
  // Random features through a real head and labels from real anchors.
  HeadConfig hc;
  hc.hidden = 4;
  hc.anchor_sizes = {8.0, 16.0};
  ParameterStore store;
  ParameterInit init(store, 5);
  DetectionHead head(store, 3, hc, init);
  auto feat = away_from_zero({2, 3, 3, 3}, 40);
  auto anchors = generate_anchors(3, 3, 8.0, hc.anchor_sizes, hc.anchor_ratios);
  std::vector<BoxXYWH> gts = {{2, 3, 10, 9}, {8, 6, 15, 16}};
  std::vector<std::vector<std::vector<AnchorLabel>>> labels(1);
  for (int img = 0; img < 2; ++img) labels[0].push_back(assign_labels(anchors, gts, {}, 0.5, 0.3));
  auto fn = [&](const Tensor& t) { return detection_loss({head.forward(t)}, labels).loss; };
  auto r = grad_check(fn, feat);
  expect_passes(r);
  // Head parameters as the variable too.
  auto& w = store.get("head.deltas.weight");
  auto original = w.value().detach();
  auto r2 = grad_check([&](const Tensor& t) {
    auto dst = w.value().mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
    auto o = head.forward(feat);
    // Rebuild deltas from the probe tensor so that the gradient reaches it.
    auto del = conv2d(relu(bias_add(conv2d(feat, store.get("head.hidden.weight"), ConvSpec{1, 1, 1, 0, 3, 4}),
                                    store.get("head.hidden.bias"))),
                      t, ConvSpec{1, 1, 1, 0, 4, 8});
    del = bias_add(del, store.get("head.deltas.bias"));
    return detection_loss({HeadOutputs{o.objectness, del, 2}}, labels).loss;
  }, original);
  expect_passes(r2);
}

TEST(GradCheck, CoverageCountExample) {
  // d/dx of sum(conv(x, ones)) counts the output positions each pixel feeds.
  auto fn = [](const Tensor& t) { return sum(conv2d(t, Tensor::full({1, 1, 3, 3}, 1.0), ConvSpec{3, 1, 1, 0, 1, 1})); };
  auto r = grad_check(fn, randn({1, 1, 4, 4}, 45));
  expect_passes(r);
  const std::vector<Real> coverage = {1, 2, 2, 1, 2, 4, 4, 2, 2, 4, 4, 2, 1, 2, 2, 1};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(r.analytic[i], coverage[i]) << i;
}

TEST(GradCheck, ConstantClosureGivesZeros) {
  auto r = grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, randn({4}, 50));
  EXPECT_TRUE(r.passed);
  for (auto v : r.analytic) EXPECT_EQ(v, 0.0);
  for (auto v : r.numeric) EXPECT_EQ(v, 0.0);
}

TEST(GradCheck, DetectsBrokenBackwardRule) {
  // y = x^2 recorded with a backward that forgets the factor 2.
  auto square_wrong = [](const Tensor& x) {
    std::vector<Real> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
    return record_op(x.dims(), std::move(out), {x}, [](detail::Node& self) {
      auto& in = *self.inputs[0];
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * in.data[i];
    });
  };
  auto r = grad_check([&](const Tensor& t) { return sum(square_wrong(t)); }, randn({5}, 60, 0.5, 1.5));
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_relative_error, 0.4);
}

TEST(GradCheck, RejectsNonScalarClosure) {
  EXPECT_THROW(grad_check([](const Tensor& t) { return relu(t); }, randn({3}, 70)), Error);
}
