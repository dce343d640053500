#include <gtest/gtest.h>

#include <random>

#include "trident/trident.hpp"
#include "oracles.hpp"

using namespace trident;

namespace {

Tensor random_tensor(Dims dims, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  std::vector<Real> v(product(dims));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(dims), std::move(v));
}

// Scatter a k x k kernel into its zero-inserted (k + (k-1)(d-1))^2 form.
Tensor expand_kernel(const Tensor& w, std::size_t d) {
  const auto co = w.dim(0), ci = w.dim(1), k = w.dim(2);
  const auto e = k + (k - 1) * (d - 1);
  std::vector<Real> out(co * ci * e * e, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) out[((o * ci + c) * e + i * d) * e + j * d] = w.at(o, c, i, j);
  return Tensor({co, ci, e, e}, std::move(out));
}

}  // namespace

TEST(Conv, DilatedOnesExample) {
  auto x = Tensor::full({1, 1, 5, 5}, 1.0);
  auto w = Tensor::full({1, 1, 3, 3}, 1.0);
  ConvSpec spec{3, 1, 2, 2, 1, 1};
  for (auto algo : {ConvAlgorithm::direct, ConvAlgorithm::lowered}) {
    auto y = conv2d(x, w, spec, algo);
    ASSERT_EQ(y.dims(), (Dims{1, 1, 5, 5}));
    EXPECT_EQ(y.at(0, 0, 2, 2), 9.0);
    EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  }
}

TEST(Conv, CenterDeltaIsIdentity) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 1, 6, 7}, rng);
  std::vector<Real> k(9, 0.0);
  k[4] = 1.0;
  auto y = conv2d(x, Tensor({1, 1, 3, 3}, k), ConvSpec::same(3, 1, 1));
  ASSERT_EQ(y.dims(), x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv, EffectiveExtentAndSamePadding) {
  for (std::size_t d = 1; d <= 4; ++d) {
    auto s = ConvSpec::same(3, 1, 1, 1, d);
    EXPECT_EQ(s.padding, d);
    EXPECT_EQ(s.effective_extent(), 3 + 2 * (d - 1));
    EXPECT_EQ(s.output_extent(11), 11u);
  }
}

TEST(Conv, MatchesExpandedKernel) {
  std::mt19937_64 rng(11);
  for (std::size_t d = 1; d <= 3; ++d) {
    auto x = random_tensor({1, 2, 9, 8}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto dilated = conv2d(x, w, ConvSpec{3, 1, d, d, 2, 3});
    auto e = expand_kernel(w, d);
    auto plain = conv2d(x, e, ConvSpec{e.dim(2), 1, 1, d, 2, 3});
    ASSERT_EQ(dilated.dims(), plain.dims());
    for (std::size_t i = 0; i < plain.numel(); ++i) EXPECT_NEAR(dilated.data()[i], plain.data()[i], 1e-12);
    auto summed = oracle::expanded_conv(x, w, d, d);
    ASSERT_EQ(summed.size(), dilated.numel());
    for (std::size_t i = 0; i < summed.size(); ++i) EXPECT_NEAR(dilated.data()[i], summed[i], 1e-12);
  }
}

TEST(Conv, LoweredMatchesDirectForwardAndBackward) {
  std::mt19937_64 rng(5);
  for (std::size_t stride : {1, 2})
    for (std::size_t d : {1, 2, 3}) {
      auto xv = random_tensor({2, 3, 10, 9}, rng);
      auto wv = random_tensor({4, 3, 3, 3}, rng);
      auto spec = ConvSpec::same(3, 3, 4, stride, d);
      std::vector<std::vector<Real>> outs, gx, gw;
      for (auto algo : {ConvAlgorithm::direct, ConvAlgorithm::lowered}) {
        auto x = xv.detach(true), w = wv.detach(true);
        auto y = conv2d(x, w, spec, algo);
        outs.emplace_back(y.data().begin(), y.data().end());
        std::vector<Real> coeff(y.numel());
        for (std::size_t i = 0; i < coeff.size(); ++i) coeff[i] = std::sin(0.37 * static_cast<Real>(i));
        backward(weighted_sum(y, coeff));
        gx.emplace_back(x.grad().begin(), x.grad().end());
        gw.emplace_back(w.grad().begin(), w.grad().end());
      }
      for (std::size_t i = 0; i < outs[0].size(); ++i) EXPECT_NEAR(outs[0][i], outs[1][i], 1e-9);
      for (std::size_t i = 0; i < gx[0].size(); ++i) EXPECT_NEAR(gx[0][i], gx[1][i], 1e-9);
      for (std::size_t i = 0; i < gw[0].size(); ++i) EXPECT_NEAR(gw[0][i], gw[1][i], 1e-9);
    }
}

TEST(Conv, PointwiseLoweredMatchesDirect) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 5, 4, 6}, rng);
  auto w = random_tensor({3, 5, 1, 1}, rng);
  ConvSpec spec{1, 1, 1, 0, 5, 3};
  auto a = conv2d(x, w, spec, ConvAlgorithm::direct);
  auto b = conv2d(x, w, spec, ConvAlgorithm::lowered);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Conv, OutputExtentFormula) {
  // H' = floor((H + 2 pad - (k-1) d - 1) / stride) + 1
  for (std::size_t h = 5; h < 14; ++h)
    for (std::size_t stride : {1, 2, 3})
      for (std::size_t d : {1, 2, 3}) {
        ConvSpec s{3, stride, d, 1, 1, 1};
        if (h + 2 < 2 * d + 1) continue;
        EXPECT_EQ(s.output_extent(h), (h + 2 - 2 * d - 1) / stride + 1);
      }
}

TEST(Conv, ShapeMismatchNamesDimension) {
  auto x = Tensor::zeros({1, 2, 5, 5});
  auto w = Tensor::zeros({1, 3, 3, 3});
  try {
    conv2d(x, w, ConvSpec{3, 1, 1, 1, 3, 1});
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Conv, ZeroSizedOutputRejected) {
  auto x = Tensor::zeros({1, 1, 3, 3});
  auto w = Tensor::zeros({1, 1, 3, 3});
  EXPECT_THROW(conv2d(x, w, ConvSpec{3, 1, 3, 0, 1, 1}), Error);
}

TEST(Conv, ForwardIsDeterministic) {
  std::mt19937_64 a(21), b(21);
  auto x1 = random_tensor({1, 2, 8, 8}, a), w1 = random_tensor({2, 2, 3, 3}, a);
  auto x2 = random_tensor({1, 2, 8, 8}, b), w2 = random_tensor({2, 2, 3, 3}, b);
  auto y1 = conv2d(x1, w1, ConvSpec::same(3, 2, 2, 1, 2));
  auto y2 = conv2d(x2, w2, ConvSpec::same(3, 2, 2, 1, 2));
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1.data()[i], y2.data()[i]);
}
