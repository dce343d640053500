#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "trident/parameter.hpp"
#include "trident/tensor.hpp"

namespace trident {

inline Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return record_op(x.dims(), std::move(out), {x}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.data[i] > 0.0) g[i] += self.grad[i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require(a.dims() == b.dims(), "add: shape mismatch ", to_string(a.dims()), " vs ", to_string(b.dims()));
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return record_op(a.dims(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor scale(const Tensor& x, Real factor) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return record_op(x.dims(), std::move(out), {x}, [factor](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

// Adds bias[c] to every element of channel c of an [N,C,...] tensor.
inline Tensor bias_add(const Tensor& x, const Tensor& bias) {
  require(x.rank() >= 2, "bias_add: input must have rank >= 2");
  require(bias.rank() == 1 && bias.dim(0) == x.dim(1), "bias_add: bias dims ", to_string(bias.dims()),
          " do not match input dimension 1 (channels) = ", x.dim(1));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real v = bias.data()[ch];
      Real* p = out.data() + (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += v;
    }
  return record_op(x.dims(), std::move(out), {x, bias}, [n, c, inner](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& bs = *self.inputs[1];
    if (in.requires_grad) {
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bs.requires_grad) {
      auto& g = bs.ensure_grad();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const Real* p = self.grad.data() + (b * c + ch) * inner;
          Real acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) acc += p[i];
          g[ch] += acc;
        }
    }
  });
}

inline Tensor bias_add(const Tensor& x, SharedParameter& bias) { return bias_add(x, bias.use()); }

/// Max pooling over square windows without padding. Ties route the gradient
/// to the first maximal element in scan order.
inline Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require(x.rank() == 4, "maxpool2d: input must be rank 4, got ", to_string(x.dims()));
  require(kernel > 0 && stride > 0, "maxpool2d: kernel and stride must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= kernel && w >= kernel, "maxpool2d: window ", kernel, " exceeds input ", h, "x", w);
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  std::vector<Real> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::size_t at = 0;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            auto idx = (p * h + oy * stride + i) * w + ox * stride + j;
            if (x.data()[idx] > best) {
              best = x.data()[idx];
              at = idx;
            }
          }
        auto o = (p * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = at;
      }
  return record_op({n, c, ho, wo}, std::move(out), {x}, [argmax = std::move(argmax)](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

/// y[n,o] = sum_f x[n,f] * w[o,f] + b[o]
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2, "affine: input must be rank 2 [N,F], got ", to_string(x.dims()));
  require(w.rank() == 2 && w.dim(1) == x.dim(1), "affine: weight dims ", to_string(w.dims()),
          " incompatible with input dimension 1 = ", x.dim(1));
  require(b.rank() == 1 && b.dim(0) == w.dim(0), "affine: bias dims ", to_string(b.dims()),
          " incompatible with weight dimension 0 = ", w.dim(0));
  const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  std::vector<Real> out(n * o);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < o; ++k) {
      Real acc = b.data()[k];
      for (std::size_t i = 0; i < f; ++i) acc += x.data()[r * f + i] * w.data()[k * f + i];
      out[r * o + k] = acc;
    }
  return record_op({n, o}, std::move(out), {x, w, b}, [n, f, o](detail::Node& self) {
    auto& xi = *self.inputs[0];
    auto& wi = *self.inputs[1];
    auto& bi = *self.inputs[2];
    const auto& g = self.grad;
    if (xi.requires_grad) {
      auto& gx = xi.ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < o; ++k)
          for (std::size_t i = 0; i < f; ++i) gx[r * f + i] += g[r * o + k] * wi.data[k * f + i];
    }
    if (wi.requires_grad) {
      auto& gw = wi.ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < o; ++k)
          for (std::size_t i = 0; i < f; ++i) gw[k * f + i] += g[r * o + k] * xi.data[r * f + i];
    }
    if (bi.requires_grad) {
      auto& gb = bi.ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < o; ++k) gb[k] += g[r * o + k];
    }
  });
}

inline Tensor reshape(const Tensor& x, Dims dims) {
  require(product(dims) == x.numel(), "reshape: ", to_string(x.dims()), " cannot become ", to_string(dims));
  return record_op(std::move(dims), std::vector<Real>(x.data().begin(), x.data().end()), {x},
                   [](detail::Node& self) {
                     auto& g = self.inputs[0]->ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   });
}

inline Tensor sum(const Tensor& x) {
  Real acc = 0.0;
  for (auto v : x.data()) acc += v;
  return record_op({1}, {acc}, {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

// sum_i weights[i] * x[i] with constant weights.
inline Tensor weighted_sum(const Tensor& x, std::vector<Real> weights) {
  require(weights.size() == x.numel(), "weighted_sum: ", weights.size(), " weights for ", x.numel(), " elements");
  Real acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x.data()[i];
  return record_op({1}, {acc}, {x}, [weights = std::move(weights)](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += weights[i] * self.grad[0];
  });
}

inline Real smooth_l1_value(Real d, Real beta) {
  Real a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

/// sum_i weights[i] * smoothL1(pred[i] - target[i]); quadratic inside |d| < beta.
inline Tensor smooth_l1(const Tensor& pred, std::vector<Real> target, std::vector<Real> weights, Real beta) {
  require(beta > 0.0, "smooth_l1: beta must be positive");
  require(target.size() == pred.numel() && weights.size() == pred.numel(),
          "smooth_l1: target/weight length must equal prediction size ", pred.numel());
  Real acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] != 0.0) acc += weights[i] * smooth_l1_value(pred.data()[i] - target[i], beta);
  return record_op({1}, {acc}, {pred},
                   [target = std::move(target), weights = std::move(weights), beta](detail::Node& self) {
                     auto& in = *self.inputs[0];
                     auto& g = in.ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       if (weights[i] == 0.0) continue;
                       Real d = in.data[i] - target[i];
                       Real dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
                       g[i] += self.grad[0] * weights[i] * dd;
                     }
                   });
}

inline Real bce_with_logits_value(Real x, Real t) {
  return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
}

inline Real sigmoid(Real x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// sum_i weights[i] * BCE(sigmoid(logits[i]), targets[i]), numerically stable form.
inline Tensor bce_with_logits(const Tensor& logits, std::vector<Real> targets, std::vector<Real> weights) {
  require(targets.size() == logits.numel() && weights.size() == logits.numel(),
          "bce_with_logits: target/weight length must equal logit count ", logits.numel());
  Real acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] != 0.0) acc += weights[i] * bce_with_logits_value(logits.data()[i], targets[i]);
  return record_op({1}, {acc}, {logits},
                   [targets = std::move(targets), weights = std::move(weights)](detail::Node& self) {
                     auto& in = *self.inputs[0];
                     auto& g = in.ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       if (weights[i] == 0.0) continue;
                       g[i] += self.grad[0] * weights[i] * (sigmoid(in.data[i]) - targets[i]);
                     }
                   });
}

}  // namespace trident
