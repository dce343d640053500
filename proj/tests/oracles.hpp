#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. None of these call into the library's own kernels.

#include <algorithm>
#include <set>
#include <vector>

#include "trident/trident.hpp"

namespace oracle {

using trident::Real;

/// Plain stride-1 convolution by literal summation after scattering the
/// kernel into its zero-inserted (k + (k-1)(d-1))^2 form.
inline std::vector<Real> expanded_conv(const trident::Tensor& x, const trident::Tensor& w, std::size_t d,
                                       std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t e = k + (k - 1) * (d - 1);
  std::vector<Real> big(co * c * e * e, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) big[((o * c + ci) * e + i * d) * e + j * d] = w.at(o, ci, i, j);
  const std::size_t ho = h + 2 * pad - e + 1, wo = wd + 2 * pad - e + 1;
  std::vector<Real> out(n * co * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          Real acc = 0.0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t i = 0; i < e; ++i)
              for (std::size_t j = 0; j < e; ++j) {
                long iy = static_cast<long>(y + i) - static_cast<long>(pad);
                long ix = static_cast<long>(xx + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += x.at(b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       big[((o * c + ci) * e + i) * e + j];
              }
          out[((b * co + o) * ho + y) * wo + xx] = acc;
        }
  return out;
}

/// Receptive field width found by enumerating every tap of every layer.
inline std::size_t enumerated_rf(const std::vector<trident::LayerSpec>& layers) {
  std::set<long> positions = {0};
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    std::set<long> next;
    for (long p : positions)
      for (std::size_t i = 0; i < it->kernel; ++i)
        next.insert(p * static_cast<long>(it->stride) - static_cast<long>(it->padding) +
                    static_cast<long>(i * it->dilation));
    positions = std::move(next);
  }
  return static_cast<std::size_t>(*positions.rbegin() - *positions.begin() + 1);
}

/// AP at one IoU threshold over all GT: greedy matching by score, then for
/// each of the 101 recall levels the best precision at any point reaching it.
inline Real ap(const std::vector<trident::EvalImage>& images, Real thresh) {
  struct Hit {
    Real score;
    bool tp;
  };
  std::vector<Hit> hits;
  std::size_t num_gt = 0;
  for (const auto& img : images) {
    num_gt += img.gts.size();
    auto dets = img.dets;
    std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    std::vector<bool> taken(img.gts.size(), false);
    for (const auto& d : dets) {
      int best = -1;
      Real best_iou = thresh;
      for (std::size_t g = 0; g < img.gts.size(); ++g) {
        Real o = trident::iou(d.box, img.gts[g].box);
        if (!taken[g] && o >= best_iou) best_iou = o, best = static_cast<int>(g);
      }
      if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
      hits.push_back({d.score, best >= 0});
    }
  }
  if (num_gt == 0) return -1.0;
  std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.score > b.score; });
  std::vector<std::pair<Real, Real>> pr;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i].tp;
    pr.push_back({static_cast<Real>(tp) / static_cast<Real>(num_gt), static_cast<Real>(tp) / static_cast<Real>(i + 1)});
  }
  Real total = 0.0;
  for (int k = 0; k <= 100; ++k) {
    Real best = 0.0;
    for (const auto& [r, p] : pr)
      if (r >= k / 100.0) best = std::max(best, p);
    total += best;
  }
  return total / 101.0;
}

/// Every assignment of up to `max_dets` detections onto `ng` disjoint GT
/// squares or onto empty space; calls fn(image) for each pattern.
template <typename Fn>
void for_each_match_pattern(std::size_t ng, std::size_t nd, Fn&& fn) {
  std::size_t patterns = 1;
  for (std::size_t i = 0; i < nd; ++i) patterns *= ng + 1;
  for (std::size_t p = 0; p < patterns; ++p) {
    trident::EvalImage img;
    for (std::size_t g = 0; g < ng; ++g) img.gts.push_back({{static_cast<Real>(40 * g), 0, 20, 20}, 0});
    std::size_t code = p;
    for (std::size_t i = 0; i < nd; ++i) {
      std::size_t target = code % (ng + 1);
      code /= ng + 1;
      trident::BoxXYWH b = target < ng ? img.gts[target].box : trident::BoxXYWH{static_cast<Real>(40 * i), 300, 20, 20};
      img.dets.push_back({b, 1.0 - 0.1 * static_cast<Real>(i), 0, 0});
    }
    fn(img);
  }
}

}  // namespace oracle
