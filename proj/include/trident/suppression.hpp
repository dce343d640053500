#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trident/boxes.hpp"

namespace trident {

namespace detail {

// Indices ordered by (score desc, branch asc, insertion order).
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].branch < dets[b].branch;
  });
  return idx;
}

}  // namespace detail

/// Greedy hard NMS within each class. Survivors keep their scores and come
/// back in selection order.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, Real iou_thresh) {
  require(iou_thresh > 0.0 && iou_thresh <= 1.0, "nms: iou threshold must lie in (0,1], got ", iou_thresh);
  auto order = detail::score_order(dets);
  std::vector<char> removed(dets.size(), 0);
  std::vector<Detection> keep;
  for (std::size_t a = 0; a < order.size(); ++a) {
    auto i = order[a];
    if (removed[i]) continue;
    keep.push_back(dets[i]);
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      auto j = order[b];
      if (!removed[j] && dets[j].class_id == dets[i].class_id && iou(dets[i].box, dets[j].box) > iou_thresh)
        removed[j] = 1;
    }
  }
  return keep;
}

enum class SoftNmsMethod { linear, gaussian };

struct SoftNmsConfig {
  SoftNmsMethod method = SoftNmsMethod::gaussian;
  Real sigma = 0.5;
  Real linear_threshold = 0.3;
  Real score_floor = 0.001;
};

/// Soft-NMS: repeatedly select the best remaining box and decay the scores of
/// same-class boxes that overlap it.
///   linear:   s <- s * (1 - IoU)      when IoU > linear_threshold
///   gaussian: s <- s * exp(-IoU^2 / sigma)
/// Boxes whose score falls below score_floor are dropped.
inline std::vector<Detection> soft_nms(std::vector<Detection> dets, const SoftNmsConfig& cfg = {}) {
  require(cfg.sigma > 0.0, "soft_nms: sigma must be positive, got ", cfg.sigma);
  std::vector<std::size_t> insertion(dets.size());
  std::iota(insertion.begin(), insertion.end(), std::size_t{0});
  std::vector<Detection> out;
  while (!dets.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dets.size(); ++i) {
      const auto& a = dets[i];
      const auto& b = dets[best];
      if (a.score > b.score || (a.score == b.score && (a.branch < b.branch ||
                                                       (a.branch == b.branch && insertion[i] < insertion[best]))))
        best = i;
    }
    Detection picked = dets[best];
    out.push_back(picked);
    std::vector<Detection> rest;
    std::vector<std::size_t> rest_ins;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (i == best) continue;
      Detection d = dets[i];
      if (d.class_id == picked.class_id) {
        Real o = iou(picked.box, d.box);
        if (cfg.method == SoftNmsMethod::linear) {
          if (o > cfg.linear_threshold) d.score *= (1.0 - o);
        } else {
          d.score *= std::exp(-(o * o) / cfg.sigma);
        }
      }
      if (d.score < cfg.score_floor) continue;
      rest.push_back(d);
      rest_ins.push_back(insertion[i]);
    }
    dets = std::move(rest);
    insertion = std::move(rest_ins);
  }
  return out;
}

enum class SuppressorKind { nms, soft_nms };

struct SuppressorConfig {
  SuppressorKind kind = SuppressorKind::nms;
  Real nms_iou = 0.5;
  SoftNmsConfig soft;
  std::size_t max_detections = 0;  // 0 keeps everything
};

inline std::vector<Detection> suppress(const std::vector<Detection>& dets, const SuppressorConfig& cfg) {
  auto out = cfg.kind == SuppressorKind::nms ? nms(dets, cfg.nms_iou) : soft_nms(dets, cfg.soft);
  if (cfg.kind == SuppressorKind::soft_nms) {
    auto order = detail::score_order(out);
    std::vector<Detection> sorted;
    for (auto i : order) sorted.push_back(out[i]);
    out = std::move(sorted);
  }
  if (cfg.max_detections && out.size() > cfg.max_detections) out.resize(cfg.max_detections);
  return out;
}

/// Multi-branch merge: drop each branch's boxes outside that branch's scale
/// range, concatenate, then run a single per-class suppression pass.
inline std::vector<Detection> combine_branches(const std::vector<std::vector<Detection>>& per_branch,
                                               const std::vector<ValidRange>& ranges,
                                               const SuppressorConfig& cfg) {
  require(per_branch.size() == ranges.size(), "combine_branches: ", per_branch.size(), " branch outputs but ",
          ranges.size(), " valid ranges");
  std::vector<Detection> merged;
  for (std::size_t b = 0; b < per_branch.size(); ++b)
    for (const auto& d : per_branch[b])
      if (is_valid(d.box, ranges[b])) merged.push_back(d);
  return suppress(merged, cfg);
}

// --- detections JSON: [{image_id, class_id, x, y, w, h, score, branch}, ...]

struct ImageDetections {
  int image_id = 0;
  std::vector<Detection> detections;
};

inline nlohmann::json detections_to_json(const std::vector<ImageDetections>& images) {
  auto arr = nlohmann::json::array();
  for (const auto& img : images)
    for (const auto& d : img.detections)
      arr.push_back({{"image_id", img.image_id},
                     {"class_id", d.class_id},
                     {"x", d.box.x},
                     {"y", d.box.y},
                     {"w", d.box.w},
                     {"h", d.box.h},
                     {"score", d.score},
                     {"branch", d.branch}});
  return arr;
}

inline std::vector<ImageDetections> detections_from_json(const nlohmann::json& arr) {
  require(arr.is_array(), "detections JSON must be an array");
  std::vector<ImageDetections> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& e = arr[i];
    auto field = [&](const char* key) -> const nlohmann::json& {
      require(e.contains(key), "detections[", i, "] is missing field '", key, "'");
      return e.at(key);
    };
    int image_id = field("image_id").get<int>();
    Detection d{{field("x").get<Real>(), field("y").get<Real>(), field("w").get<Real>(), field("h").get<Real>()},
                field("score").get<Real>(),
                field("class_id").get<int>(),
                field("branch").get<int>()};
    if (out.empty() || out.back().image_id != image_id) out.push_back({image_id, {}});
    out.back().detections.push_back(d);
  }
  return out;
}

}  // namespace trident
