#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "trident/boxes.hpp"

namespace trident {

// Detections and ground truth of one image.
struct EvalImage {
  int image_id = 0;
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
};

enum class SizeBucket { all, small, medium, large };

struct EvalConfig {
  std::vector<Real> iou_thresholds = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  std::size_t max_detections = 100;
  Real small_area = 32.0 * 32.0;   // small: area < small_area
  Real large_area = 96.0 * 96.0;   // large: area > large_area
  bool class_agnostic = true;

  void validate() const {
    require(!iou_thresholds.empty(), "eval: at least one IoU threshold is required");
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
      require(iou_thresholds[i] > 0.0 && iou_thresholds[i] <= 1.0, "eval: IoU threshold ", iou_thresholds[i],
              " outside (0,1]");
      require(i == 0 || iou_thresholds[i] > iou_thresholds[i - 1], "eval: IoU thresholds must strictly increase");
    }
    require(max_detections > 0, "eval: max_detections must be positive");
  }

  bool in_bucket(Real area, SizeBucket bucket) const {
    switch (bucket) {
      case SizeBucket::small: return area < small_area;
      case SizeBucket::medium: return area >= small_area && area <= large_area;
      case SizeBucket::large: return area > large_area;
      default: return true;
    }
  }
};

// Reported when a bucket holds no ground truth.
inline constexpr Real kUndefinedAP = -1.0;

struct Matching {
  std::vector<int> det_to_gt;    // -1 when unmatched
  std::vector<char> det_ignored;  // matched to an ignored GT
  std::vector<int> gt_to_det;
};

/// COCO greedy matching. Detections must be in descending score order. Each
/// detection takes the highest-IoU still-unmatched GT with IoU >= thresh,
/// preferring non-ignored GTs; a detection matched to an ignored GT is ignored.
inline Matching match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                 Real iou_thresh, const std::vector<char>& gt_ignore = {}) {
  for (std::size_t i = 1; i < dets.size(); ++i)
    require(dets[i - 1].score >= dets[i].score, "match_detections: detections must be sorted by score");
  auto ignored = [&](std::size_t g) { return !gt_ignore.empty() && gt_ignore[g]; };
  // Non-ignored GTs first, stable.
  std::vector<std::size_t> gorder(gts.size());
  std::iota(gorder.begin(), gorder.end(), std::size_t{0});
  std::stable_sort(gorder.begin(), gorder.end(), [&](auto a, auto b) { return ignored(a) < ignored(b); });

  Matching m{std::vector<int>(dets.size(), -1), std::vector<char>(dets.size(), 0), std::vector<int>(gts.size(), -1)};
  for (std::size_t d = 0; d < dets.size(); ++d) {
    Real best = std::min(iou_thresh, 1.0 - 1e-10);
    int match = -1;
    for (auto g : gorder) {
      if (m.gt_to_det[g] >= 0) continue;
      if (match >= 0 && !ignored(static_cast<std::size_t>(match)) && ignored(g)) break;
      Real o = iou(dets[d].box, gts[g].box);
      if (o < best) continue;
      best = o;
      match = static_cast<int>(g);
    }
    if (match < 0) continue;
    m.det_to_gt[d] = match;
    m.gt_to_det[static_cast<std::size_t>(match)] = static_cast<int>(d);
    m.det_ignored[d] = ignored(static_cast<std::size_t>(match));
  }
  return m;
}

namespace detail {

struct ScoredMatch {
  Real score;
  bool tp;
};

// 101-point interpolated precision over recall, from score-ordered matches.
inline Real interpolated_ap(std::vector<ScoredMatch> matches, std::size_t num_gt) {
  std::stable_sort(matches.begin(), matches.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  const std::size_t n = matches.size();
  std::vector<Real> recall(n), precision(n);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    matches[i].tp ? ++tp : ++fp;
    recall[i] = static_cast<Real>(tp) / static_cast<Real>(num_gt);
    precision[i] = static_cast<Real>(tp) / static_cast<Real>(tp + fp);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  Real total = 0.0;
  for (int k = 0; k <= 100; ++k) {
    Real r = k / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / 101.0;
}

}  // namespace detail

/// AP of one class at one IoU threshold restricted to one size bucket.
/// Out-of-bucket GTs are ignored; unmatched out-of-bucket detections too.
inline Real average_precision_at(const std::vector<EvalImage>& images, const EvalConfig& cfg, Real iou_thresh,
                                 SizeBucket bucket, int class_id) {
  std::vector<detail::ScoredMatch> matches;
  std::size_t num_gt = 0;
  for (const auto& img : images) {
    std::vector<GroundTruth> gts;
    std::vector<char> ignore;
    for (const auto& g : img.gts) {
      if (!cfg.class_agnostic && g.class_id != class_id) continue;
      gts.push_back(g);
      bool ig = !cfg.in_bucket(g.box.area(), bucket);
      ignore.push_back(ig);
      if (!ig) ++num_gt;
    }
    std::vector<Detection> dets;
    for (const auto& d : img.dets)
      if (cfg.class_agnostic || d.class_id == class_id) dets.push_back(d);
    std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (dets.size() > cfg.max_detections) dets.resize(cfg.max_detections);
    auto m = match_detections(dets, gts, iou_thresh, ignore);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (m.det_ignored[d]) continue;
      if (m.det_to_gt[d] < 0 && !cfg.in_bucket(dets[d].box.area(), bucket)) continue;
      matches.push_back({dets[d].score, m.det_to_gt[d] >= 0});
    }
  }
  if (num_gt == 0) return kUndefinedAP;
  return detail::interpolated_ap(std::move(matches), num_gt);
}

struct APResult {
  Real ap = kUndefinedAP;
  Real ap50 = kUndefinedAP;
  Real ap75 = kUndefinedAP;
  Real ap_s = kUndefinedAP;
  Real ap_m = kUndefinedAP;
  Real ap_l = kUndefinedAP;
};

inline Real mean_defined(const std::vector<Real>& values) {
  Real total = 0.0;
  std::size_t n = 0;
  for (auto v : values)
    if (v != kUndefinedAP) {
      total += v;
      ++n;
    }
  return n ? total / static_cast<Real>(n) : kUndefinedAP;
}

/// COCO-style AP (mean over thresholds and classes) plus AP50, AP75 and the
/// small/medium/large bucket APs.
inline APResult average_precision(const std::vector<EvalImage>& images, const EvalConfig& cfg = {}) {
  cfg.validate();
  std::set<int> classes;
  for (const auto& img : images)
    for (const auto& g : img.gts) classes.insert(cfg.class_agnostic ? 0 : g.class_id);
  if (classes.empty()) classes.insert(0);

  auto over_classes = [&](Real t, SizeBucket b) {
    std::vector<Real> per_class;
    for (int c : classes) per_class.push_back(average_precision_at(images, cfg, t, b, c));
    return mean_defined(per_class);
  };
  auto over_thresholds = [&](SizeBucket b) {
    std::vector<Real> per_t;
    for (Real t : cfg.iou_thresholds) per_t.push_back(over_classes(t, b));
    return mean_defined(per_t);
  };
  APResult r;
  r.ap = over_thresholds(SizeBucket::all);
  r.ap50 = over_classes(0.5, SizeBucket::all);
  r.ap75 = over_classes(0.75, SizeBucket::all);
  r.ap_s = over_thresholds(SizeBucket::small);
  r.ap_m = over_thresholds(SizeBucket::medium);
  r.ap_l = over_thresholds(SizeBucket::large);
  return r;
}

// --- results CSV: method, AP, AP50, AP75, AP_s, AP_m, AP_l

inline void write_results_header(std::ostream& os) { os << "method,AP,AP50,AP75,AP_s,AP_m,AP_l\n"; }

inline void write_results_row(std::ostream& os, const std::string& method, const APResult& r) {
  auto cell = [&](Real v) {
    if (v == kUndefinedAP)
      os << ",nan";
    else
      os << ',' << std::fixed << std::setprecision(4) << v;
  };
  os << method;
  cell(r.ap);
  cell(r.ap50);
  cell(r.ap75);
  cell(r.ap_s);
  cell(r.ap_m);
  cell(r.ap_l);
  os << '\n';
  os.unsetf(std::ios::fixed);
}

}  // namespace trident
