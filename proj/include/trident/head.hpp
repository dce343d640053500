#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "trident/boxes.hpp"
#include "trident/conv.hpp"
#include "trident/ops.hpp"
#include "trident/parameter.hpp"

namespace trident {

/// Anchors for an Hf x Wf feature map, centred on each cell's input-pixel
/// centre ((x + 0.5) * stride, (y + 0.5) * stride). Ratio is h / w.
/// Order follows the head's tensor layout: anchor a = size_idx * |ratios| +
/// ratio_idx is the slowest index, then y, then x.
inline std::vector<BoxXYWH> generate_anchors(std::size_t feat_h, std::size_t feat_w, Real stride,
                                             const std::vector<Real>& sizes, const std::vector<Real>& ratios) {
  require(!sizes.empty(), "generate_anchors: anchor sizes must not be empty");
  require(!ratios.empty(), "generate_anchors: anchor ratios must not be empty");
  require(stride > 0.0, "generate_anchors: stride must be positive");
  std::vector<BoxXYWH> anchors;
  anchors.reserve(feat_h * feat_w * sizes.size() * ratios.size());
  for (auto size : sizes)
    for (auto ratio : ratios) {
      require(size > 0.0 && ratio > 0.0, "generate_anchors: sizes and ratios must be positive");
      Real w = size / std::sqrt(ratio), h = size * std::sqrt(ratio);
      for (std::size_t y = 0; y < feat_h; ++y)
        for (std::size_t x = 0; x < feat_w; ++x)
          anchors.push_back(BoxXYWH::from_center((static_cast<Real>(x) + 0.5) * stride,
                                                 (static_cast<Real>(y) + 0.5) * stride, w, h));
    }
  return anchors;
}

using BoxDelta = std::array<Real, 4>;

// (dx / w_a, dy / h_a, log(w / w_a), log(h / h_a)) between box centres.
inline BoxDelta encode_delta(const BoxXYWH& anchor, const BoxXYWH& gt) {
  return {(gt.cx() - anchor.cx()) / anchor.w, (gt.cy() - anchor.cy()) / anchor.h, std::log(gt.w / anchor.w),
          std::log(gt.h / anchor.h)};
}

inline constexpr Real kMaxLogScale = 4.135166556742356;  // log(1000 / 16)

inline BoxXYWH decode_delta(const BoxXYWH& anchor, const BoxDelta& d) {
  Real cx = d[0] * anchor.w + anchor.cx();
  Real cy = d[1] * anchor.h + anchor.cy();
  Real w = anchor.w * std::exp(std::min(d[2], kMaxLogScale));
  Real h = anchor.h * std::exp(std::min(d[3], kMaxLogScale));
  return BoxXYWH::from_center(cx, cy, w, h);
}

enum class LabelState { negative, positive, ignore };

struct AnchorLabel {
  LabelState state = LabelState::negative;
  std::optional<std::size_t> matched_gt;
  std::optional<BoxDelta> regression_target;  // present iff positive
};

/// Scale-aware anchor labelling for one branch.
///
/// GTs outside `branch_range` take no part in matching. An anchor whose best
/// overlap with such an out-of-range GT exceeds iou_neg is ignored rather than
/// used as a negative. Remaining anchors follow max-IoU assignment, and every
/// in-range GT claims the anchor(s) that overlap it most.
inline std::vector<AnchorLabel> assign_labels(const std::vector<BoxXYWH>& anchors, const std::vector<BoxXYWH>& gts,
                                              const ValidRange& branch_range, Real iou_pos, Real iou_neg) {
  require(0.0 <= iou_neg && iou_neg <= iou_pos && iou_pos <= 1.0, "assign_labels: need 0 <= iou_neg (", iou_neg,
          ") <= iou_pos (", iou_pos, ") <= 1");
  branch_range.validate();
  for (std::size_t g = 0; g < gts.size(); ++g) validate_box(gts[g], "ground-truth box");

  std::vector<std::size_t> valid;
  std::vector<std::size_t> invalid;
  for (std::size_t g = 0; g < gts.size(); ++g) (is_valid(gts[g], branch_range) ? valid : invalid).push_back(g);

  const std::size_t na = anchors.size();
  std::vector<AnchorLabel> labels(na);
  std::vector<Real> best_valid(na, 0.0);
  std::vector<std::size_t> arg_valid(na, 0);
  std::vector<Real> gt_best(valid.size(), 0.0);
  std::vector<std::vector<Real>> overlaps(valid.size(), std::vector<Real>(na, 0.0));

  for (std::size_t a = 0; a < na; ++a) {
    Real worst_invalid = 0.0;
    for (auto g : invalid) worst_invalid = std::max(worst_invalid, iou(anchors[a], gts[g]));
    for (std::size_t k = 0; k < valid.size(); ++k) {
      Real o = iou(anchors[a], gts[valid[k]]);
      overlaps[k][a] = o;
      gt_best[k] = std::max(gt_best[k], o);
      if (o > best_valid[a]) {
        best_valid[a] = o;
        arg_valid[a] = valid[k];
      }
    }
    auto& l = labels[a];
    if (!valid.empty() && best_valid[a] >= iou_pos) {
      l.state = LabelState::positive;
    } else if (worst_invalid > iou_neg) {
      l.state = LabelState::ignore;
    } else if (best_valid[a] < iou_neg) {
      l.state = LabelState::negative;
    } else {
      l.state = LabelState::ignore;
    }
  }
  for (std::size_t k = 0; k < valid.size(); ++k) {
    if (gt_best[k] <= 0.0) continue;
    for (std::size_t a = 0; a < na; ++a)
      if (overlaps[k][a] == gt_best[k]) labels[a].state = LabelState::positive;
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (labels[a].state != LabelState::positive) continue;
    labels[a].matched_gt = arg_valid[a];
    labels[a].regression_target = encode_delta(anchors[a], gts[arg_valid[a]]);
  }
  return labels;
}

/// Keeps at most `count` labelled anchors (up to positive_fraction of them
/// positive); the rest become ignore. Selection is a seeded shuffle.
template <typename Rng>
void sample_labels(std::vector<AnchorLabel>& labels, std::size_t count, Real positive_fraction, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].state == LabelState::positive) pos.push_back(i);
    if (labels[i].state == LabelState::negative) neg.push_back(i);
  }
  auto keep_pos = std::min(pos.size(), static_cast<std::size_t>(static_cast<Real>(count) * positive_fraction));
  auto keep_neg = std::min(neg.size(), count - keep_pos);
  auto thin = [&](std::vector<std::size_t>& idx, std::size_t keep) {
    if (idx.size() <= keep) return;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = keep; i < idx.size(); ++i) {
      labels[idx[i]].state = LabelState::ignore;
      labels[idx[i]].matched_gt.reset();
      labels[idx[i]].regression_target.reset();
    }
  };
  thin(pos, keep_pos);
  thin(neg, keep_neg);
}

/// Raw head predictions for one branch over a batch.
struct HeadOutputs {
  Tensor objectness;  // [N, A, Hf, Wf] logits
  Tensor deltas;      // [N, 4A, Hf, Wf]
  std::size_t num_anchors = 0;
};

struct HeadConfig {
  std::size_t hidden = 32;
  std::vector<Real> anchor_sizes = {12.0, 24.0, 48.0, 96.0};
  std::vector<Real> anchor_ratios = {1.0};
  std::size_t num_anchors() const { return anchor_sizes.size() * anchor_ratios.size(); }

  bool operator==(const HeadConfig&) const = default;
};

/// 1x1 conv -> relu, then 1x1 objectness and box-delta projections. Its
/// parameters live in the model's store and are reused on every branch.
class DetectionHead {
 public:
  DetectionHead() = default;

  DetectionHead(ParameterStore& store, std::size_t in_channels, const HeadConfig& cfg, ParameterInit& init)
      : store_(&store), cfg_(cfg), in_channels_(in_channels) {
    const auto a = cfg.num_anchors();
    init("head.hidden.weight", {cfg.hidden, in_channels, 1, 1}, in_channels);
    init("head.hidden.bias", {cfg.hidden}, 0);
    init.with_std("head.objectness.weight", {a, cfg.hidden, 1, 1}, kOutputInitStd);
    init("head.objectness.bias", {a}, 0);
    init.with_std("head.deltas.weight", {4 * a, cfg.hidden, 1, 1}, kOutputInitStd);
    init("head.deltas.bias", {4 * a}, 0);
  }

  static constexpr Real kOutputInitStd = 0.01;

  const HeadConfig& config() const { return cfg_; }

  HeadOutputs forward(const Tensor& features) const {
    auto& s = *store_;
    const auto a = cfg_.num_anchors();
    auto h = conv2d(features, s.get("head.hidden.weight"), ConvSpec{1, 1, 1, 0, in_channels_, cfg_.hidden});
    h = relu(bias_add(h, s.get("head.hidden.bias")));
    auto obj = bias_add(conv2d(h, s.get("head.objectness.weight"), ConvSpec{1, 1, 1, 0, cfg_.hidden, a}),
                        s.get("head.objectness.bias"));
    auto del = bias_add(conv2d(h, s.get("head.deltas.weight"), ConvSpec{1, 1, 1, 0, cfg_.hidden, 4 * a}),
                        s.get("head.deltas.bias"));
    return {obj, del, a};
  }

 private:
  ParameterStore* store_ = nullptr;
  HeadConfig cfg_;
  std::size_t in_channels_ = 0;
};

struct LossResult {
  Tensor loss;
  bool empty = false;  // no anchor was sampled; loss is a constant zero
  std::size_t sampled = 0;
  std::size_t positives = 0;
};

inline constexpr Real kSmoothL1Beta = 1.0 / 9.0;

/// Objectness BCE over positive and negative anchors plus smooth-L1 on the
/// deltas of positives, divided by the number of sampled anchors across all
/// branches and images. labels[b][n] labels image n on branch b.
inline LossResult detection_loss(const std::vector<HeadOutputs>& outputs,
                                 const std::vector<std::vector<std::vector<AnchorLabel>>>& labels,
                                 Real beta = kSmoothL1Beta) {
  require(outputs.size() == labels.size(), "detection_loss: ", outputs.size(), " branch outputs but ", labels.size(),
          " label sets");
  std::size_t sampled = 0, positives = 0;
  for (std::size_t b = 0; b < outputs.size(); ++b) {
    const auto& o = outputs[b];
    require(o.objectness.rank() == 4 && o.deltas.rank() == 4, "detection_loss: head outputs must be rank 4");
    const auto n = o.objectness.dim(0), a = o.objectness.dim(1), hw = o.objectness.dim(2) * o.objectness.dim(3);
    require(o.deltas.dim(0) == n && o.deltas.dim(1) == 4 * a && o.deltas.dim(2) * o.deltas.dim(3) == hw,
            "detection_loss: objectness ", to_string(o.objectness.dims()), " and deltas ", to_string(o.deltas.dims()),
            " disagree");
    require(labels[b].size() == n, "detection_loss: branch ", b, " has ", labels[b].size(), " label lists for ", n,
            " images");
    for (const auto& per_image : labels[b]) {
      require(per_image.size() == a * hw, "detection_loss: ", per_image.size(), " labels for ", a * hw, " anchors");
      for (const auto& l : per_image) {
        if (l.state == LabelState::ignore) continue;
        ++sampled;
        if (l.state == LabelState::positive) ++positives;
      }
    }
  }
  if (sampled == 0) return {Tensor::scalar(0.0), true, 0, 0};

  const Real norm = 1.0 / static_cast<Real>(sampled);
  Tensor total;
  for (std::size_t b = 0; b < outputs.size(); ++b) {
    const auto& o = outputs[b];
    const auto n = o.objectness.dim(0), a = o.objectness.dim(1), hw = o.objectness.dim(2) * o.objectness.dim(3);
    std::vector<Real> cls_t(o.objectness.numel(), 0.0), cls_w(o.objectness.numel(), 0.0);
    std::vector<Real> reg_t(o.deltas.numel(), 0.0), reg_w(o.deltas.numel(), 0.0);
    for (std::size_t img = 0; img < n; ++img)
      for (std::size_t k = 0; k < a * hw; ++k) {
        const auto& l = labels[b][img][k];
        if (l.state == LabelState::ignore) continue;
        auto oi = img * a * hw + k;
        cls_w[oi] = norm;
        if (l.state != LabelState::positive) continue;
        cls_t[oi] = 1.0;
        auto anchor = k / hw, pix = k % hw;
        for (std::size_t c = 0; c < 4; ++c) {
          auto di = img * 4 * a * hw + (4 * anchor + c) * hw + pix;
          reg_w[di] = norm;
          reg_t[di] = (*l.regression_target)[c];
        }
      }
    auto term = add(bce_with_logits(o.objectness, std::move(cls_t), std::move(cls_w)),
                    smooth_l1(o.deltas, std::move(reg_t), std::move(reg_w), beta));
    total = total.defined() ? add(total, term) : term;
  }
  return {total, false, sampled, positives};
}

struct DecodeConfig {
  Real score_thresh = 0.0;
  std::size_t pre_nms_top_k = 200;
  Real image_width = 0.0;   // clip bound; 0 disables clipping
  Real image_height = 0.0;
};

/// Turns one image's head outputs into scored boxes: keep the top-k anchors by
/// score at or above the threshold, invert the delta parameterisation, clip
/// to the image. `deltas` holds 4 values per anchor in anchor order.
inline std::vector<Detection> decode(const std::vector<BoxXYWH>& anchors, const std::vector<BoxDelta>& deltas,
                                     const std::vector<Real>& scores, const DecodeConfig& cfg, int branch = 0) {
  require(cfg.score_thresh >= 0.0 && cfg.score_thresh <= 1.0, "decode: score threshold must lie in [0,1]");
  require(anchors.size() == deltas.size() && anchors.size() == scores.size(), "decode: ", anchors.size(),
          " anchors, ", deltas.size(), " deltas, ", scores.size(), " scores");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= cfg.score_thresh) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  if (cfg.pre_nms_top_k && idx.size() > cfg.pre_nms_top_k) idx.resize(cfg.pre_nms_top_k);
  std::vector<Detection> out;
  for (auto i : idx) {
    auto box = decode_delta(anchors[i], deltas[i]);
    if (cfg.image_width > 0.0 && cfg.image_height > 0.0) {
      Real x0 = std::clamp(box.x, 0.0, cfg.image_width), y0 = std::clamp(box.y, 0.0, cfg.image_height);
      Real x1 = std::clamp(box.x + box.w, 0.0, cfg.image_width);
      Real y1 = std::clamp(box.y + box.h, 0.0, cfg.image_height);
      box = {x0, y0, x1 - x0, y1 - y0};
    }
    if (!box.valid()) continue;
    out.push_back({box, scores[i], 0, branch});
  }
  return out;
}

/// Slices image `n` of a branch's head outputs into per-anchor scores and deltas.
inline void unpack_head(const HeadOutputs& o, std::size_t n, std::vector<Real>& scores, std::vector<BoxDelta>& deltas) {
  const auto a = o.objectness.dim(1), hw = o.objectness.dim(2) * o.objectness.dim(3);
  scores.resize(a * hw);
  deltas.resize(a * hw);
  auto obj = o.objectness.data();
  auto del = o.deltas.data();
  for (std::size_t k = 0; k < a * hw; ++k) {
    scores[k] = sigmoid(obj[n * a * hw + k]);
    auto anchor = k / hw, pix = k % hw;
    for (std::size_t c = 0; c < 4; ++c) deltas[k][c] = del[n * 4 * a * hw + (4 * anchor + c) * hw + pix];
  }
}

}  // namespace trident
