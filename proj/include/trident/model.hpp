#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "trident/backbone.hpp"
#include "trident/head.hpp"
#include "trident/suppression.hpp"

namespace trident {

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
};

/// Trident backbone plus one detection head shared by all branches.
class TridentDetector {
 public:
  TridentDetector(const ModelConfig& config, std::uint64_t seed)
      : config_(config), store_(std::make_unique<ParameterStore>()) {
    ParameterInit init(*store_, seed);
    backbone_ = Backbone(config_.backbone, *store_, init);
    head_ = DetectionHead(*store_, config_.backbone.output_channels(), config_.head, init);
  }

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }
  const DetectionHead& head() const { return head_; }
  ParameterStore& parameters() { return *store_; }
  const ParameterStore& parameters() const { return *store_; }
  std::size_t num_branches() const { return backbone_.num_branches(); }

  std::vector<HeadOutputs> forward_multi_branch(const Tensor& images) const {
    std::vector<HeadOutputs> out;
    for (const auto& fm : backbone_.forward_multi_branch(images)) out.push_back(head_.forward(fm.features));
    return out;
  }

  HeadOutputs forward_single_branch(const Tensor& images, std::size_t branch) const {
    return head_.forward(backbone_.forward_single_branch(images, branch).features);
  }

  // Anchors for a feature map of the given size (cached).
  const std::vector<BoxXYWH>& anchors(std::size_t feat_h, std::size_t feat_w) const {
    std::lock_guard lock(anchor_mutex_);
    auto key = std::make_pair(feat_h, feat_w);
    auto it = anchor_cache_.find(key);
    if (it == anchor_cache_.end())
      it = anchor_cache_
               .emplace(key, generate_anchors(feat_h, feat_w, static_cast<Real>(config_.backbone.output_stride()),
                                              config_.head.anchor_sizes, config_.head.anchor_ratios))
               .first;
    return it->second;
  }

 private:
  ModelConfig config_;
  std::unique_ptr<ParameterStore> store_;
  Backbone backbone_;
  DetectionHead head_;
  mutable std::mutex anchor_mutex_;
  mutable std::map<std::pair<std::size_t, std::size_t>, std::vector<BoxXYWH>> anchor_cache_;
};

struct InferenceConfig {
  DecodeConfig decode{0.05, 200, 0.0, 0.0};
  SuppressorConfig suppressor{SuppressorKind::nms, 0.5, {}, 50};
};

/// Decoded, unfiltered candidates of every image of a batch for one branch.
inline std::vector<std::vector<Detection>> decode_branch(const TridentDetector& model, const HeadOutputs& out,
                                                         std::size_t image_h, std::size_t image_w,
                                                         const InferenceConfig& cfg, int branch) {
  const auto& anchors = model.anchors(out.objectness.dim(2), out.objectness.dim(3));
  auto dcfg = cfg.decode;
  dcfg.image_width = static_cast<Real>(image_w);
  dcfg.image_height = static_cast<Real>(image_h);
  std::vector<std::vector<Detection>> dets;
  std::vector<Real> scores;
  std::vector<BoxDelta> deltas;
  for (std::size_t n = 0; n < out.objectness.dim(0); ++n) {
    unpack_head(out, n, scores, deltas);
    dets.push_back(decode(anchors, deltas, scores, dcfg, branch));
  }
  return dets;
}

/// Per-branch candidates for a batch: result[b][n].
inline std::vector<std::vector<std::vector<Detection>>> branch_candidates(const TridentDetector& model,
                                                                          const Tensor& images,
                                                                          const InferenceConfig& cfg) {
  NoGradGuard no_grad;
  auto outs = model.forward_multi_branch(images);
  std::vector<std::vector<std::vector<Detection>>> result;
  for (std::size_t b = 0; b < outs.size(); ++b)
    result.push_back(decode_branch(model, outs[b], images.dim(2), images.dim(3), cfg, static_cast<int>(b)));
  return result;
}

/// Full inference: every branch, range filter per branch, one suppression pass.
inline std::vector<std::vector<Detection>> infer_full(const TridentDetector& model, const Tensor& images,
                                                      const std::vector<ValidRange>& ranges,
                                                      const InferenceConfig& cfg) {
  auto cand = branch_candidates(model, images, cfg);
  std::vector<std::vector<Detection>> out;
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    std::vector<std::vector<Detection>> per_branch;
    for (auto& b : cand) per_branch.push_back(b[n]);
    out.push_back(combine_branches(per_branch, ranges, cfg.suppressor));
  }
  return out;
}

/// Fast inference: only `branch` runs, filtered by its own range.
inline std::vector<std::vector<Detection>> infer_fast(const TridentDetector& model, const Tensor& images,
                                                      std::size_t branch, const ValidRange& range,
                                                      const InferenceConfig& cfg) {
  NoGradGuard no_grad;
  auto out = model.forward_single_branch(images, branch);
  auto cand = decode_branch(model, out, images.dim(2), images.dim(3), cfg, static_cast<int>(branch));
  std::vector<std::vector<Detection>> result;
  for (auto& c : cand) result.push_back(combine_branches({c}, {range}, cfg.suppressor));
  return result;
}

}  // namespace trident
