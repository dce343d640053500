#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "trident/metrics.hpp"
#include "trident/model.hpp"
#include "trident/synth.hpp"

namespace trident {

struct TrainConfig {
  std::size_t epochs = 20;
  Real lr = 0.03;
  Real momentum = 0.9;
  Real weight_decay = 1e-4;
  std::size_t batch_size = 8;
  std::vector<Real> lr_drops = {0.7, 0.9};  // fractions of the schedule
  Real lr_drop_factor = 0.1;
  std::size_t warmup_steps = 50;
  Real iou_pos = 0.7;
  Real iou_neg = 0.3;
  std::size_t samples_per_image = 64;
  Real positive_fraction = 0.5;
  bool flip = true;
  std::uint64_t seed = 1;

  void validate() const {
    require(epochs > 0, "training: epochs must be positive");
    require(lr > 0.0, "training: lr must be positive");
    require(batch_size > 0, "training: batch_size must be positive");
    require(samples_per_image > 0, "training: samples_per_image must be positive");
    require(positive_fraction > 0.0 && positive_fraction <= 1.0, "training: positive_fraction must lie in (0,1]");
    require(0.0 <= iou_neg && iou_neg <= iou_pos && iou_pos <= 1.0, "training: need 0 <= iou_neg <= iou_pos <= 1");
    for (auto f : lr_drops) require(f > 0.0 && f < 1.0, "training: lr drop points must lie in (0,1)");
  }

  // Step schedule on whole epochs: lr * factor^(drops passed).
  Real lr_at(std::size_t epoch) const {
    Real r = lr;
    for (auto f : lr_drops)
      if (epoch >= std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<Real>(epochs)))))
        r *= lr_drop_factor;
    return r;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  Real lr = 0.0;
  Real first_loss = 0.0;
  Real mean_loss = 0.0;
  Real last_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::vector<Real> step_losses;
};

/// Stacks the selected images into one [B, C, H, W] batch, optionally mirrored.
inline Tensor stack_images(const std::vector<const Tensor*>& images) {
  require(!images.empty(), "cannot stack an empty batch");
  Dims d = images.front()->dims();
  const std::size_t per = images.front()->numel();
  std::vector<Real> values;
  values.reserve(per * images.size());
  for (const auto* img : images) {
    require(img->dims() == d, "batch images must share dims");
    values.insert(values.end(), img->data().begin(), img->data().end());
  }
  d[0] = images.size();
  return Tensor(d, std::move(values));
}

inline std::vector<BoxXYWH> boxes_of(const Annotation& a) {
  std::vector<BoxXYWH> out;
  for (const auto& g : a.boxes) out.push_back(g.box);
  return out;
}

/// Trains every branch jointly. Each branch labels anchors against only the
/// ground truth inside its own scale range; all branches update the same
/// parameters through one summed loss.
inline TrainResult train(TridentDetector& model, const std::vector<Scene>& data, const std::vector<ValidRange>& ranges,
                         const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  require(!data.empty(), "training set is empty");
  require(ranges.size() == model.num_branches(), "training: ", ranges.size(), " valid ranges for ",
          model.num_branches(), " branches");
  std::mt19937_64 rng(cfg.seed ^ 0x5eed'7d1d'0000'0001ull);
  std::bernoulli_distribution coin(0.5);
  auto& params = model.parameters();
  TrainResult result;
  std::size_t step = 0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const Real base_lr = cfg.lr_at(epoch);
    EpochRecord rec{epoch + 1, base_lr, 0.0, 0.0, 0.0};
    std::size_t steps_in_epoch = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      auto stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<Scene> batch;
      for (auto i = start; i < stop; ++i) batch.push_back(cfg.flip && coin(rng) ? hflip(data[order[i]]) : data[order[i]]);
      std::vector<const Tensor*> imgs;
      for (const auto& s : batch) imgs.push_back(&s.image);
      auto images = stack_images(imgs);

      auto outs = model.forward_multi_branch(images);
      std::vector<std::vector<std::vector<AnchorLabel>>> labels(outs.size());
      for (std::size_t b = 0; b < outs.size(); ++b) {
        const auto& anchors = model.anchors(outs[b].objectness.dim(2), outs[b].objectness.dim(3));
        for (const auto& s : batch) {
          auto l = assign_labels(anchors, boxes_of(s.annotation), ranges[b], cfg.iou_pos, cfg.iou_neg);
          sample_labels(l, cfg.samples_per_image, cfg.positive_fraction, rng);
          labels[b].push_back(std::move(l));
        }
      }
      auto loss = detection_loss(outs, labels);
      Real value = loss.loss.item();
      require(std::isfinite(value), "training diverged: non-finite loss at epoch ", epoch + 1, " step ", step + 1,
              " (lr ", base_lr, ")");
      Real lr = base_lr;
      if (cfg.warmup_steps && step < cfg.warmup_steps)
        lr *= static_cast<Real>(step + 1) / static_cast<Real>(cfg.warmup_steps);
      if (!loss.empty) {
        backward(loss.loss);
        sgd_step(params, lr, cfg.momentum, cfg.weight_decay);
      }
      params.zero_grad();
      if (steps_in_epoch == 0) rec.first_loss = value;
      rec.last_loss = value;
      rec.mean_loss += value;
      result.step_losses.push_back(value);
      ++steps_in_epoch;
      ++step;
    }
    rec.mean_loss /= static_cast<Real>(steps_in_epoch);
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

/// Worker count from TRIDENT_THREADS (default 1).
inline std::size_t worker_count() {
  if (const char* env = std::getenv("TRIDENT_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index writes
/// its own result slot, so output order never depends on scheduling.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

enum class InferenceMode { full, fast };

struct DetectorRun {
  InferenceMode mode = InferenceMode::full;
  std::size_t major_branch = 1;
  InferenceConfig inference;
};

/// Detections for every scene, in scene order.
inline std::vector<std::vector<Detection>> detect_all(const TridentDetector& model, const std::vector<Scene>& scenes,
                                                      const std::vector<ValidRange>& ranges, const DetectorRun& run,
                                                      std::size_t workers = 1) {
  std::vector<std::vector<Detection>> out(scenes.size());
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    const auto& img = scenes[i].image;
    out[i] = run.mode == InferenceMode::full
                 ? infer_full(model, img, ranges, run.inference).front()
                 : infer_fast(model, img, run.major_branch, ranges.at(run.major_branch), run.inference).front();
  });
  return out;
}

/// Each branch on its own, with no range filtering: result[b][scene].
inline std::vector<std::vector<std::vector<Detection>>> detect_per_branch(const TridentDetector& model,
                                                                          const std::vector<Scene>& scenes,
                                                                          const InferenceConfig& cfg,
                                                                          std::size_t workers = 1) {
  std::vector<std::vector<std::vector<Detection>>> out(model.num_branches(),
                                                       std::vector<std::vector<Detection>>(scenes.size()));
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    auto cand = branch_candidates(model, scenes[i].image, cfg);
    for (std::size_t b = 0; b < cand.size(); ++b) out[b][i] = suppress(cand[b][0], cfg.suppressor);
  });
  return out;
}

inline std::vector<EvalImage> eval_images(const std::vector<Scene>& scenes,
                                          const std::vector<std::vector<Detection>>& dets) {
  require(scenes.size() == dets.size(), "eval: ", scenes.size(), " scenes but ", dets.size(), " detection lists");
  std::vector<EvalImage> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    out.push_back({scenes[i].annotation.image_id, scenes[i].annotation.boxes, dets[i]});
  return out;
}

inline std::vector<Scene> generate_dataset(const SceneConfig& cfg, std::size_t count) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(cfg, i));
  return out;
}

}  // namespace trident
