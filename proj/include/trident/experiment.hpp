#pragma once

#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "trident/checkpoint.hpp"
#include "trident/config.hpp"

namespace trident {

/// Keeps large tensor buffers on the heap instead of returning them to the
/// OS after every op; training otherwise spends much of its time in page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

inline std::vector<Scene> train_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.data.split(cfg.data.train), cfg.data.train.count);
}

inline std::vector<Scene> val_set(const ExperimentConfig& cfg) {
  return generate_dataset(cfg.data.split(cfg.data.val), cfg.data.val.count);
}

inline std::unique_ptr<TridentDetector> make_model(const ExperimentConfig& cfg) {
  cfg.validate();
  return std::make_unique<TridentDetector>(cfg.model, cfg.training.seed);
}

/// Trains a fresh model. The callback sees each epoch after its update.
inline std::unique_ptr<TridentDetector> train_model(const ExperimentConfig& cfg, const std::vector<Scene>& data,
                                                    TrainResult* log = nullptr,
                                                    const std::function<void(const EpochRecord&, const TridentDetector&)>&
                                                        on_epoch = {}) {
  auto model = make_model(cfg);
  auto result = train(*model, data, cfg.ranges(), cfg.training, [&](const EpochRecord& e) {
    if (on_epoch) on_epoch(e, *model);
  });
  if (log) *log = std::move(result);
  return model;
}

/// AP of the configured inference mode on `scenes`.
inline APResult evaluate(const TridentDetector& model, const ExperimentConfig& cfg, const std::vector<Scene>& scenes,
                         std::size_t workers = worker_count()) {
  require(!scenes.empty(), "evaluation set is empty");
  auto dets = detect_all(model, scenes, cfg.ranges(), cfg.inference, workers);
  return average_precision(eval_images(scenes, dets), cfg.eval);
}

using ResultRow = std::pair<std::string, APResult>;

/// Each branch alone without range filtering ("branch-<i>"), then the
/// configured combined pipeline ("combined").
inline std::vector<ResultRow> evaluate_per_branch(const TridentDetector& model, const ExperimentConfig& cfg,
                                                  const std::vector<Scene>& scenes,
                                                  std::size_t workers = worker_count()) {
  require(!scenes.empty(), "evaluation set is empty");
  std::vector<ResultRow> rows;
  auto per = detect_per_branch(model, scenes, cfg.inference.inference, workers);
  for (std::size_t b = 0; b < per.size(); ++b)
    rows.emplace_back("branch-" + std::to_string(b), average_precision(eval_images(scenes, per[b]), cfg.eval));
  auto full = cfg;
  full.inference.mode = InferenceMode::full;
  rows.emplace_back("combined", evaluate(model, full, scenes, workers));
  return rows;
}

struct AblationVariant {
  std::string name;
  ExperimentConfig config;
};

inline const std::vector<std::string>& ablation_suites() {
  static const std::vector<std::string> suites = {"branches", "stage", "blocks", "ranges", "dilation-pilot"};
  return suites;
}

/// Single-branch d=1 network, unrestricted range, full inference.
inline ExperimentConfig baseline_of(const ExperimentConfig& base) {
  auto c = base;
  c.set_branches({1}, {ValidRange{}});
  c.inference.mode = InferenceMode::full;
  c.inference.major_branch = 0;
  return c;
}

inline std::vector<AblationVariant> ablation_variants(const std::string& suite, const ExperimentConfig& base) {
  const Real inf = std::numeric_limits<Real>::infinity();
  std::vector<AblationVariant> out;
  if (suite == "branches") {
    // Unrestricted ranges so that no range tuning is needed per branch count.
    for (std::size_t n = 1; n <= 4; ++n) {
      auto c = base;
      std::vector<std::size_t> dil;
      for (std::size_t i = 1; i <= n; ++i) dil.push_back(i);
      c.set_branches(dil, std::vector<ValidRange>(n, ValidRange{}));
      c.inference.mode = InferenceMode::full;
      out.push_back({"branches=" + std::to_string(n), c});
    }
  } else if (suite == "stage") {
    out.push_back({"baseline", baseline_of(base)});
    for (std::size_t s = 1; s <= base.model.backbone.stages.size(); ++s) {
      auto c = base;
      auto& t = c.model.backbone.trident;
      t.stage = s;
      t.num_trident_blocks = std::min(t.num_trident_blocks, c.model.backbone.stages[s - 1].blocks);
      c.inference.mode = InferenceMode::full;
      out.push_back({"stage=" + std::to_string(s), c});
    }
  } else if (suite == "blocks") {
    out.push_back({"baseline", baseline_of(base)});
    const auto& t = base.model.backbone.trident;
    for (std::size_t n = 1; n <= base.model.backbone.stages[t.stage - 1].blocks; ++n) {
      auto c = base;
      c.model.backbone.trident.num_trident_blocks = n;
      c.inference.mode = InferenceMode::full;
      out.push_back({"blocks=" + std::to_string(n), c});
    }
  } else if (suite == "ranges") {
    require(base.num_branches() == 3, "the ranges suite needs a three-branch base config");
    out.push_back({"baseline", baseline_of(base)});
    const std::vector<std::pair<std::string, std::vector<ValidRange>>> schemes = {
        {"ranges=(b)", {{0, 90}, {30, 160}, {90, inf}}},
        {"ranges=(c)", {{0, 90}, {0, inf}, {90, inf}}},
        {"ranges=(d)", {{0, inf}, {0, inf}, {0, inf}}}};
    for (const auto& [name, ranges] : schemes) {
      auto c = base;
      c.set_ranges(ranges);
      c.inference.mode = InferenceMode::fast;
      out.push_back({name, c});
    }
  } else if (suite == "dilation-pilot") {
    for (std::size_t d = 1; d <= 3; ++d) {
      auto c = base;
      c.set_branches({d}, {ValidRange{}});
      c.inference.mode = InferenceMode::full;
      c.inference.major_branch = 0;
      out.push_back({"d=" + std::to_string(d), c});
    }
  } else {
    std::string known;
    for (const auto& s : ablation_suites()) known += (known.empty() ? "" : ", ") + s;
    fail("unknown ablation suite '", suite, "' (expected one of: ", known, ")");
  }
  return out;
}

/// Trains and evaluates every variant in order. A failing variant is logged
/// and skipped; the rest of the suite still runs.
inline std::vector<ResultRow> run_ablation(const std::string& suite, const ExperimentConfig& base,
                                           std::ostream& log = std::clog) {
  auto variants = ablation_variants(suite, base);
  std::vector<ResultRow> rows;
  for (const auto& v : variants) {
    try {
      v.config.validate();
      auto data = train_set(v.config);
      auto val = val_set(v.config);
      auto model = train_model(v.config, data);
      rows.emplace_back(v.name, evaluate(*model, v.config, val));
      log << "[ablate] " << suite << ' ' << v.name << " AP " << rows.back().second.ap << '\n';
    } catch (const std::exception& e) {
      log << "[ablate] " << suite << ' ' << v.name << " failed: " << e.what() << '\n';
    }
  }
  return rows;
}

inline void write_results(std::ostream& os, const std::vector<ResultRow>& rows) {
  write_results_header(os);
  for (const auto& [name, r] : rows) write_results_row(os, name, r);
}

}  // namespace trident
