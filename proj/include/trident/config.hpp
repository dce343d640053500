#pragma once

#include <limits>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trident/metrics.hpp"
#include "trident/model.hpp"
#include "trident/synth.hpp"
#include "trident/train.hpp"

namespace trident {

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetSplit {
  std::size_t count = 0;
  std::uint64_t seed = 0;

  bool operator==(const DatasetSplit&) const = default;
};

struct DataConfig {
  SceneConfig scene;
  DatasetSplit train{512, 1001};
  DatasetSplit val{256, 5001};

  SceneConfig split(const DatasetSplit& s) const {
    auto c = scene;
    c.seed = s.seed;
    return c;
  }
};

/// Everything one experiment needs: model topology, branch ranges, schedule,
/// data, evaluation and inference settings.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig training;
  DataConfig data;
  EvalConfig eval;
  DetectorRun inference;

  std::vector<ValidRange> ranges() const { return model.backbone.trident.ranges(); }
  std::size_t num_branches() const { return model.backbone.trident.num_branches; }

  void set_ranges(const std::vector<ValidRange>& ranges) {
    auto& t = model.backbone.trident;
    require(ranges.size() == t.branches.size(), "config: ", ranges.size(), " valid ranges for ", t.branches.size(),
            " branches");
    for (std::size_t i = 0; i < ranges.size(); ++i) t.branches[i].valid_range = ranges[i];
  }

  std::vector<std::size_t> dilations() const {
    std::vector<std::size_t> d;
    for (const auto& b : model.backbone.trident.branches) d.push_back(b.dilation);
    return d;
  }

  // Replaces the branch set, keeping block count and stage placement.
  void set_branches(const std::vector<std::size_t>& dilations, const std::vector<ValidRange>& ranges) {
    const auto& t = model.backbone.trident;
    model.backbone.trident = TridentStageConfig::make(dilations, ranges, t.num_trident_blocks, t.stage);
    if (inference.major_branch >= dilations.size()) inference.major_branch = dilations.size() / 2;
  }

  // One seed drives initialisation, batch order and both data splits.
  void apply_seed(std::uint64_t seed) {
    training.seed = seed;
    data.train.seed = 1000 + seed;
    data.val.seed = 5000 + seed;
  }

  void validate() const {
    model.backbone.validate();
    training.validate();
    data.scene.validate();
    eval.validate();
    require(!model.head.anchor_sizes.empty() && !model.head.anchor_ratios.empty(),
            "config.head: anchor sizes and ratios must be non-empty");
    require(model.head.hidden > 0, "config.head.hidden must be positive");
    require(data.scene.image_size >= model.backbone.output_stride(), "config: image_size ", data.scene.image_size,
            " is smaller than the backbone stride ", model.backbone.output_stride());
    if (inference.mode == InferenceMode::fast) {
      require(num_branches() > 1, "config: fast inference needs several branches, but num_branches=1");
      require(inference.major_branch < num_branches(), "config: major_branch ", inference.major_branch,
              " out of range for ", num_branches(), " branches");
    }
  }
};

namespace detail {

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), path_, ": expected an object");
  }
  ~ObjectReader() = default;

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }
  const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(j_.at(key), at(key));
  }

  template <typename T>
  static T convert(const nlohmann::json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      require(v.is_boolean(), path, ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      require(v.is_number_integer() && (std::is_signed_v<T> || v.get<long long>() >= 0), path,
              ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      require(v.is_number(), path, ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      require(v.is_string(), path, ": expected a string");
      return v.get<std::string>();
    } else {
      require(v.is_array(), path, ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(used_.count(it.key()), at(it.key()), ": unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline Real parse_bound(const nlohmann::json& v, const std::string& path) {
  if (v.is_null()) return std::numeric_limits<Real>::infinity();
  if (v.is_string() && (v == "inf" || v == "infinity")) return std::numeric_limits<Real>::infinity();
  require(v.is_number(), path, ": expected a number, null or \"inf\"");
  return v.get<Real>();
}

inline nlohmann::json bound_to_json(Real v) { return std::isinf(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace detail

inline ValidRange range_from_json(const nlohmann::json& v, const std::string& path) {
  require(v.is_array() && v.size() == 2, path, ": a valid range is [lower, upper]");
  ValidRange r{detail::parse_bound(v[0], path + "[0]"), detail::parse_bound(v[1], path + "[1]")};
  require(std::isfinite(r.lower), path, ": lower bound must be finite");
  try {
    r.validate();
  } catch (const Error& e) {
    fail(path, ": ", e.what());
  }
  return r;
}

inline nlohmann::json range_to_json(const ValidRange& r) {
  return nlohmann::json::array({r.lower, detail::bound_to_json(r.upper)});
}

inline ExperimentConfig config_from_json(const nlohmann::json& doc) {
  using detail::ObjectReader;
  ExperimentConfig cfg;
  ObjectReader root(doc, "config");
  require(root.has("schema_version"), "config.schema_version: missing");
  int version = ObjectReader::convert<int>(doc.at("schema_version"), "config.schema_version");
  require(version == kConfigSchemaVersion, "config.schema_version: unsupported version ", version, " (expected ",
          kConfigSchemaVersion, ")");

  std::vector<std::size_t> dilations = {1, 2, 3};
  std::size_t trident_blocks = cfg.model.backbone.trident.num_trident_blocks;
  std::size_t trident_stage = cfg.model.backbone.trident.stage;
  if (root.has("backbone")) {
    auto& bb = cfg.model.backbone;
    ObjectReader r(doc.at("backbone"), "config.backbone");
    r.read("in_channels", bb.in_channels);
    if (r.has("stem")) {
      ObjectReader s(r.raw("stem"), r.at("stem"));
      s.read("channels", bb.stem.channels);
      s.read("kernel", bb.stem.kernel);
      s.read("stride", bb.stem.stride);
      s.finish();
    }
    if (r.has("stages")) {
      const auto& arr = r.raw("stages");
      require(arr.is_array() && !arr.empty(), r.at("stages"), ": expected a non-empty array");
      bb.stages.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        StageConfig st;
        ObjectReader s(arr[i], r.at("stages") + "[" + std::to_string(i) + "]");
        s.read("blocks", st.blocks);
        s.read("stride", st.stride);
        s.read("channels", st.channels);
        s.read("bottleneck", st.bottleneck);
        s.finish();
        bb.stages.push_back(st);
      }
    }
    if (r.has("trident")) {
      ObjectReader t(r.raw("trident"), r.at("trident"));
      t.read("dilations", dilations);
      t.read("num_trident_blocks", trident_blocks);
      t.read("stage", trident_stage);
      t.finish();
    }
    r.finish();
  }
  require(!dilations.empty(), "config.backbone.trident.dilations: at least one branch is required");

  std::vector<ValidRange> ranges(dilations.size());
  if (root.has("ranges")) {
    const auto& arr = doc.at("ranges");
    require(arr.is_array(), "config.ranges: expected an array");
    require(arr.size() == dilations.size(), "config.ranges: ", arr.size(), " valid ranges for ", dilations.size(),
            " branches");
    for (std::size_t i = 0; i < arr.size(); ++i) ranges[i] = range_from_json(arr[i], "config.ranges[" + std::to_string(i) + "]");
  }
  cfg.model.backbone.trident = TridentStageConfig::make(dilations, ranges, trident_blocks, trident_stage);

  if (root.has("head")) {
    ObjectReader r(doc.at("head"), "config.head");
    r.read("hidden", cfg.model.head.hidden);
    r.read("anchor_sizes", cfg.model.head.anchor_sizes);
    r.read("anchor_ratios", cfg.model.head.anchor_ratios);
    r.finish();
  }

  if (root.has("training")) {
    auto& t = cfg.training;
    ObjectReader r(doc.at("training"), "config.training");
    r.read("epochs", t.epochs);
    r.read("lr", t.lr);
    r.read("momentum", t.momentum);
    r.read("weight_decay", t.weight_decay);
    r.read("batch_size", t.batch_size);
    r.read("lr_drops", t.lr_drops);
    r.read("lr_drop_factor", t.lr_drop_factor);
    r.read("warmup_steps", t.warmup_steps);
    r.read("iou_pos", t.iou_pos);
    r.read("iou_neg", t.iou_neg);
    r.read("samples_per_image", t.samples_per_image);
    r.read("positive_fraction", t.positive_fraction);
    r.read("flip", t.flip);
    r.read("seed", t.seed);
    r.finish();
  }

  if (root.has("data")) {
    auto& d = cfg.data;
    ObjectReader r(doc.at("data"), "config.data");
    for (auto [key, split] : {std::pair{"train", &d.train}, std::pair{"val", &d.val}}) {
      if (!r.has(key)) continue;
      ObjectReader s(r.raw(key), r.at(key));
      s.read("count", split->count);
      s.read("seed", split->seed);
      s.finish();
    }
    if (r.has("scene")) {
      auto& sc = d.scene;
      ObjectReader s(r.raw("scene"), r.at("scene"));
      s.read("image_size", sc.image_size);
      if (s.has("scale_modes")) {
        const auto& arr = s.raw("scale_modes");
        require(arr.is_array(), s.at("scale_modes"), ": expected an array");
        sc.scale_modes.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
          ScaleMode m;
          ObjectReader mr(arr[i], s.at("scale_modes") + "[" + std::to_string(i) + "]");
          mr.read("mean", m.mean);
          mr.read("jitter", m.jitter);
          mr.read("weight", m.weight);
          mr.finish();
          sc.scale_modes.push_back(m);
        }
      }
      s.read("min_objects", sc.min_objects);
      s.read("max_objects", sc.max_objects);
      s.read("num_classes", sc.num_classes);
      s.read("background_noise", sc.background_noise);
      s.read("max_overlap_iou", sc.max_overlap_iou);
      s.read("max_aspect", sc.max_aspect);
      s.read("placement_retries", sc.placement_retries);
      s.finish();
    }
    r.finish();
  }

  if (root.has("eval")) {
    auto& e = cfg.eval;
    ObjectReader r(doc.at("eval"), "config.eval");
    r.read("iou_thresholds", e.iou_thresholds);
    r.read("max_detections", e.max_detections);
    r.read("small_area", e.small_area);
    r.read("large_area", e.large_area);
    r.read("class_agnostic", e.class_agnostic);
    r.finish();
  }

  if (root.has("inference")) {
    auto& inf = cfg.inference;
    ObjectReader r(doc.at("inference"), "config.inference");
    if (r.has("mode")) {
      auto mode = ObjectReader::convert<std::string>(r.raw("mode"), r.at("mode"));
      require(mode == "full" || mode == "fast", r.at("mode"), ": unknown mode '", mode, "' (expected full or fast)");
      inf.mode = mode == "fast" ? InferenceMode::fast : InferenceMode::full;
    }
    r.read("major_branch", inf.major_branch);
    r.read("score_thresh", inf.inference.decode.score_thresh);
    r.read("pre_nms_top_k", inf.inference.decode.pre_nms_top_k);
    r.read("post_nms_top_k", inf.inference.suppressor.max_detections);
    if (r.has("suppressor")) {
      auto& sup = inf.inference.suppressor;
      ObjectReader s(r.raw("suppressor"), r.at("suppressor"));
      if (s.has("kind")) {
        auto kind = ObjectReader::convert<std::string>(s.raw("kind"), s.at("kind"));
        require(kind == "nms" || kind == "soft_nms", s.at("kind"), ": unknown suppressor '", kind, "'");
        sup.kind = kind == "nms" ? SuppressorKind::nms : SuppressorKind::soft_nms;
      }
      s.read("iou", sup.nms_iou);
      if (s.has("method")) {
        auto m = ObjectReader::convert<std::string>(s.raw("method"), s.at("method"));
        require(m == "linear" || m == "gaussian", s.at("method"), ": unknown soft-NMS method '", m, "'");
        sup.soft.method = m == "linear" ? SoftNmsMethod::linear : SoftNmsMethod::gaussian;
      }
      s.read("sigma", sup.soft.sigma);
      s.read("linear_threshold", sup.soft.linear_threshold);
      s.read("score_floor", sup.soft.score_floor);
      s.finish();
    }
    r.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  using nlohmann::json;
  const auto& bb = cfg.model.backbone;
  json stages = json::array();
  for (const auto& s : bb.stages)
    stages.push_back({{"blocks", s.blocks}, {"stride", s.stride}, {"channels", s.channels}, {"bottleneck", s.bottleneck}});
  json ranges = json::array();
  for (const auto& r : cfg.ranges()) ranges.push_back(range_to_json(r));
  json modes = json::array();
  for (const auto& m : cfg.data.scene.scale_modes)
    modes.push_back({{"mean", m.mean}, {"jitter", m.jitter}, {"weight", m.weight}});
  const auto& t = cfg.training;
  const auto& sc = cfg.data.scene;
  const auto& inf = cfg.inference;
  const auto& sup = inf.inference.suppressor;
  return {
      {"schema_version", kConfigSchemaVersion},
      {"backbone",
       {{"in_channels", bb.in_channels},
        {"stem", {{"channels", bb.stem.channels}, {"kernel", bb.stem.kernel}, {"stride", bb.stem.stride}}},
        {"stages", stages},
        {"trident",
         {{"dilations", cfg.dilations()},
          {"num_trident_blocks", bb.trident.num_trident_blocks},
          {"stage", bb.trident.stage}}}}},
      {"ranges", ranges},
      {"head",
       {{"hidden", cfg.model.head.hidden},
        {"anchor_sizes", cfg.model.head.anchor_sizes},
        {"anchor_ratios", cfg.model.head.anchor_ratios}}},
      {"training",
       {{"epochs", t.epochs},
        {"lr", t.lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"batch_size", t.batch_size},
        {"lr_drops", t.lr_drops},
        {"lr_drop_factor", t.lr_drop_factor},
        {"warmup_steps", t.warmup_steps},
        {"iou_pos", t.iou_pos},
        {"iou_neg", t.iou_neg},
        {"samples_per_image", t.samples_per_image},
        {"positive_fraction", t.positive_fraction},
        {"flip", t.flip},
        {"seed", t.seed}}},
      {"data",
       {{"train", {{"count", cfg.data.train.count}, {"seed", cfg.data.train.seed}}},
        {"val", {{"count", cfg.data.val.count}, {"seed", cfg.data.val.seed}}},
        {"scene",
         {{"image_size", sc.image_size},
          {"scale_modes", modes},
          {"min_objects", sc.min_objects},
          {"max_objects", sc.max_objects},
          {"num_classes", sc.num_classes},
          {"background_noise", sc.background_noise},
          {"max_overlap_iou", sc.max_overlap_iou},
          {"max_aspect", sc.max_aspect},
          {"placement_retries", sc.placement_retries}}}}},
      {"eval",
       {{"iou_thresholds", cfg.eval.iou_thresholds},
        {"max_detections", cfg.eval.max_detections},
        {"small_area", cfg.eval.small_area},
        {"large_area", cfg.eval.large_area},
        {"class_agnostic", cfg.eval.class_agnostic}}},
      {"inference",
       {{"mode", inf.mode == InferenceMode::fast ? "fast" : "full"},
        {"major_branch", inf.major_branch},
        {"score_thresh", inf.inference.decode.score_thresh},
        {"pre_nms_top_k", inf.inference.decode.pre_nms_top_k},
        {"post_nms_top_k", sup.max_detections},
        {"suppressor",
         {{"kind", sup.kind == SuppressorKind::nms ? "nms" : "soft_nms"},
          {"iou", sup.nms_iou},
          {"method", sup.soft.method == SoftNmsMethod::linear ? "linear" : "gaussian"},
          {"sigma", sup.soft.sigma},
          {"linear_threshold", sup.soft.linear_threshold},
          {"score_floor", sup.soft.score_floor}}}}}};
}

inline ExperimentConfig load_config(const std::string& path) {
  auto doc = detail::parse_json(detail::read_file(path), path);
  try {
    return config_from_json(doc);
  } catch (const Error& e) {
    fail(path, ": ", e.what());
  }
}

/// The default experiment: three branches with dilations 1/2/3 and the
/// scale-aware ranges [0,90], [30,160], [90,inf].
inline ExperimentConfig default_config() {
  ExperimentConfig cfg;
  const Real inf = std::numeric_limits<Real>::infinity();
  cfg.set_ranges({{0, 90}, {30, 160}, {90, inf}});
  return cfg;
}

}  // namespace trident
