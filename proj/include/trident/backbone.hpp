#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "trident/boxes.hpp"
#include "trident/conv.hpp"
#include "trident/ops.hpp"
#include "trident/parameter.hpp"

namespace trident {

struct StemConfig {
  std::size_t channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 2;

  bool operator==(const StemConfig&) const = default;
};

struct StageConfig {
  std::size_t blocks = 1;
  std::size_t stride = 2;
  std::size_t channels = 16;    // block output width
  std::size_t bottleneck = 8;   // width of the 3x3 conv

  bool operator==(const StageConfig&) const = default;
};

struct BranchSpec {
  std::size_t index = 0;
  std::size_t dilation = 1;
  ValidRange valid_range;

  bool operator==(const BranchSpec&) const = default;
};

struct TridentStageConfig {
  std::size_t num_branches = 3;
  std::vector<BranchSpec> branches;
  std::size_t num_trident_blocks = 2;
  std::size_t stage = 3;  // 1-based

  static TridentStageConfig make(const std::vector<std::size_t>& dilations, std::vector<ValidRange> ranges = {},
                                 std::size_t blocks = 2, std::size_t stage = 3) {
    if (ranges.empty()) ranges.assign(dilations.size(), ValidRange::unbounded());
    require(ranges.size() == dilations.size(), "trident stage: ", dilations.size(), " dilations but ", ranges.size(),
            " ranges");
    TridentStageConfig t;
    t.num_branches = dilations.size();
    for (std::size_t i = 0; i < dilations.size(); ++i) t.branches.push_back({i, dilations[i], ranges[i]});
    t.num_trident_blocks = blocks;
    t.stage = stage;
    return t;
  }

  std::vector<ValidRange> ranges() const {
    std::vector<ValidRange> out;
    for (const auto& b : branches) out.push_back(b.valid_range);
    return out;
  }

  bool operator==(const TridentStageConfig&) const = default;
};

struct BackboneConfig {
  std::size_t in_channels = 1;
  StemConfig stem;
  std::vector<StageConfig> stages = {{1, 2, 16, 8}, {1, 2, 32, 16}, {3, 1, 64, 32}};
  TridentStageConfig trident = TridentStageConfig::make({1, 2, 3});

  void validate() const {
    require(in_channels > 0, "backbone: in_channels must be positive");
    require(stem.channels > 0 && stem.kernel % 2 == 1 && stem.stride > 0, "backbone: invalid stem");
    require(!stages.empty(), "backbone: at least one stage is required");
    for (std::size_t s = 0; s < stages.size(); ++s)
      require(stages[s].blocks > 0 && stages[s].stride > 0 && stages[s].channels > 0 && stages[s].bottleneck > 0,
              "backbone: stage ", s + 1, " has a zero-sized field");
    const auto& t = trident;
    require(t.stage >= 1 && t.stage <= stages.size(), "backbone: trident stage ", t.stage, " out of range [1, ",
            stages.size(), "]");
    require(t.num_branches >= 1, "backbone: num_branches must be positive");
    require(t.branches.size() == t.num_branches, "backbone: ", t.branches.size(), " branch specs for num_branches=",
            t.num_branches);
    for (std::size_t i = 0; i < t.branches.size(); ++i) {
      require(t.branches[i].index == i, "backbone: branch ", i, " carries index ", t.branches[i].index);
      require(t.branches[i].dilation >= 1, "backbone: branch ", i, " dilation must be positive");
      require(i == 0 || t.branches[i].dilation >= t.branches[i - 1].dilation,
              "backbone: branch dilations must be non-decreasing");
      t.branches[i].valid_range.validate();
    }
    require(t.num_trident_blocks >= 1, "backbone: num_trident_blocks must be positive");
    require(t.num_trident_blocks <= stages[t.stage - 1].blocks, "backbone: num_trident_blocks ",
            t.num_trident_blocks, " exceeds the ", stages[t.stage - 1].blocks, " blocks of stage ", t.stage);
  }

  std::size_t output_stride() const {
    std::size_t s = stem.stride;
    for (const auto& st : stages) s *= st.stride;
    return s;
  }

  // Accumulated stride of the feature map that the tridentized 3x3 convs
  // read from and write to (they sit after the stage's first block unless
  // every block of the stage is tridentized).
  std::size_t trident_stride() const {
    std::size_t s = stem.stride;
    for (std::size_t i = 0; i < trident.stage; ++i) s *= stages[i].stride;
    return s;
  }

  std::size_t output_channels() const { return stages.back().channels; }

  bool operator==(const BackboneConfig&) const = default;
};

struct FeatureMap {
  Tensor features;  // [N, C, Hf, Wf]
  std::size_t stride = 1;
  std::size_t branch = 0;
};

// One bottleneck unit of the flattened block list.
struct BlockInfo {
  std::string prefix;
  std::size_t in_channels, mid_channels, out_channels, stride;
  bool projection;
  bool tridentized;
};

/// Residual backbone whose chosen stage ends in weight-shared trident blocks.
/// Every branch reads the same parameters; only the 3x3 dilation differs.
/// Layers before the first trident block run once and feed all branches.
class Backbone {
 public:
  Backbone() = default;

  Backbone(const BackboneConfig& config, ParameterStore& store, ParameterInit& init)
      : config_(config), store_(&store) {
    config_.validate();
    const auto& stem = config_.stem;
    init("stem.weight", {stem.channels, config_.in_channels, stem.kernel, stem.kernel},
         config_.in_channels * stem.kernel * stem.kernel);
    init("stem.bias", {stem.channels}, 0);
    std::size_t in = stem.channels;
    for (std::size_t s = 0; s < config_.stages.size(); ++s) {
      const auto& st = config_.stages[s];
      for (std::size_t b = 0; b < st.blocks; ++b) {
        BlockInfo info{concat("stage", s + 1, ".block", b + 1), in, st.bottleneck, st.channels,
                       b == 0 ? st.stride : 1, false, false};
        info.projection = info.stride != 1 || in != st.channels;
        info.tridentized = s + 1 == config_.trident.stage && b >= st.blocks - config_.trident.num_trident_blocks;
        init(info.prefix + ".conv1.weight", {info.mid_channels, in, 1, 1}, in);
        init(info.prefix + ".conv1.bias", {info.mid_channels}, 0);
        init(info.prefix + ".conv2.weight", {info.mid_channels, info.mid_channels, 3, 3}, info.mid_channels * 9);
        init(info.prefix + ".conv2.bias", {info.mid_channels}, 0);
        init(info.prefix + ".conv3.weight", {info.out_channels, info.mid_channels, 1, 1}, info.mid_channels,
             kResidualGain);
        init(info.prefix + ".conv3.bias", {info.out_channels}, 0);
        if (info.projection) {
          init(info.prefix + ".proj.weight", {info.out_channels, in, 1, 1}, in);
          init(info.prefix + ".proj.bias", {info.out_channels}, 0);
        }
        blocks_.push_back(info);
        in = st.channels;
      }
    }
    first_trident_ = 0;
    while (!blocks_[first_trident_].tridentized) ++first_trident_;
  }

  static constexpr Real kResidualGain = 0.5;

  const BackboneConfig& config() const { return config_; }
  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  std::size_t num_branches() const { return config_.trident.num_branches; }
  std::size_t first_trident_block() const { return first_trident_; }

  void check_input(const Tensor& image) const {
    require(image.rank() == 4, "backbone input must be [N,C,H,W], got ", to_string(image.dims()));
    require(image.dim(1) == config_.in_channels, "backbone input dimension 1 (channels) is ", image.dim(1),
            ", expected ", config_.in_channels);
    auto min = config_.output_stride();
    require(image.dim(2) >= min && image.dim(3) >= min, "backbone input ", image.dim(2), "x", image.dim(3),
            " is smaller than the minimum ", min, "x", min);
  }

  // Stem plus every block before the first trident block.
  Tensor forward_shared(const Tensor& image) const {
    check_input(image);
    const auto& stem = config_.stem;
    auto x = conv2d(image, param("stem.weight"),
                    ConvSpec::same(stem.kernel, config_.in_channels, stem.channels, stem.stride));
    x = relu(bias_add(x, param("stem.bias")));
    for (std::size_t i = 0; i < first_trident_; ++i) x = block_forward(x, blocks_[i], 1);
    return x;
  }

  // Trident blocks at `dilation`, then the remaining (undilated) blocks.
  Tensor forward_path(const Tensor& shared, std::size_t dilation) const {
    require(dilation >= 1, "dilation must be positive");
    Tensor x = shared;
    for (std::size_t i = first_trident_; i < blocks_.size(); ++i)
      x = block_forward(x, blocks_[i], blocks_[i].tridentized ? dilation : 1);
    return x;
  }

  std::vector<FeatureMap> forward_multi_branch(const Tensor& image) const {
    auto shared = forward_shared(image);
    std::vector<FeatureMap> out;
    for (const auto& b : config_.trident.branches)
      out.push_back({forward_path(shared, b.dilation), config_.output_stride(), b.index});
    return out;
  }

  FeatureMap forward_single_branch(const Tensor& image, std::size_t branch) const {
    require(branch < num_branches(), "branch index ", branch, " out of range for ", num_branches(), " branches");
    return {forward_path(forward_shared(image), config_.trident.branches[branch].dilation), config_.output_stride(),
            branch};
  }

  // Any dilation, not only the configured ones; used by receptive-field probes.
  FeatureMap forward_dilated(const Tensor& image, std::size_t dilation) const {
    return {forward_path(forward_shared(image), dilation), config_.output_stride(), 0};
  }

  Tensor block_forward(const Tensor& x, const BlockInfo& b, std::size_t dilation) const {
    auto h = conv2d(x, param(b.prefix + ".conv1.weight"), ConvSpec{1, 1, 1, 0, b.in_channels, b.mid_channels});
    h = relu(bias_add(h, param(b.prefix + ".conv1.bias")));
    h = conv2d(h, param(b.prefix + ".conv2.weight"),
               ConvSpec::same(3, b.mid_channels, b.mid_channels, b.stride, dilation));
    h = relu(bias_add(h, param(b.prefix + ".conv2.bias")));
    h = conv2d(h, param(b.prefix + ".conv3.weight"), ConvSpec{1, 1, 1, 0, b.mid_channels, b.out_channels});
    h = bias_add(h, param(b.prefix + ".conv3.bias"));
    Tensor shortcut = x;
    if (b.projection) {
      shortcut = conv2d(x, param(b.prefix + ".proj.weight"),
                        ConvSpec{1, b.stride, 1, 0, b.in_channels, b.out_channels});
      shortcut = bias_add(shortcut, param(b.prefix + ".proj.bias"));
    }
    return relu(add(h, shortcut));
  }

 private:
  SharedParameter& param(const std::string& name) const { return store_->get(name); }

  BackboneConfig config_;
  ParameterStore* store_ = nullptr;
  std::vector<BlockInfo> blocks_;
  std::size_t first_trident_ = 0;
};

/// A backbone that owns its parameters.
class OwnedBackbone {
 public:
  OwnedBackbone(const BackboneConfig& config, std::uint64_t seed) : store_(std::make_unique<ParameterStore>()) {
    ParameterInit init(*store_, seed);
    backbone_ = Backbone(config, *store_, init);
  }

  Backbone& operator*() { return backbone_; }
  const Backbone& operator*() const { return backbone_; }
  const Backbone* operator->() const { return &backbone_; }
  ParameterStore& parameters() { return *store_; }
  const ParameterStore& parameters() const { return *store_; }

 private:
  std::unique_ptr<ParameterStore> store_;
  Backbone backbone_;
};

/// Builds a backbone with deterministic He-style initialization from `seed`.
inline OwnedBackbone build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  return OwnedBackbone(config, seed);
}

}  // namespace trident
