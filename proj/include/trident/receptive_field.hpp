#pragma once

#include <algorithm>
#include <limits>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "trident/backbone.hpp"

namespace trident {

struct LayerSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;

  std::size_t effective_kernel() const { return kernel + (kernel - 1) * (dilation - 1); }
};

/// Ordered conv layers along one path, with the stride accumulated in front
/// of each layer.
class LayerChain {
 public:
  LayerChain() = default;
  explicit LayerChain(std::vector<LayerSpec> layers) {
    for (const auto& l : layers) add(l);
  }

  LayerChain& add(const LayerSpec& layer) {
    require(layer.kernel > 0, "layer ", layers_.size(), ": kernel must be positive");
    require(layer.stride > 0, "layer ", layers_.size(), ": stride must be positive");
    require(layer.dilation > 0, "layer ", layers_.size(), ": dilation must be positive");
    accumulated_.push_back(total_stride());
    layers_.push_back(layer);
    return *this;
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  // Product of the strides of all layers before `i`.
  std::size_t accumulated_stride(std::size_t i) const { return accumulated_.at(i); }

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& l : layers_) s *= l.stride;
    return s;
  }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> accumulated_;
};

/// RF <- RF + (k_eff - 1) * s_accum, starting from a single pixel.
inline std::size_t theoretical_rf(const LayerChain& chain) {
  require(!chain.empty(), "theoretical_rf: empty layer chain");
  std::size_t rf = 1;
  for (std::size_t i = 0; i < chain.size(); ++i)
    rf += (chain.layers()[i].effective_kernel() - 1) * chain.accumulated_stride(i);
  return rf;
}

/// The main (convolutional) path of the backbone with trident blocks at
/// `dilation`. Projection shortcuts are 1x1 and never widen the field.
inline LayerChain backbone_chain(const BackboneConfig& config, std::size_t dilation) {
  config.validate();
  require(dilation >= 1, "backbone_chain: dilation must be positive");
  LayerChain chain;
  chain.add({config.stem.kernel, config.stem.stride, 1, config.stem.kernel / 2});
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const auto& st = config.stages[s];
    for (std::size_t b = 0; b < st.blocks; ++b) {
      bool trident = s + 1 == config.trident.stage && b >= st.blocks - config.trident.num_trident_blocks;
      std::size_t d = trident ? dilation : 1;
      chain.add({1, 1, 1, 0});
      chain.add({3, b == 0 ? st.stride : 1, d, d});
      chain.add({1, 1, 1, 0});
    }
  }
  return chain;
}

/// Sets every conv weight to 1/fan_in and every bias to zero. With a
/// positive input no relu ever clips, so gradients cannot cancel.
inline void make_positive_fixture(ParameterStore& store) {
  for (auto* p : store.all()) {
    auto w = p->value().mutable_data();
    if (p->dims().size() == 1) {
      std::fill(w.begin(), w.end(), 0.0);
    } else {
      const Real fan_in = static_cast<Real>(p->numel() / p->dims()[0]);
      std::fill(w.begin(), w.end(), 1.0 / fan_in);
    }
  }
}

struct RFMeasurement {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t input_size = 0;
  std::size_t probe_y = 0;
  std::size_t probe_x = 0;
};

namespace detail {

// Input-pixel interval [lo, hi] reached from output index `p`, walking the
// chain backwards. Signed because padding can push it below zero.
inline std::pair<long, long> input_interval(const LayerChain& chain, long p) {
  long lo = p, hi = p;
  for (std::size_t i = chain.size(); i-- > 0;) {
    const auto& l = chain.layers()[i];
    lo = lo * static_cast<long>(l.stride) - static_cast<long>(l.padding);
    hi = hi * static_cast<long>(l.stride) - static_cast<long>(l.padding) + static_cast<long>(l.effective_kernel()) - 1;
  }
  return {lo, hi};
}

inline std::size_t feature_extent(const LayerChain& chain, std::size_t input) {
  std::size_t e = input;
  for (const auto& l : chain.layers()) {
    auto padded = e + 2 * l.padding;
    require(padded >= l.effective_kernel(), "input ", input, " too small for the layer chain");
    e = (padded - l.effective_kernel()) / l.stride + 1;
  }
  return e;
}

}  // namespace detail

/// Smallest multiple of the output stride at which a probe at the feature
/// map center sees its whole theoretical field inside the image.
inline std::size_t rf_input_size(const BackboneConfig& config, std::size_t dilation) {
  auto chain = backbone_chain(config, dilation);
  const auto step = config.output_stride();
  std::size_t size = std::max(step, (theoretical_rf(chain) + step - 1) / step * step);
  for (;; size += step) {
    auto f = detail::feature_extent(chain, size);
    auto [lo, hi] = detail::input_interval(chain, static_cast<long>(f / 2));
    if (lo >= 0 && hi < static_cast<long>(size)) return size;
  }
}

/// Backpropagates a unit gradient from one feature location (summed over
/// channels) to an all-ones input and measures the bounding box of input
/// pixels whose gradient magnitude exceeds `threshold`.
inline RFMeasurement empirical_rf(const Backbone& backbone, std::size_t dilation, std::size_t input_size,
                                  std::size_t probe_y, std::size_t probe_x, Real threshold = 1e-12) {
  const auto& config = backbone.config();
  auto chain = backbone_chain(config, dilation);
  const auto f = detail::feature_extent(chain, input_size);
  require(probe_y < f && probe_x < f, "probe (", probe_y, ", ", probe_x, ") lies outside the ", f, "x", f,
          " feature map");
  for (auto p : {probe_y, probe_x}) {
    auto [lo, hi] = detail::input_interval(chain, static_cast<long>(p));
    require(lo >= 0 && hi < static_cast<long>(input_size), "probe (", probe_y, ", ", probe_x,
            ") is too close to the border: its field [", lo, ", ", hi, "] leaves the ", input_size, "-pixel input");
  }
  auto input = Tensor::full({1, config.in_channels, input_size, input_size}, 1.0, true);
  auto features = backbone.forward_dilated(input, dilation).features;
  const auto c = features.dim(1), hw = features.dim(2) * features.dim(3);
  std::vector<Real> weights(features.numel(), 0.0);
  for (std::size_t k = 0; k < c; ++k) weights[k * hw + probe_y * features.dim(3) + probe_x] = 1.0;
  backward(weighted_sum(features, std::move(weights)));

  std::size_t y0 = input_size, y1 = 0, x0 = input_size, x1 = 0;
  bool any = false;
  auto g = input.grad();
  for (std::size_t ch = 0; ch < config.in_channels; ++ch)
    for (std::size_t y = 0; y < input_size; ++y)
      for (std::size_t x = 0; x < input_size; ++x)
        if (std::abs(g[(ch * input_size + y) * input_size + x]) > threshold) {
          any = true;
          y0 = std::min(y0, y), y1 = std::max(y1, y);
          x0 = std::min(x0, x), x1 = std::max(x1, x);
        }
  RFMeasurement m{0, 0, input_size, probe_y, probe_x};
  if (any) m.width = x1 - x0 + 1, m.height = y1 - y0 + 1;
  return m;
}

/// Probe at the feature-map center of an automatically sized input.
inline RFMeasurement empirical_rf(const Backbone& backbone, std::size_t dilation) {
  auto size = rf_input_size(backbone.config(), dilation);
  auto f = detail::feature_extent(backbone_chain(backbone.config(), dilation), size);
  return empirical_rf(backbone, dilation, size, f / 2, f / 2);
}

struct RFRow {
  std::size_t branch = 0;
  std::size_t dilation = 1;
  std::size_t theoretical_rf = 0;
  std::size_t empirical_rf = 0;
  long delta_vs_d1 = 0;
};

using RFReport = std::vector<RFRow>;

/// One row per branch, measured on a positive-weight copy of the backbone.
/// delta_vs_d1 compares empirical support against the same network at d=1.
inline RFReport rf_report(const BackboneConfig& config, std::uint64_t seed = 0) {
  auto net = build_backbone(config, seed);
  make_positive_fixture(net.parameters());
  const auto base = static_cast<long>(empirical_rf(*net, 1).width);
  RFReport report;
  for (const auto& b : config.trident.branches) {
    RFRow row{b.index, b.dilation, theoretical_rf(backbone_chain(config, b.dilation)), 0, 0};
    row.empirical_rf = empirical_rf(*net, b.dilation).width;
    row.delta_vs_d1 = static_cast<long>(row.empirical_rf) - base;
    report.push_back(row);
  }
  return report;
}

inline void write_rf_csv(std::ostream& os, const RFReport& report) {
  os << "branch,dilation,theoretical_rf,empirical_rf,delta_vs_d1\n";
  for (const auto& r : report)
    os << r.branch << ',' << r.dilation << ',' << r.theoretical_rf << ',' << r.empirical_rf << ',' << r.delta_vs_d1
       << '\n';
}

inline nlohmann::json rf_to_json(const RFReport& report) {
  auto arr = nlohmann::json::array();
  for (const auto& r : report)
    arr.push_back({{"branch", r.branch},
                   {"dilation", r.dilation},
                   {"theoretical_rf", r.theoretical_rf},
                   {"empirical_rf", r.empirical_rf},
                   {"delta_vs_d1", r.delta_vs_d1}});
  return arr;
}

}  // namespace trident
