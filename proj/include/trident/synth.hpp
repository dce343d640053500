#pragma once

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <iterator>
#include <map>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trident/boxes.hpp"
#include "trident/tensor.hpp"

namespace trident {

struct ScaleMode {
  Real mean = 0.0;    // sqrt(w*h) in pixels
  Real jitter = 0.0;  // half-width of the triangular jitter
  Real weight = 1.0;

  bool operator==(const ScaleMode&) const = default;
};

struct SceneConfig {
  std::size_t image_size = 128;
  std::vector<ScaleMode> scale_modes = {{12.0, 4.0, 1.0}, {48.0, 12.0, 1.0}, {104.0, 16.0, 1.0}};
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  int num_classes = 3;
  Real background_noise = 0.1;
  Real max_overlap_iou = 0.3;
  Real max_aspect = 1.3;  // w/h drawn log-uniformly in [1/max_aspect, max_aspect]
  std::size_t placement_retries = 64;
  std::uint64_t seed = 0;
  std::ostream* log = &std::clog;  // placement retries; null silences

  void validate() const {
    require(image_size >= 16, "scene image_size must be at least 16, got ", image_size);
    require(!scale_modes.empty(), "scene needs at least one scale mode");
    for (const auto& m : scale_modes) {
      require(m.mean > 0.0 && m.jitter >= 0.0 && m.mean - m.jitter >= 2.0, "scale mode (", m.mean, ", ", m.jitter,
              ") must stay above 2 pixels");
      require(m.mean + m.jitter <= static_cast<Real>(image_size), "scale mode (", m.mean, ", ", m.jitter,
              ") does not fit a ", image_size, "-pixel image");
      require(m.weight > 0.0, "scale mode weights must be positive");
    }
    require(min_objects <= max_objects, "scene objects_per_image range is inverted");
    require(num_classes >= 2 && num_classes <= 3, "scene supports 2 or 3 texture classes, got ", num_classes);
    require(background_noise >= 0.0 && background_noise <= 0.5, "background_noise must lie in [0, 0.5]");
    require(max_overlap_iou >= 0.0 && max_overlap_iou <= 1.0, "max_overlap_iou must lie in [0,1]");
    require(max_aspect >= 1.0, "max_aspect must be >= 1");
  }

  bool operator==(const SceneConfig&) const = default;
};

struct Annotation {
  int image_id = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<GroundTruth> boxes;

  bool operator==(const Annotation&) const = default;
};

struct Scene {
  Tensor image;  // [1, 1, H, W], values in [0, 1]
  Annotation annotation;
};

namespace detail {

inline std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x7d1du};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Object scale sqrt(w*h): pick a mode by weight, then a triangular jitter
/// centred on the mode mean.
template <typename Rng>
Real sample_object_scale(const SceneConfig& cfg, Rng& rng) {
  std::vector<Real> weights;
  for (const auto& m : cfg.scale_modes) weights.push_back(m.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  const auto& mode = cfg.scale_modes[pick(rng)];
  Real t = u(rng) + u(rng) - 1.0;
  return mode.mean + mode.jitter * t;
}

namespace detail {

template <typename Rng>
BoxXYWH sample_extent(const SceneConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  const Real limit = static_cast<Real>(cfg.image_size);
  Real s = sample_object_scale(cfg, rng);
  Real log_aspect = std::log(cfg.max_aspect) * (2.0 * u(rng) - 1.0);
  Real aspect = std::exp(log_aspect);
  Real w = std::round(s * std::sqrt(aspect));
  Real h = std::round(s / std::sqrt(aspect));
  if (w > limit || h > limit) w = h = std::round(s);
  w = std::clamp(w, 2.0, limit);
  h = std::clamp(h, 2.0, limit);
  return {0.0, 0.0, w, h};
}

inline Real texture_value(int class_id, std::size_t px, std::size_t py, const BoxXYWH& b, Real fg, Real bg) {
  auto rx = static_cast<Real>(px) - b.x;
  auto ry = static_cast<Real>(py) - b.y;
  switch (class_id) {
    case 0:  // filled
      return fg;
    case 1: {  // ring
      Real t = std::max(1.0, std::round(std::min(b.w, b.h) / 5.0));
      bool edge = rx < t || ry < t || rx >= b.w - t || ry >= b.h - t;
      return edge ? fg : bg;
    }
    default: {  // checker
      Real cell = std::max(2.0, std::round(std::min(b.w, b.h) / 4.0));
      auto cx = static_cast<long>(rx / cell), cy = static_cast<long>(ry / cell);
      return ((cx + cy) % 2 == 0) ? fg : bg;
    }
  }
}

}  // namespace detail

/// Renders scene `index`. The result is a pure function of (cfg, index).
/// Objects whose placement keeps violating the overlap cap make the scene
/// restart with one object fewer.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  auto rng = detail::scene_rng(cfg.seed, index);
  std::uniform_int_distribution<std::size_t> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  const std::size_t size = cfg.image_size;

  std::size_t count = count_dist(rng);
  std::vector<GroundTruth> placed;
  for (;;) {
    placed.clear();
    std::vector<BoxXYWH> extents;
    for (std::size_t i = 0; i < count; ++i) extents.push_back(detail::sample_extent(cfg, rng));
    std::stable_sort(extents.begin(), extents.end(), [](const auto& a, const auto& b) { return a.area() > b.area(); });
    bool ok = true;
    for (auto e : extents) {
      bool done = false;
      for (std::size_t attempt = 0; attempt < cfg.placement_retries && !done; ++attempt) {
        std::uniform_int_distribution<std::size_t> xs(0, size - static_cast<std::size_t>(e.w));
        std::uniform_int_distribution<std::size_t> ys(0, size - static_cast<std::size_t>(e.h));
        BoxXYWH b{static_cast<Real>(xs(rng)), static_cast<Real>(ys(rng)), e.w, e.h};
        done = std::all_of(placed.begin(), placed.end(),
                           [&](const GroundTruth& g) { return iou(g.box, b) <= cfg.max_overlap_iou; });
        if (done) placed.push_back({b, class_dist(rng)});
      }
      if (!done) {
        ok = false;
        break;
      }
    }
    if (ok) break;
    if (cfg.log) *cfg.log << "[synth] scene " << index << ": could not place " << count << " objects, retrying with "
              << count - 1 << '\n';
    --count;
  }

  std::vector<Real> pixels(size * size);
  const Real background = 0.2;
  for (auto& p : pixels) p = background;
  for (const auto& g : placed) {
    Real fg = 0.65 + 0.35 * u(rng);
    auto x0 = static_cast<std::size_t>(g.box.x), y0 = static_cast<std::size_t>(g.box.y);
    auto x1 = x0 + static_cast<std::size_t>(g.box.w), y1 = y0 + static_cast<std::size_t>(g.box.h);
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x)
        pixels[y * size + x] = detail::texture_value(g.class_id, x, y, g.box, fg, background);
  }
  for (auto& p : pixels) p = std::clamp(p + cfg.background_noise * (2.0 * u(rng) - 1.0), 0.0, 1.0);

  Scene scene{Tensor({1, 1, size, size}, std::move(pixels)),
              Annotation{static_cast<int>(index), size, size, std::move(placed)}};
  return scene;
}

// Mirrors an [N,C,H,W] image and its boxes left-to-right.
inline Scene hflip(const Scene& scene) {
  const auto& d = scene.image.dims();
  std::vector<Real> out(scene.image.numel());
  const std::size_t w = d[3];
  auto src = scene.image.data();
  for (std::size_t row = 0; row < d[0] * d[1] * d[2]; ++row)
    for (std::size_t x = 0; x < w; ++x) out[row * w + x] = src[row * w + (w - 1 - x)];
  Scene flipped{Tensor(d, std::move(out)), scene.annotation};
  for (auto& g : flipped.annotation.boxes) g.box.x = static_cast<Real>(w) - g.box.x - g.box.w;
  return flipped;
}

// --- annotation JSON (COCO-shaped subset)

inline nlohmann::json annotations_to_json(const std::vector<Annotation>& annotations) {
  nlohmann::json images = nlohmann::json::array();
  nlohmann::json anns = nlohmann::json::array();
  for (const auto& a : annotations) {
    images.push_back({{"id", a.image_id}, {"width", a.width}, {"height", a.height}});
    for (const auto& g : a.boxes)
      anns.push_back({{"image_id", a.image_id},
                      {"bbox", {g.box.x, g.box.y, g.box.w, g.box.h}},
                      {"category_id", g.class_id}});
  }
  return {{"images", images}, {"annotations", anns}};
}

inline std::vector<Annotation> annotations_from_json(const nlohmann::json& doc) {
  require(doc.is_object(), "annotations: top level must be an object");
  for (const char* key : {"images", "annotations"})
    require(doc.contains(key) && doc.at(key).is_array(), "annotations: field '", key, "' must be an array");
  std::vector<Annotation> out;
  std::map<int, std::size_t> by_id;
  const auto& images = doc.at("images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    auto where = concat("images[", i, "]");
    for (const char* key : {"id", "width", "height"})
      require(im.contains(key) && im.at(key).is_number_integer(), where, ".", key, ": expected an integer");
    require(im.at("width").get<long>() > 0 && im.at("height").get<long>() > 0, where,
            ": width and height must be positive");
    int id = im.at("id").get<int>();
    require(!by_id.count(id), where, ".id: duplicate image id ", id);
    by_id[id] = out.size();
    out.push_back({id, im.at("width").get<std::size_t>(), im.at("height").get<std::size_t>(), {}});
  }
  const auto& anns = doc.at("annotations");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const auto& a = anns[i];
    auto where = concat("annotations[", i, "]");
    require(a.contains("image_id") && a.at("image_id").is_number_integer(), where, ".image_id: expected an integer");
    require(a.contains("category_id") && a.at("category_id").is_number_integer(), where,
            ".category_id: expected an integer");
    require(a.contains("bbox") && a.at("bbox").is_array() && a.at("bbox").size() == 4, where,
            ".bbox: expected [x, y, w, h]");
    const auto& bb = a.at("bbox");
    for (std::size_t k = 0; k < 4; ++k) require(bb[k].is_number(), where, ".bbox[", k, "]: expected a number");
    BoxXYWH box{bb[0].get<Real>(), bb[1].get<Real>(), bb[2].get<Real>(), bb[3].get<Real>()};
    require(box.w > 0.0, where, ".bbox[2]: width must be positive, got ", box.w);
    require(box.h > 0.0, where, ".bbox[3]: height must be positive, got ", box.h);
    auto it = by_id.find(a.at("image_id").get<int>());
    require(it != by_id.end(), where, ".image_id: unknown image ", a.at("image_id").get<int>());
    out[it->second].boxes.push_back({box, a.at("category_id").get<int>()});
  }
  return out;
}

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open '", path, "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '", path, "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), "write to '", path, "' failed");
}

// Parses JSON text, reporting syntax errors with line and column.
inline nlohmann::json parse_json(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    fail(source, ":", line, ":", col, ": malformed JSON: ", e.what());
  }
}

}  // namespace detail

inline void write_annotations(const std::string& path, const std::vector<Annotation>& annotations) {
  detail::write_file(path, annotations_to_json(annotations).dump(2) + "\n");
}

inline std::vector<Annotation> read_annotations(const std::string& path) {
  auto doc = detail::parse_json(detail::read_file(path), path);
  try {
    return annotations_from_json(doc);
  } catch (const Error& e) {
    fail(path, ": ", e.what());
  }
}

// --- PNM images

/// Writes P5 for one channel or P6 for three. Pixel = clamp(round(v*scale), 0, 255).
inline void export_ppm(const Tensor& image, const std::string& path, Real scale = 255.0) {
  require(image.rank() == 4 && image.dim(0) == 1, "export_ppm: expected a [1,C,H,W] image, got ",
          to_string(image.dims()));
  const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
  require(c == 1 || c == 3, "export_ppm: expected 1 or 3 channels, got ", c);
  std::string bytes = concat(c == 1 ? "P5" : "P6", "\n", w, " ", h, "\n255\n");
  auto px = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        Real v = std::round(px[(ch * h + y) * w + x] * scale);
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 255.0))));
      }
  detail::write_file(path, bytes);
}

/// Reads a binary P5/P6 file into [1,C,H,W] with values divided by `scale`.
inline Tensor read_pnm(const std::string& path, Real scale = 255.0) {
  auto bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    require(start < pos, path, ": truncated PNM header");
    return bytes.substr(start, pos - start);
  };
  auto magic = token();
  require(magic == "P5" || magic == "P6", path, ": unsupported PNM magic '", magic, "'");
  auto w = std::stoul(token()), h = std::stoul(token()), maxval = std::stoul(token());
  require(maxval == 255, path, ": only maxval 255 is supported");
  ++pos;
  std::size_t c = magic == "P5" ? 1 : 3;
  require(bytes.size() >= pos + w * h * c, path, ": truncated PNM payload");
  std::vector<Real> values(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        values[(ch * h + y) * w + x] =
            static_cast<Real>(static_cast<unsigned char>(bytes[pos + (y * w + x) * c + ch])) / scale;
  return Tensor({1, c, h, w}, std::move(values));
}

/// Gray image to RGB with each box outlined; branch picks the colour.
inline Tensor overlay_boxes(const Tensor& image, const std::vector<BoxXYWH>& boxes, const std::vector<int>& colours) {
  require(image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 1, "overlay_boxes: expected a [1,1,H,W] image");
  require(boxes.size() == colours.size(), "overlay_boxes: one colour per box");
  const std::size_t h = image.dim(2), w = image.dim(3);
  std::vector<Real> rgb(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c) std::copy(image.data().begin(), image.data().end(), rgb.begin() + c * h * w);
  static const Real palette[4][3] = {{1, 0.2, 0.2}, {0.2, 1, 0.2}, {0.3, 0.5, 1}, {1, 1, 0.2}};
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& col = palette[static_cast<std::size_t>(colours[i]) % 4];
    auto clampi = [](Real v, std::size_t hi) {
      return static_cast<std::size_t>(std::clamp(std::round(v), 0.0, static_cast<Real>(hi - 1)));
    };
    auto x0 = clampi(boxes[i].x, w), x1 = clampi(boxes[i].x + boxes[i].w - 1, w);
    auto y0 = clampi(boxes[i].y, h), y1 = clampi(boxes[i].y + boxes[i].h - 1, h);
    auto put = [&](std::size_t y, std::size_t x) {
      for (std::size_t c = 0; c < 3; ++c) rgb[(c * h + y) * w + x] = col[c];
    };
    for (auto x = x0; x <= x1; ++x) put(y0, x), put(y1, x);
    for (auto y = y0; y <= y1; ++y) put(y, x0), put(y, x1);
  }
  return Tensor({1, 3, h, w}, std::move(rgb));
}

}  // namespace trident
