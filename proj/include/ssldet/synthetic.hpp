#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ssldet/common.hpp"
#include "ssldet/dataset.hpp"
#include "ssldet/image.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

// Fixed 20-class vocabulary: 5 colors x 4 shapes, named "<color>-<shape>".
enum class SynthShape { disc, square, triangle, ring };

struct SynthClass {
  SynthShape shape;
  std::array<double, 3> rgb;
};

inline const std::map<std::string, SynthClass>& synth_vocabulary() {
  static const std::map<std::string, SynthClass> vocab = [] {
    const std::vector<std::pair<std::string, std::array<double, 3>>> colors = {
        {"red", {0.85, 0.15, 0.15}},    {"green", {0.15, 0.80, 0.20}},
        {"blue", {0.15, 0.25, 0.85}},   {"yellow", {0.90, 0.85, 0.15}},
        {"magenta", {0.85, 0.15, 0.80}}};
    const std::vector<std::pair<std::string, SynthShape>> shapes = {
        {"disc", SynthShape::disc},
        {"square", SynthShape::square},
        {"triangle", SynthShape::triangle},
        {"ring", SynthShape::ring}};
    std::map<std::string, SynthClass> v;
    for (const auto& [cn, rgb] : colors)
      for (const auto& [sn, sh] : shapes)
        v[cn + "-" + sn] = SynthClass{sh, rgb};
    return v;
  }();
  return vocab;
}

struct SynthGeometry {
  double cx, cy, half;  // unit coordinates
};

inline bool synth_inside(SynthShape shape, const SynthGeometry& g, double ux,
                         double uy) {
  const double dx = ux - g.cx;
  const double dy = uy - g.cy;
  switch (shape) {
    case SynthShape::disc:
      return dx * dx + dy * dy <= g.half * g.half;
    case SynthShape::square:
      return std::max(std::abs(dx), std::abs(dy)) <= g.half;
    case SynthShape::triangle: {
      // Apex up: vertices (cx, cy-half), (cx +- half, cy+half).
      if (dy < -g.half || dy > g.half) return false;
      const double span = g.half * (dy + g.half) / (2.0 * g.half);
      return std::abs(dx) <= span;
    }
    case SynthShape::ring: {
      const double r2 = dx * dx + dy * dy;
      const double inner = 0.55 * g.half;
      return r2 <= g.half * g.half && r2 >= inner * inner;
    }
  }
  return false;
}

struct SynthImage {
  Tensor image;  // (3, H, W) in [0,1]
  PixelBox box;  // tight pixel box of the rendered shape mask
};

// Deterministic one-shape-on-textured-background renderer. The rng draw
// order is part of the format: background grid first, then geometry.
inline SynthImage render_synthetic(const std::string& cls, int width,
                                   int height, std::uint64_t seed) {
  auto it = synth_vocabulary().find(cls);
  if (it == synth_vocabulary().end())
    throw ConfigError("synthetic: unknown class '" + cls + "'");
  const SynthClass& sc = it->second;

  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Smooth value-noise background on a 9x9 grid.
  constexpr int kGrid = 9;
  std::array<std::array<std::array<double, kGrid>, kGrid>, 3> grid{};
  for (int c = 0; c < 3; ++c)
    for (int gy = 0; gy < kGrid; ++gy)
      for (int gx = 0; gx < kGrid; ++gx)
        grid[c][gy][gx] = 0.25 + 0.5 * u01(rng);

  SynthGeometry g;
  g.cx = 0.30 + 0.40 * u01(rng);
  g.cy = 0.30 + 0.40 * u01(rng);
  g.half = 0.15 + 0.15 * u01(rng);

  SynthImage out;
  out.image = Tensor({3, height, width});
  int bx0 = width, by0 = height, bx1 = -1, by1 = -1;
  for (int y = 0; y < height; ++y) {
    const double uy = (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double ux = (x + 0.5) / width;
      if (synth_inside(sc.shape, g, ux, uy)) {
        for (int c = 0; c < 3; ++c) out.image.at3(c, y, x) = sc.rgb[c];
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x);
        by1 = std::max(by1, y);
      } else {
        const double fy = uy * (kGrid - 1);
        const double fx = ux * (kGrid - 1);
        const int gy = std::min(static_cast<int>(fy), kGrid - 2);
        const int gx = std::min(static_cast<int>(fx), kGrid - 2);
        const double wy = fy - gy;
        const double wx = fx - gx;
        for (int c = 0; c < 3; ++c) {
          const auto& gr = grid[c];
          out.image.at3(c, y, x) =
              (1 - wy) * ((1 - wx) * gr[gy][gx] + wx * gr[gy][gx + 1]) +
              wy * ((1 - wx) * gr[gy + 1][gx] + wx * gr[gy + 1][gx + 1]);
        }
      }
    }
  }
  if (bx1 < 0)
    throw ContractError("synthetic: shape rasterized to empty mask");
  out.box = PixelBox{bx0, by0, bx1 + 1, by1 + 1};  // exclusive max edge
  return out;
}

inline std::string make_synth_ref(const std::string& cls, int width,
                                  int height, std::uint64_t seed) {
  std::ostringstream os;
  os << "synth://" << cls << "/" << width << "x" << height << "/" << seed;
  return os.str();
}

inline Tensor render_synthetic_ref(const std::string& image_ref) {
  // synth://<class>/<W>x<H>/<seed>
  const std::string body = image_ref.substr(8);
  const auto s1 = body.find('/');
  const auto s2 = body.find('/', s1 + 1);
  if (s1 == std::string::npos || s2 == std::string::npos)
    throw IngestError("synthetic: malformed ref " + image_ref);
  const std::string cls = body.substr(0, s1);
  const std::string dims = body.substr(s1 + 1, s2 - s1 - 1);
  const auto xpos = dims.find('x');
  if (xpos == std::string::npos)
    throw IngestError("synthetic: malformed ref " + image_ref);
  const int w = std::stoi(dims.substr(0, xpos));
  const int h = std::stoi(dims.substr(xpos + 1));
  const std::uint64_t seed = std::stoull(body.substr(s2 + 1));
  return render_synthetic(cls, w, h, seed).image;
}

// Round-robin over classes; optionally writes PNGs (otherwise records
// carry synth:// locators and are rendered on demand).
inline DatasetManifest generate_synthetic_dataset(
    int num_images, const std::vector<std::string>& classes, int image_side,
    std::int64_t seed, const std::string& out_dir = "") {
  if (num_images <= 0)
    throw ContractError("synthetic: num_images must be positive");
  if (classes.empty()) throw ContractError("synthetic: no classes given");
  for (const auto& c : classes)
    if (!synth_vocabulary().count(c))
      throw ConfigError("synthetic: unknown class '" + c + "'");

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  DatasetManifest m;
  m.seed = seed;
  m.split = Split::train;
  m.class_names = classes;
  std::sort(m.class_names.begin(), m.class_names.end());

  for (int i = 0; i < num_images; ++i) {
    const std::string& cls = classes[i % classes.size()];
    const std::uint64_t img_seed =
        derive_seed(static_cast<std::uint64_t>(seed), i);
    SynthImage rendered = render_synthetic(cls, image_side, image_side, img_seed);

    ImageRecord r;
    r.width = image_side;
    r.height = image_side;
    r.category = cls;
    r.box = normalize_box(rendered.box, image_side, image_side);
    r.source = Source::synthetic;
    r.object_count = 1;
    if (out_dir.empty()) {
      r.image_ref = make_synth_ref(cls, image_side, image_side, img_seed);
    } else {
      std::ostringstream name;
      name << "img_" << std::setw(5) << std::setfill('0') << i << ".png";
      const auto path = (std::filesystem::path(out_dir) / name.str()).string();
      write_png(rendered.image, path);
      r.image_ref = path;
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace ssldet
