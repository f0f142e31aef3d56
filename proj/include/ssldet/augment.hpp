#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ssldet/common.hpp"
#include "ssldet/image.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

// Transform order is fixed: crop-resize, flip, color jitter, grayscale,
// blur, erase. Draws happen in that order, one stream per call, so a
// policy application is a pure function of (image, policy, rng state).
struct AugmentationPolicy {
  bool crop_enabled = true;
  double crop_scale_min = 0.08;
  double crop_scale_max = 1.0;
  double crop_aspect_min = 3.0 / 4.0;
  double crop_aspect_max = 4.0 / 3.0;

  double flip_prob = 0.5;

  double jitter_prob = 0.8;
  double jitter_strength = 0.8;

  double grayscale_prob = 0.2;

  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  double erase_prob = 0.25;
  double erase_area_min = 0.02;
  double erase_area_max = 0.2;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.3;
  double erase_fill = 0.0;  // normalized units; 0 is mid-gray under 0.5/0.5

  // Normalization the input tensors carry; jitter/grayscale work in the
  // denormalized [0,1] domain.
  double norm_mean = 0.5;
  double norm_std = 0.5;

  static AugmentationPolicy ssl_default() { return AugmentationPolicy{}; }

  static AugmentationPolicy detector_default() {
    AugmentationPolicy p;
    p.crop_enabled = false;
    p.flip_prob = 0.0;
    p.jitter_prob = 0.0;
    p.grayscale_prob = 0.2;
    p.blur_prob = 0.5;
    p.erase_prob = 0.25;
    return p;
  }

  static AugmentationPolicy identity() {
    AugmentationPolicy p;
    p.crop_enabled = false;
    p.crop_scale_min = p.crop_scale_max = 1.0;
    p.crop_aspect_min = p.crop_aspect_max = 1.0;
    p.flip_prob = p.jitter_prob = p.grayscale_prob = 0.0;
    p.blur_prob = p.erase_prob = 0.0;
    return p;
  }

  bool has_geometric() const { return crop_enabled || flip_prob > 0.0; }

  void validate() const {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob_ok(flip_prob) || !prob_ok(jitter_prob) ||
        !prob_ok(grayscale_prob) || !prob_ok(blur_prob) ||
        !prob_ok(erase_prob))
      throw ConfigError("augment policy: probability outside [0,1]");
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max &&
          crop_scale_max <= 1.0))
      throw ConfigError("augment policy: crop scale range must be within (0,1] "
                        "with min <= max");
    if (crop_aspect_min <= 0.0 || crop_aspect_min > crop_aspect_max)
      throw ConfigError("augment policy: bad crop aspect range");
    if (blur_sigma_min <= 0.0 || blur_sigma_min > blur_sigma_max)
      throw ConfigError("augment policy: bad blur sigma range");
    if (erase_area_min <= 0.0 || erase_area_min > erase_area_max ||
        erase_area_max >= 1.0)
      throw ConfigError("augment policy: bad erase area range");
    if (erase_aspect_min <= 0.0 || erase_aspect_min > erase_aspect_max)
      throw ConfigError("augment policy: bad erase aspect range");
  }
};

namespace detail {

inline void denormalize(Tensor& t, const AugmentationPolicy& p) {
  for (auto& v : t.raw()) v = v * p.norm_std + p.norm_mean;
}
inline void renormalize(Tensor& t, const AugmentationPolicy& p) {
  for (auto& v : t.raw()) v = (v - p.norm_mean) / p.norm_std;
}

inline Tensor crop_resize(const Tensor& img, const AugmentationPolicy& p,
                          Rng& rng) {
  const int h = static_cast<int>(img.dim(1));
  const int w = static_cast<int>(img.dim(2));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  int cw = w, ch = h, cx = 0, cy = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double scale =
        p.crop_scale_min + (p.crop_scale_max - p.crop_scale_min) * u01(rng);
    const double log_a_min = std::log(p.crop_aspect_min);
    const double log_a_max = std::log(p.crop_aspect_max);
    const double aspect =
        std::exp(log_a_min + (log_a_max - log_a_min) * u01(rng));
    const double target = scale * w * h;
    const int tw = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int th = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (tw >= 1 && th >= 1 && tw <= w && th <= h) {
      cw = tw;
      ch = th;
      cx = static_cast<int>(u01(rng) * (w - tw + 1));
      cy = static_cast<int>(u01(rng) * (h - th + 1));
      cx = std::min(cx, w - tw);
      cy = std::min(cy, h - th);
      break;
    }
  }
  if (cw == w && ch == h) return img;

  Tensor crop({3, ch, cw});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        crop.at3(c, y, x) = img.at3(c, cy + y, cx + x);
  return resize_bilinear(crop, h, w);
}

inline void hflip(Tensor& img) {
  const int h = static_cast<int>(img.dim(1));
  const int w = static_cast<int>(img.dim(2));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x)
        std::swap(img.at3(c, y, x), img.at3(c, y, w - 1 - x));
}

inline void rgb_to_hsv(double r, double g, double b, double& hh, double& ss,
                       double& vv) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  vv = mx;
  ss = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    hh = 0.0;
  } else if (mx == r) {
    hh = 60.0 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    hh = 60.0 * ((b - r) / d + 2.0);
  } else {
    hh = 60.0 * ((r - g) / d + 4.0);
  }
  if (hh < 0.0) hh += 360.0;
}

inline void hsv_to_rgb(double hh, double ss, double vv, double& r, double& g,
                       double& b) {
  const double c = vv * ss;
  const double hp = hh / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1) {
    r1 = c; g1 = x;
  } else if (hp < 2) {
    r1 = x; g1 = c;
  } else if (hp < 3) {
    g1 = c; b1 = x;
  } else if (hp < 4) {
    g1 = x; b1 = c;
  } else if (hp < 5) {
    r1 = x; b1 = c;
  } else {
    r1 = c; b1 = x;
  }
  const double m = vv - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

// Brightness, contrast, saturation, hue; factors drawn in that order.
inline void color_jitter(Tensor& img, const AugmentationPolicy& p, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double s = p.jitter_strength;
  const double fb = 1.0 + 0.8 * s * (2.0 * u01(rng) - 1.0);
  const double fc = 1.0 + 0.8 * s * (2.0 * u01(rng) - 1.0);
  const double fs = 1.0 + 0.8 * s * (2.0 * u01(rng) - 1.0);
  const double hue_shift = 0.2 * s * (2.0 * u01(rng) - 1.0) * 360.0;

  denormalize(img, p);
  const int h = static_cast<int>(img.dim(1));
  const int w = static_cast<int>(img.dim(2));

  double mean_lum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      mean_lum += 0.299 * img.at3(0, y, x) + 0.587 * img.at3(1, y, x) +
                  0.114 * img.at3(2, y, x);
  mean_lum /= h * w;

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double r = img.at3(0, y, x) * fb;
      double g = img.at3(1, y, x) * fb;
      double b = img.at3(2, y, x) * fb;
      r = mean_lum + (r - mean_lum) * fc;
      g = mean_lum + (g - mean_lum) * fc;
      b = mean_lum + (b - mean_lum) * fc;
      const double lum = 0.299 * r + 0.587 * g + 0.114 * b;
      r = lum + (r - lum) * fs;
      g = lum + (g - lum) * fs;
      b = lum + (b - lum) * fs;
      r = std::clamp(r, 0.0, 1.0);
      g = std::clamp(g, 0.0, 1.0);
      b = std::clamp(b, 0.0, 1.0);
      double hh, ss, vv;
      rgb_to_hsv(r, g, b, hh, ss, vv);
      hh = std::fmod(hh + hue_shift + 360.0, 360.0);
      hsv_to_rgb(hh, ss, vv, r, g, b);
      img.at3(0, y, x) = r;
      img.at3(1, y, x) = g;
      img.at3(2, y, x) = b;
    }
  renormalize(img, p);
}

inline void grayscale(Tensor& img) {
  const int h = static_cast<int>(img.dim(1));
  const int w = static_cast<int>(img.dim(2));
  // Luminance weights sum to 1, so this commutes with the affine
  // normalization and can run on normalized values directly.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double lum = 0.299 * img.at3(0, y, x) + 0.587 * img.at3(1, y, x) +
                         0.114 * img.at3(2, y, x);
      img.at3(0, y, x) = lum;
      img.at3(1, y, x) = lum;
      img.at3(2, y, x) = lum;
    }
}

inline void gaussian_blur(Tensor& img, double sigma) {
  const int h = static_cast<int>(img.dim(1));
  const int w = static_cast<int>(img.dim(2));
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;

  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return std::clamp(i, 0, n - 1);
  };

  Tensor tmp({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at3(c, y, reflect(x + i, w));
        tmp.at3(c, y, x) = acc;
      }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp.at3(c, reflect(y + i, h), x);
        img.at3(c, y, x) = acc;
      }
}

inline void random_erase(Tensor& img, const AugmentationPolicy& p, Rng& rng) {
  const int h = static_cast<int>(img.dim(1));
  const int w = static_cast<int>(img.dim(2));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double area =
      p.erase_area_min + (p.erase_area_max - p.erase_area_min) * u01(rng);
  const double aspect = std::exp(std::log(p.erase_aspect_min) +
                                 (std::log(p.erase_aspect_max) -
                                  std::log(p.erase_aspect_min)) *
                                     u01(rng));
  int ew = static_cast<int>(std::lround(std::sqrt(area * w * h * aspect)));
  int eh = static_cast<int>(std::lround(std::sqrt(area * w * h / aspect)));
  ew = std::clamp(ew, 1, w);
  eh = std::clamp(eh, 1, h);
  const int ex = std::min(static_cast<int>(u01(rng) * (w - ew + 1)), w - ew);
  const int ey = std::min(static_cast<int>(u01(rng) * (h - eh + 1)), h - eh);
  for (int c = 0; c < 3; ++c)
    for (int y = ey; y < ey + eh; ++y)
      for (int x = ex; x < ex + ew; ++x) img.at3(c, y, x) = p.erase_fill;
}

}  // namespace detail

inline Tensor apply_policy(const Tensor& image, const AugmentationPolicy& p,
                           Rng& rng) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ContractError("augment: expected (3,H,W) tensor");
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Tensor out = p.crop_enabled ? detail::crop_resize(image, p, rng) : image;
  if (p.flip_prob > 0.0 && u01(rng) < p.flip_prob) detail::hflip(out);
  if (p.jitter_prob > 0.0 && u01(rng) < p.jitter_prob)
    detail::color_jitter(out, p, rng);
  if (p.grayscale_prob > 0.0 && u01(rng) < p.grayscale_prob)
    detail::grayscale(out);
  if (p.blur_prob > 0.0 && u01(rng) < p.blur_prob) {
    const double sigma =
        p.blur_sigma_min + (p.blur_sigma_max - p.blur_sigma_min) * u01(rng);
    detail::gaussian_blur(out, sigma);
  }
  if (p.erase_prob > 0.0 && u01(rng) < p.erase_prob)
    detail::random_erase(out, p, rng);
  return out;
}

struct ViewPair {
  Tensor view_a;
  Tensor view_b;
};

inline ViewPair ssl_view_pair(const Tensor& image,
                              const AugmentationPolicy& policy, Rng& rng) {
  policy.validate();
  ViewPair vp;
  vp.view_a = apply_policy(image, policy, rng);
  vp.view_b = apply_policy(image, policy, rng);
  return vp;
}

// Pixel-value transforms only: the ground-truth box stays untouched.
inline Tensor detector_augment(const Tensor& image,
                               const AugmentationPolicy& policy, Rng& rng) {
  policy.validate();
  if (policy.has_geometric())
    throw ConfigError(
        "detector policy: geometric transforms (crop/flip) would invalidate "
        "the ground-truth box");
  return apply_policy(image, policy, rng);
}

}  // namespace ssldet
