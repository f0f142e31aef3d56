#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "ssldet/common.hpp"

namespace ssldet {

// Axis-aligned box in unit coordinates relative to image width/height.
// Ground-truth boxes must be well ordered; predicted boxes may be
// degenerate (widths/heights clamp to zero wherever they are consumed).
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool valid() const {
    return 0.0 <= x_min && x_min <= x_max && x_max <= 1.0 && 0.0 <= y_min &&
           y_min <= y_max && y_max <= 1.0;
  }
  double area() const {
    return std::max(x_max - x_min, 0.0) * std::max(y_max - y_min, 0.0);
  }
  bool operator==(const BoundingBox&) const = default;
};

using Box4 = std::array<double, 4>;  // {x_min, y_min, x_max, y_max}

inline BoundingBox to_box(const Box4& a) {
  return BoundingBox{a[0], a[1], a[2], a[3]};
}
inline Box4 to_array(const BoundingBox& b) {
  return Box4{b.x_min, b.y_min, b.x_max, b.y_max};
}

// IoU with clamped widths/heights; 0/0 (both empty) is defined as 0.
inline double iou(const Box4& a, const BoundingBox& b) {
  const double aw = std::max(a[2] - a[0], 0.0);
  const double ah = std::max(a[3] - a[1], 0.0);
  const double bw = std::max(b.x_max - b.x_min, 0.0);
  const double bh = std::max(b.y_max - b.y_min, 0.0);
  const double ix = std::max(
      std::min(a[2], b.x_max) - std::max(a[0], b.x_min), 0.0);
  const double iy = std::max(
      std::min(a[3], b.y_max) - std::max(a[1], b.y_min), 0.0);
  const double inter = ix * iy;
  const double uni = aw * ah + bw * bh - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  return iou(to_array(a), b);
}

inline constexpr double kEnclosingDiagEps = 1e-9;

// Distance-IoU: 1 - IoU + squared center distance over squared diagonal
// of the smallest enclosing box. Range [0, 2).
inline double diou(const Box4& pred, const BoundingBox& gt) {
  const double overlap = iou(pred, gt);
  const double pcx = 0.5 * (pred[0] + pred[2]);
  const double pcy = 0.5 * (pred[1] + pred[3]);
  const double gcx = 0.5 * (gt.x_min + gt.x_max);
  const double gcy = 0.5 * (gt.y_min + gt.y_max);
  const double rho2 =
      (pcx - gcx) * (pcx - gcx) + (pcy - gcy) * (pcy - gcy);
  const double ex = std::max(pred[2], gt.x_max) - std::min(pred[0], gt.x_min);
  const double ey = std::max(pred[3], gt.y_max) - std::min(pred[1], gt.y_min);
  const double c2 = std::max(ex * ex + ey * ey, kEnclosingDiagEps);
  return 1.0 - overlap + rho2 / c2;
}

// Analytic gradient of diou() w.r.t. the four predicted coordinates.
// Branch-consistent with the forward pass; undefined exactly on the
// min/max switching loci, like the loss itself.
inline Box4 diou_grad(const Box4& pred, const BoundingBox& gt) {
  Box4 g{0.0, 0.0, 0.0, 0.0};

  const double pw = pred[2] - pred[0];
  const double ph = pred[3] - pred[1];
  const double bw = gt.x_max - gt.x_min;
  const double bh = gt.y_max - gt.y_min;

  const double ix1 = std::max(pred[0], gt.x_min);
  const double iy1 = std::max(pred[1], gt.y_min);
  const double ix2 = std::min(pred[2], gt.x_max);
  const double iy2 = std::min(pred[3], gt.y_max);
  const double iw = std::max(ix2 - ix1, 0.0);
  const double ih = std::max(iy2 - iy1, 0.0);
  const double inter = iw * ih;

  const double pa = std::max(pw, 0.0) * std::max(ph, 0.0);
  const double uni = pa + std::max(bw, 0.0) * std::max(bh, 0.0) - inter;

  if (uni > 0.0) {
    // d(-IoU)/dpred = -(d inter * uni - inter * d uni) / uni^2,
    // with d uni = d pa - d inter.
    Box4 d_inter{0.0, 0.0, 0.0, 0.0};
    if (iw > 0.0 && ih > 0.0) {
      if (pred[0] > gt.x_min) d_inter[0] = -ih;
      if (pred[1] > gt.y_min) d_inter[1] = -iw;
      if (pred[2] < gt.x_max) d_inter[2] = ih;
      if (pred[3] < gt.y_max) d_inter[3] = iw;
    }
    Box4 d_pa{0.0, 0.0, 0.0, 0.0};
    if (pw > 0.0 && ph > 0.0) {
      d_pa[0] = -ph;
      d_pa[1] = -pw;
      d_pa[2] = ph;
      d_pa[3] = pw;
    }
    for (int i = 0; i < 4; ++i) {
      const double d_uni = d_pa[i] - d_inter[i];
      g[i] += -(d_inter[i] * uni - inter * d_uni) / (uni * uni);
    }
  }

  const double pcx = 0.5 * (pred[0] + pred[2]);
  const double pcy = 0.5 * (pred[1] + pred[3]);
  const double gcx = 0.5 * (gt.x_min + gt.x_max);
  const double gcy = 0.5 * (gt.y_min + gt.y_max);
  const double dx = pcx - gcx;
  const double dy = pcy - gcy;
  const double rho2 = dx * dx + dy * dy;
  const double ex = std::max(pred[2], gt.x_max) - std::min(pred[0], gt.x_min);
  const double ey = std::max(pred[3], gt.y_max) - std::min(pred[1], gt.y_min);
  const double c2raw = ex * ex + ey * ey;
  const double c2 = std::max(c2raw, kEnclosingDiagEps);

  // rho^2 term: centers depend on all four coordinates.
  g[0] += dx / c2;
  g[2] += dx / c2;
  g[1] += dy / c2;
  g[3] += dy / c2;

  if (c2raw > kEnclosingDiagEps) {
    Box4 d_c2{0.0, 0.0, 0.0, 0.0};
    if (pred[0] < gt.x_min) d_c2[0] = -2.0 * ex;
    if (pred[1] < gt.y_min) d_c2[1] = -2.0 * ey;
    if (pred[2] > gt.x_max) d_c2[2] = 2.0 * ex;
    if (pred[3] > gt.y_max) d_c2[3] = 2.0 * ey;
    for (int i = 0; i < 4; ++i) g[i] += -rho2 / (c2 * c2) * d_c2[i];
  }
  return g;
}

}  // namespace ssldet
