#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <opencv2/imgproc.hpp>

#include <nlohmann/json.hpp>

#include "ssldet/common.hpp"
#include "ssldet/image.hpp"
#include "ssldet/model.hpp"
#include "ssldet/tensor.hpp"
#include "ssldet/train.hpp"

namespace ssldet {

inline constexpr int kHeatmapSide = 224;

struct Heatmap {
  Tensor values;  // (side, side) in [0,1]; all-zero if the raw map was flat
  int target = 0;
  std::string record_id;
};

// Grad-CAM over the final convolutional feature map. The class score is
// the target logit of the classification head; with a single affine head
// on the pooled vector, the score's gradient w.r.t. feature map cell
// (c,y,x) is w[target,c] / (h*w).
inline Heatmap gradcam(DetectorModel& model, const Tensor& image, int target,
                       const std::string& record_id = "") {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ContractError("gradcam: expected (3,H,W) image");
  if (target < 0 || target >= model.heads.num_classes())
    throw ContractError("gradcam: target class out of range");

  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.numel(), batch.data());
  EncodeResult enc = model.backbone.encode(batch);
  const auto c = enc.feature_maps.dim(1);
  const auto h = enc.feature_maps.dim(2);
  const auto w = enc.feature_maps.dim(3);

  const Tensor& cls_w = model.heads.cls().weight().value;  // (K, C)
  const double inv_hw = 1.0 / static_cast<double>(h * w);

  // Channel weights: spatial mean of d score / d feature map.
  // Raw map: ReLU of the weighted channel sum.
  Tensor raw({h, w});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double alpha = cls_w[target * c + ch] * inv_hw;
    const double* plane = enc.feature_maps.data() + ch * h * w;
    for (std::int64_t i = 0; i < h * w; ++i) raw[i] += alpha * plane[i];
  }
  for (auto& v : raw.raw()) v = std::max(v, 0.0);

  Tensor up = resize_bilinear(
      [&] {
        Tensor chw({1, h, w});
        std::copy(raw.data(), raw.data() + h * w, chw.data());
        return chw;
      }(),
      kHeatmapSide, kHeatmapSide);

  Heatmap out;
  out.target = target;
  out.record_id = record_id;
  out.values = Tensor({kHeatmapSide, kHeatmapSide});
  double mn = up[0], mx = up[0];
  for (std::int64_t i = 0; i < up.numel(); ++i) {
    mn = std::min(mn, up[i]);
    mx = std::max(mx, up[i]);
  }
  if (mx - mn > 0.0)
    for (std::int64_t i = 0; i < up.numel(); ++i)
      out.values[i] = (up[i] - mn) / (mx - mn);
  // Constant raw map stays all-zero.
  return out;
}

// Alpha-blend a viridis-mapped heatmap onto the de-normalized input.
inline cv::Mat overlay(const Tensor& image_normalized, const Heatmap& heat,
                       double opacity, double norm_mean = 0.5,
                       double norm_std = 0.5) {
  if (!(opacity >= 0.0 && opacity <= 1.0))
    throw ContractError("overlay: opacity must be in [0,1]");
  if (image_normalized.rank() != 3 || image_normalized.dim(0) != 3)
    throw ContractError("overlay: expected (3,H,W) image");

  Tensor img01 = image_normalized;
  for (auto& v : img01.raw()) v = v * norm_std + norm_mean;
  cv::Mat base = tensor01_to_mat8(img01);

  const int hs = static_cast<int>(heat.values.dim(0));
  const int ws = static_cast<int>(heat.values.dim(1));
  if (base.rows != hs || base.cols != ws)
    throw ContractError("overlay: image and heatmap shapes differ");

  cv::Mat heat8(hs, ws, CV_8UC1);
  for (int y = 0; y < hs; ++y)
    for (int x = 0; x < ws; ++x)
      heat8.at<unsigned char>(y, x) = static_cast<unsigned char>(
          std::lround(std::clamp(heat.values[y * ws + x], 0.0, 1.0) * 255.0));
  cv::Mat colored;
  cv::applyColorMap(heat8, colored, cv::COLORMAP_VIRIDIS);

  cv::Mat out(hs, ws, CV_8UC3);
  for (int y = 0; y < hs; ++y)
    for (int x = 0; x < ws; ++x) {
      const auto& b = base.at<cv::Vec3b>(y, x);
      const auto& c = colored.at<cv::Vec3b>(y, x);
      cv::Vec3b& o = out.at<cv::Vec3b>(y, x);
      for (int ch = 0; ch < 3; ++ch)
        o[ch] = static_cast<unsigned char>(
            std::lround((1.0 - opacity) * b[ch] + opacity * c[ch]));
    }
  return out;
}

// Raw grid as flat binary with a JSON sidecar.
inline void write_heatmap_raw(const Heatmap& heat, const std::string& bin_path,
                              const std::string& sidecar_path) {
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IngestError("cannot write " + bin_path);
  bin.write(reinterpret_cast<const char*>(heat.values.data()),
            heat.values.numel() * sizeof(double));

  nlohmann::json side;
  side["shape"] = {heat.values.dim(0), heat.values.dim(1)};
  side["dtype"] = "float64";
  side["record_id"] = heat.record_id;
  side["target"] = heat.target;
  std::ofstream js(sidecar_path, std::ios::trunc);
  if (!js) throw IngestError("cannot write " + sidecar_path);
  js << side.dump(2) << "\n";
}

}  // namespace ssldet
