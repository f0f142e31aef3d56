#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ssldet/common.hpp"
#include "ssldet/dataset.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

// CHW [0,1] tensor -> 8-bit BGR Mat (OpenCV's native order, ready for
// imwrite).
inline cv::Mat tensor01_to_mat8(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3)
    throw ContractError("tensor01_to_mat8: expected (3,H,W)");
  const int h = static_cast<int>(t.dim(1));
  const int w = static_cast<int>(t.dim(2));
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto clamp8 = [](double v) {
        return static_cast<unsigned char>(
            std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      };
      m.at<cv::Vec3b>(y, x) =
          cv::Vec3b(clamp8(t.at3(2, y, x)), clamp8(t.at3(1, y, x)),
                    clamp8(t.at3(0, y, x)));
    }
  return m;
}

inline Tensor mat8_to_tensor01(const cv::Mat& m) {
  if (m.type() != CV_8UC3) throw ContractError("mat8_to_tensor01: want 8UC3");
  Tensor t({3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3b>(y, x);
      t.at3(0, y, x) = px[2] / 255.0;  // BGR -> RGB
      t.at3(1, y, x) = px[1] / 255.0;
      t.at3(2, y, x) = px[0] / 255.0;
    }
  return t;
}

// Plain bilinear resize of a CHW tensor. Identity geometry is a copy.
inline Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  if (src.rank() != 3) throw ContractError("resize_bilinear: expected CHW");
  const int c = static_cast<int>(src.dim(0));
  const int h = static_cast<int>(src.dim(1));
  const int w = static_cast<int>(src.dim(2));
  if (out_h == h && out_w == w) return src;
  Tensor dst({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double v =
            (1 - wy) * ((1 - wx) * src.at3(ch, y0, x0) +
                        wx * src.at3(ch, y0, x1)) +
            wy * ((1 - wx) * src.at3(ch, y1, x0) + wx * src.at3(ch, y1, x1));
        dst.at3(ch, y, x) = v;
      }
    }
  }
  return dst;
}

inline bool is_synth_ref(const std::string& ref) {
  return ref.rfind("synth://", 0) == 0;
}

inline void write_png(const Tensor& img01, const std::string& path) {
  if (!cv::imwrite(path, tensor01_to_mat8(img01)))
    throw IngestError("write_png: cannot write " + path);
}

}  // namespace ssldet
