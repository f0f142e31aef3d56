#pragma once

#include <string>

#include <opencv2/imgcodecs.hpp>

#include "ssldet/dataset.hpp"
#include "ssldet/image.hpp"
#include "ssldet/synthetic.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

// Decode a record's image as a CHW [0,1] RGB tensor at native resolution.
inline Tensor decode_record(const ImageRecord& record) {
  if (is_synth_ref(record.image_ref))
    return render_synthetic_ref(record.image_ref);
  cv::Mat m = cv::imread(record.image_ref, cv::IMREAD_COLOR);
  if (m.empty())
    throw IngestError("load_image: cannot decode " + record.image_ref);
  return mat8_to_tensor01(m);
}

// Resize to (side, side) with a plain non-aspect-preserving resize, then
// apply (v - mean) / std. Unit boxes stay valid under the pure rescale.
inline Tensor load_image(const ImageRecord& record, int side, double mean,
                         double std_dev) {
  if (side <= 0) throw ContractError("load_image: side must be positive");
  Tensor img = decode_record(record);
  img = resize_bilinear(img, side, side);
  for (auto& v : img.raw()) v = (v - mean) / std_dev;
  return img;
}

}  // namespace ssldet
