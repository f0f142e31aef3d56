#pragma once

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ssldet/checkpoint.hpp"
#include "ssldet/train.hpp"

namespace ssldet {

inline constexpr char kDetectorMagic[8] = {'S', 'S', 'L', 'D',
                                           'D', 'E', 'T', '1'};

struct DetectorFileInfo {
  std::string method;  // ssl | baseline | random
  int n_per_class = 0;
  std::int64_t seed = 0;
};

inline void save_detector(DetectorModel& model, const DetectorFileInfo& info,
                          const std::string& path) {
  nlohmann::json meta;
  meta["architecture"] = model.backbone.arch_id();
  meta["class_names"] = model.class_names;
  meta["image_side"] = model.image_side;
  meta["norm_mean"] = model.norm_mean;
  meta["norm_std"] = model.norm_std;
  meta["method"] = info.method;
  meta["n_per_class"] = info.n_per_class;
  meta["seed"] = info.seed;
  const std::string meta_str = meta.dump();

  std::string payload;
  detail::put_raw(payload, static_cast<std::uint64_t>(meta_str.size()));
  payload += meta_str;

  std::vector<Param*> params = model.backbone.params_unchecked();
  for (auto* p : model.heads.params()) params.push_back(p);
  detail::put_raw(payload, static_cast<std::uint64_t>(params.size()));
  for (auto* p : params) {
    detail::put_raw(payload, static_cast<std::uint32_t>(p->name.size()));
    payload += p->name;
    detail::put_raw(payload, static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) detail::put_raw(payload, d);
    payload.append(reinterpret_cast<const char*>(p->value.data()),
                   p->value.numel() * sizeof(double));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("detector: cannot open for write: " + path);
  out.write(kDetectorMagic, sizeof(kDetectorMagic));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  const std::uint64_t digest = fnv1a(payload.data(), payload.size());
  out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  if (!out) throw CheckpointError("detector: write failed: " + path);
}

inline std::pair<DetectorModel, DetectorFileInfo> load_detector(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("detector: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < sizeof(kDetectorMagic) + sizeof(std::uint64_t) ||
      std::memcmp(buf.data(), kDetectorMagic, sizeof(kDetectorMagic)) != 0)
    throw CheckpointError("detector: bad magic or truncated file: " + path);

  std::size_t off = sizeof(kDetectorMagic);
  const std::size_t payload_end = buf.size() - sizeof(std::uint64_t);
  const std::uint64_t stored =
      *reinterpret_cast<const std::uint64_t*>(buf.data() + payload_end);
  if (fnv1a(buf.data() + off, payload_end - off) != stored)
    throw CheckpointError("detector: digest mismatch (corrupt file)");

  const auto meta_len = detail::get_raw<std::uint64_t>(buf, off);
  nlohmann::json meta = nlohmann::json::parse(buf.substr(off, meta_len));
  off += meta_len;

  FeatureExtractor backbone(meta.at("architecture").get<std::string>(), 0);
  DetectionHeads heads(
      backbone.feature_dim(),
      static_cast<std::int64_t>(meta.at("class_names").size()), 0);

  std::vector<Param*> params = backbone.params_unchecked();
  for (auto* p : heads.params()) params.push_back(p);
  const auto count = detail::get_raw<std::uint64_t>(buf, off);
  if (count != params.size())
    throw CheckpointError("detector: parameter count mismatch");
  for (auto* p : params) {
    const auto name_len = detail::get_raw<std::uint32_t>(buf, off);
    const std::string name = buf.substr(off, name_len);
    off += name_len;
    if (name != p->name)
      throw CheckpointError("detector: tensor name mismatch: " + name);
    const auto ndim = detail::get_raw<std::uint32_t>(buf, off);
    std::vector<std::int64_t> shape;
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape.push_back(detail::get_raw<std::int64_t>(buf, off));
    if (shape != p->value.shape())
      throw CheckpointError("detector: tensor shape mismatch for " + name);
    const std::size_t bytes = p->value.numel() * sizeof(double);
    if (off + bytes > payload_end)
      throw CheckpointError("detector: truncated tensor data");
    std::memcpy(p->value.data(), buf.data() + off, bytes);
    off += bytes;
  }
  backbone.freeze();

  DetectorModel model{std::move(backbone), std::move(heads),
                      meta.at("class_names").get<std::vector<std::string>>(),
                      meta.at("image_side").get<int>(),
                      meta.at("norm_mean").get<double>(),
                      meta.at("norm_std").get<double>()};
  DetectorFileInfo info{meta.at("method").get<std::string>(),
                        meta.at("n_per_class").get<int>(),
                        meta.at("seed").get<std::int64_t>()};
  return {std::move(model), std::move(info)};
}

}  // namespace ssldet
