#pragma once

#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssldet/common.hpp"
#include "ssldet/model.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'L', 'D',
                                             'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Versioned binary container: magic, version, JSON metadata, named
// parameter tensors, trailing FNV digest of the payload.
struct BackboneCheckpoint {
  std::string architecture;
  std::string provenance;  // ssl-pretrained | imagenet-imported | random
  std::string config_digest;
  std::string created;
  std::uint32_t format_version = kCheckpointVersion;
  std::vector<std::pair<std::string, Tensor>> tensors;

  static BackboneCheckpoint from_backbone(FeatureExtractor& backbone,
                                          std::string provenance,
                                          std::string config_digest) {
    BackboneCheckpoint c;
    c.architecture = backbone.arch_id();
    c.provenance = std::move(provenance);
    c.config_digest = std::move(config_digest);
    const auto now = std::chrono::system_clock::now();
    c.created = std::to_string(
        std::chrono::duration_cast<std::chrono::seconds>(
            now.time_since_epoch())
            .count());
    for (auto* p : backbone.params_unchecked())
      c.tensors.emplace_back(p->name, p->value);
    return c;
  }

  // Loads the stored tensors into a freshly constructed backbone.
  FeatureExtractor restore(std::uint64_t seed = 0) const {
    FeatureExtractor backbone(architecture, seed);
    apply_to(backbone);
    return backbone;
  }

  void apply_to(FeatureExtractor& backbone) const {
    if (backbone.arch_id() != architecture)
      throw CheckpointError("checkpoint architecture '" + architecture +
                            "' does not match requested backbone '" +
                            backbone.arch_id() + "'");
    auto params = backbone.params_unchecked();
    if (params.size() != tensors.size())
      throw CheckpointError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->name != tensors[i].first)
        throw CheckpointError("checkpoint tensor name mismatch: " +
                              tensors[i].first + " vs " + params[i]->name);
      if (params[i]->value.shape() != tensors[i].second.shape())
        throw CheckpointError("checkpoint tensor shape mismatch for " +
                              tensors[i].first);
      params[i]->value = tensors[i].second;
    }
  }
};

namespace detail {

template <typename T>
void put_raw(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size())
    throw CheckpointError("checkpoint: truncated file");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const BackboneCheckpoint& ckpt,
                            const std::string& path) {
  nlohmann::json meta;
  meta["architecture"] = ckpt.architecture;
  meta["provenance"] = ckpt.provenance;
  meta["config_digest"] = ckpt.config_digest;
  meta["created"] = ckpt.created;
  meta["format_version"] = ckpt.format_version;
  const std::string meta_str = meta.dump();

  std::string payload;
  detail::put_raw(payload, static_cast<std::uint64_t>(meta_str.size()));
  payload += meta_str;
  detail::put_raw(payload, static_cast<std::uint64_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_raw(payload, static_cast<std::uint32_t>(name.size()));
    payload += name;
    detail::put_raw(payload, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_raw(payload, static_cast<std::int64_t>(d));
    payload.append(reinterpret_cast<const char*>(t.data()),
                   t.numel() * sizeof(double));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open for write: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  const std::uint64_t digest = fnv1a(payload.data(), payload.size());
  out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  if (!out) throw CheckpointError("checkpoint: write failed: " + path);
}

inline BackboneCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  if (buf.size() < sizeof(kCheckpointMagic) + sizeof(std::uint32_t) +
                       sizeof(std::uint64_t))
    throw CheckpointError("checkpoint: truncated file");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("checkpoint: bad magic (not a checkpoint file)");

  std::size_t off = sizeof(kCheckpointMagic);
  const auto version = detail::get_raw<std::uint32_t>(buf, off);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " +
                          std::to_string(version));

  const std::size_t payload_end = buf.size() - sizeof(std::uint64_t);
  if (payload_end < off) throw CheckpointError("checkpoint: truncated file");
  const std::uint64_t stored_digest =
      *reinterpret_cast<const std::uint64_t*>(buf.data() + payload_end);
  const std::uint64_t digest =
      fnv1a(buf.data() + off, payload_end - off);
  if (digest != stored_digest)
    throw CheckpointError("checkpoint: digest mismatch (corrupt file)");

  BackboneCheckpoint c;
  const auto meta_len = detail::get_raw<std::uint64_t>(buf, off);
  if (off + meta_len > payload_end)
    throw CheckpointError("checkpoint: truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(buf.substr(off, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  off += meta_len;
  c.architecture = meta.at("architecture").get<std::string>();
  c.provenance = meta.at("provenance").get<std::string>();
  c.config_digest = meta.at("config_digest").get<std::string>();
  c.created = meta.at("created").get<std::string>();
  c.format_version = meta.at("format_version").get<std::uint32_t>();

  const auto count = detail::get_raw<std::uint64_t>(buf, off);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_raw<std::uint32_t>(buf, off);
    if (off + name_len > payload_end)
      throw CheckpointError("checkpoint: truncated tensor name");
    std::string name = buf.substr(off, name_len);
    off += name_len;
    const auto ndim = detail::get_raw<std::uint32_t>(buf, off);
    std::vector<std::int64_t> shape;
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape.push_back(detail::get_raw<std::int64_t>(buf, off));
    Tensor t(shape);
    const std::size_t bytes = t.numel() * sizeof(double);
    if (off + bytes > payload_end)
      throw CheckpointError("checkpoint: truncated tensor data");
    std::memcpy(t.data(), buf.data() + off, bytes);
    off += bytes;
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

}  // namespace ssldet
