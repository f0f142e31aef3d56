#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssldet/common.hpp"
#include "ssldet/nn.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

struct ConvBlockSpec {
  std::int64_t out_channels;
  int kernel;
  int stride;
};

struct BackboneArch {
  std::string id;
  std::vector<ConvBlockSpec> blocks;
};

// Pluggable backbone family behind the (feature map, pooled vector)
// contract. tiny-cnn is the desk-scale configuration; conv-m is a larger
// stack for full-scale runs.
inline const std::map<std::string, BackboneArch>& backbone_registry() {
  static const std::map<std::string, BackboneArch> reg = {
      {"tiny-cnn",
       {"tiny-cnn", {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}, {64, 3, 2}}}},
      {"conv-m",
       {"conv-m",
        {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {128, 3, 2}, {128, 3, 1}}}},
  };
  return reg;
}

struct EncodeResult {
  Tensor feature_maps;  // (B, C, h, w)
  Tensor pooled;        // (B, C)
};

class FeatureExtractor {
 public:
  FeatureExtractor(const std::string& arch_id, std::uint64_t seed) {
    auto it = backbone_registry().find(arch_id);
    if (it == backbone_registry().end())
      throw ConfigError("unknown backbone architecture: " + arch_id);
    arch_ = it->second;
    Rng rng = make_rng(derive_seed(seed, hash_string(arch_id)));
    std::int64_t in_c = 3;
    int idx = 0;
    for (const auto& b : arch_.blocks) {
      convs_.emplace_back(std::make_unique<Conv2d>(
          in_c, b.out_channels, b.kernel, b.stride, rng,
          "backbone.conv" + std::to_string(idx++)));
      relus_.emplace_back();
      in_c = b.out_channels;
    }
  }

  const std::string& arch_id() const { return arch_.id; }
  std::int64_t feature_dim() const { return arch_.blocks.back().out_channels; }

  // batch: (B,3,S,S) -> feature maps and their exact spatial mean.
  EncodeResult encode(const Tensor& batch, bool cache_for_backward = false) {
    if (batch.rank() != 4 || batch.dim(1) != 3)
      throw ContractError("encode: expected (B,3,H,W) batch");
    Tensor x = batch;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i]->forward(x, cache_for_backward);
      x = relus_[i].forward(x);
    }
    EncodeResult r;
    r.pooled = global_avg_pool(x);
    r.feature_maps = std::move(x);
    return r;
  }

  // Backward of encode() from a gradient w.r.t. the pooled vector.
  // Requires the preceding encode() to have cached activations.
  void backward_from_pooled(const Tensor& grad_pooled,
                            const std::vector<std::int64_t>& map_shape) {
    if (frozen_)
      throw ContractError("backbone is frozen; no backward pass allowed");
    Tensor g = global_avg_pool_backward(grad_pooled, map_shape);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      g = relus_[i].backward(g);
      g = convs_[i]->backward(g, /*accumulate_param_grads=*/true);
    }
  }

  void freeze() { frozen_ = true; }
  bool is_frozen() const { return frozen_; }

  std::vector<Param*> params() {
    if (frozen_)
      throw ContractError("backbone is frozen; parameters are not trainable");
    return params_unchecked();
  }

  std::vector<Param*> params_unchecked() {
    std::vector<Param*> out;
    for (auto& c : convs_)
      for (auto* p : c->params()) out.push_back(p);
    return out;
  }

  std::vector<const Param*> params_view() const {
    std::vector<const Param*> out;
    for (const auto& c : convs_)
      for (auto* p : const_cast<Conv2d&>(*c).params()) out.push_back(p);
    return out;
  }

  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : params_view())
      h = fnv1a_update(h, p->value.data(),
                       p->value.numel() * sizeof(double));
    return h;
  }

 private:
  BackboneArch arch_;
  std::vector<std::unique_ptr<Conv2d>> convs_;
  std::vector<ReLU> relus_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------

// Two affine layers with one nonlinearity between them; pre-training only.
class ProjectionHead {
 public:
  ProjectionHead(std::int64_t in_dim, std::int64_t hidden, std::int64_t out_dim,
                 std::uint64_t seed, bool relu_between = true)
      : fc1_(in_dim, hidden, seed_rng(seed, 1), "proj.fc1"),
        fc2_(hidden, out_dim, seed_rng(seed, 2), "proj.fc2"),
        relu_between_(relu_between) {}

  Tensor forward(const Tensor& pooled) {
    Tensor h = fc1_.forward(pooled);
    if (relu_between_) h = relu_.forward(h);
    return fc2_.forward(h);
  }

  Tensor backward(const Tensor& grad_z) {
    Tensor g = fc2_.backward(grad_z);
    if (relu_between_) g = relu_.backward(g);
    return fc1_.backward(g);
  }

  std::vector<Param*> params() {
    std::vector<Param*> out = fc1_.params();
    for (auto* p : fc2_.params()) out.push_back(p);
    return out;
  }

  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

 private:
  static Rng seed_rng(std::uint64_t seed, std::uint64_t salt) {
    return make_rng(derive_seed(seed, salt, 0x70726f6aULL));
  }
  Linear fc1_, fc2_;
  ReLU relu_;
  bool relu_between_;
};

// ---------------------------------------------------------------------------

struct DetectionOutput {
  Tensor logits;  // (B, K)
  Tensor boxes;   // (B, 4), each coordinate in (0,1)
};

// One affine layer per head; localization squashed through a sigmoid.
class DetectionHeads {
 public:
  DetectionHeads(std::int64_t in_dim, std::int64_t num_classes,
                 std::uint64_t seed)
      : cls_(in_dim, num_classes, seed_rng(seed, 1), "heads.cls"),
        loc_(in_dim, 4, seed_rng(seed, 2), "heads.loc") {}

  DetectionOutput forward(const Tensor& pooled) {
    DetectionOutput out;
    out.logits = cls_.forward(pooled);
    pre_sigmoid_ = loc_.forward(pooled);
    out.boxes = pre_sigmoid_;
    for (auto& v : out.boxes.raw()) v = 1.0 / (1.0 + std::exp(-v));
    boxes_cache_ = out.boxes;
    return out;
  }

  // grad w.r.t. pooled input, from gradients on logits and boxes.
  Tensor backward(const Tensor& grad_logits, const Tensor& grad_boxes) {
    Tensor g_pre = grad_boxes;
    for (std::int64_t i = 0; i < g_pre.numel(); ++i) {
      const double s = boxes_cache_[i];
      g_pre[i] *= s * (1.0 - s);
    }
    Tensor g1 = cls_.backward(grad_logits);
    Tensor g2 = loc_.backward(g_pre);
    for (std::int64_t i = 0; i < g1.numel(); ++i) g1[i] += g2[i];
    return g1;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out = cls_.params();
    for (auto* p : loc_.params()) out.push_back(p);
    return out;
  }

  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p :
         {&const_cast<Linear&>(cls_).weight(), &const_cast<Linear&>(cls_).bias(),
          &const_cast<Linear&>(loc_).weight(), &const_cast<Linear&>(loc_).bias()})
      h = fnv1a_update(h, p->value.data(), p->value.numel() * sizeof(double));
    return h;
  }

  Linear& cls() { return cls_; }
  Linear& loc() { return loc_; }
  std::int64_t num_classes() const { return cls_.out_dim(); }

 private:
  static Rng seed_rng(std::uint64_t seed, std::uint64_t salt) {
    return make_rng(derive_seed(seed, salt, 0x68656164ULL));
  }
  Linear cls_, loc_;
  Tensor pre_sigmoid_;
  Tensor boxes_cache_;
};

}  // namespace ssldet
