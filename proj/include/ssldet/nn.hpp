#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ssldet/common.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  explicit Param(std::string n, std::vector<std::int64_t> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}

  void zero_grad() { grad.fill(0.0); }
};

inline void he_init(Tensor& t, std::int64_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : t.raw()) v = dist(rng);
}

// ---------------------------------------------------------------------------

class Linear {
 public:
  Linear(std::int64_t in, std::int64_t out, Rng rng, std::string name)
      : in_(in),
        out_(out),
        weight_(name + ".weight", {out, in}),
        bias_(name + ".bias", {out}) {
    he_init(weight_.value, in, rng);
  }

  // x: (B, in) -> (B, out)
  Tensor forward(const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw ContractError("linear " + weight_.name + ": input dim mismatch");
    input_ = x;
    const auto b = x.dim(0);
    Tensor y({b, out_});
    auto ym = y.as_matrix(b, out_);
    ym.noalias() = x.as_matrix(b, in_) * weight_.value.as_matrix(out_, in_).transpose();
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t j = 0; j < out_; ++j) y[i * out_ + j] += bias_.value[j];
    return y;
  }

  Tensor backward(const Tensor& grad_out) {
    const auto b = input_.dim(0);
    auto g = grad_out.as_matrix(b, out_);
    auto x = input_.as_matrix(b, in_);
    weight_.grad.as_matrix(out_, in_).noalias() += g.transpose() * x;
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t j = 0; j < out_; ++j)
        bias_.grad[j] += grad_out[i * out_ + j];
    Tensor gx({b, in_});
    gx.as_matrix(b, in_).noalias() = g * weight_.value.as_matrix(out_, in_);
    return gx;
  }

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  std::int64_t in_dim() const { return in_; }
  std::int64_t out_dim() const { return out_; }

 private:
  std::int64_t in_, out_;
  Param weight_, bias_;
  Tensor input_;
};

// ---------------------------------------------------------------------------

// Same-padding strided conv via im2col + GEMM.
class Conv2d {
 public:
  Conv2d(std::int64_t in_c, std::int64_t out_c, int kernel, int stride,
         Rng rng, std::string name)
      : in_c_(in_c),
        out_c_(out_c),
        k_(kernel),
        stride_(stride),
        pad_(kernel / 2),
        weight_(name + ".weight", {out_c, in_c, kernel, kernel}),
        bias_(name + ".bias", {out_c}) {
    he_init(weight_.value, in_c * kernel * kernel, rng);
  }

  std::int64_t out_size(std::int64_t in) const {
    return (in + 2 * pad_ - k_) / stride_ + 1;
  }

  // x: (B, C, H, W)
  Tensor forward(const Tensor& x, bool cache = true) {
    if (x.rank() != 4 || x.dim(1) != in_c_)
      throw ContractError("conv " + weight_.name + ": input shape mismatch");
    const auto b = x.dim(0);
    const auto h = x.dim(2);
    const auto w = x.dim(3);
    const auto oh = out_size(h);
    const auto ow = out_size(w);
    if (cache) input_ = x;

    const std::int64_t kdim = in_c_ * k_ * k_;
    Tensor out({b, out_c_, oh, ow});
    MatrixXdRM col(oh * ow, kdim);
    auto wm = weight_.value.as_matrix(out_c_, kdim);
    for (std::int64_t img = 0; img < b; ++img) {
      im2col(x, img, col);
      MatrixXdRM y = col * wm.transpose();  // (oh*ow, out_c)
      for (std::int64_t oc = 0; oc < out_c_; ++oc) {
        const double bv = bias_.value[oc];
        double* dst = out.data() + ((img * out_c_ + oc) * oh * ow);
        for (std::int64_t i = 0; i < oh * ow; ++i) dst[i] = y(i, oc) + bv;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out, bool accumulate_param_grads = true) {
    const auto b = input_.dim(0);
    const auto h = input_.dim(2);
    const auto w = input_.dim(3);
    const auto oh = out_size(h);
    const auto ow = out_size(w);
    const std::int64_t kdim = in_c_ * k_ * k_;

    Tensor grad_in({b, in_c_, h, w});
    MatrixXdRM col(oh * ow, kdim);
    MatrixXdRM g(oh * ow, out_c_);
    auto wm = weight_.value.as_matrix(out_c_, kdim);
    auto wgrad = weight_.grad.as_matrix(out_c_, kdim);
    for (std::int64_t img = 0; img < b; ++img) {
      for (std::int64_t oc = 0; oc < out_c_; ++oc) {
        const double* src = grad_out.data() + ((img * out_c_ + oc) * oh * ow);
        for (std::int64_t i = 0; i < oh * ow; ++i) g(i, oc) = src[i];
      }
      if (accumulate_param_grads) {
        im2col(input_, img, col);
        wgrad.noalias() += g.transpose() * col;
        for (std::int64_t oc = 0; oc < out_c_; ++oc)
          bias_.grad[oc] += g.col(oc).sum();
      }
      MatrixXdRM dcol = g * wm;  // (oh*ow, kdim)
      col2im(dcol, grad_in, img);
    }
    return grad_in;
  }

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  std::int64_t out_channels() const { return out_c_; }

 private:
  void im2col(const Tensor& x, std::int64_t img, MatrixXdRM& col) const {
    const auto h = x.dim(2);
    const auto w = x.dim(3);
    const auto oh = out_size(h);
    const auto ow = out_size(w);
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t row = oy * ow + ox;
        std::int64_t kidx = 0;
        for (std::int64_t c = 0; c < in_c_; ++c) {
          const double* plane = x.data() + ((img * in_c_ + c) * h * w);
          for (int ky = 0; ky < k_; ++ky) {
            const std::int64_t iy = oy * stride_ - pad_ + ky;
            for (int kx = 0; kx < k_; ++kx, ++kidx) {
              const std::int64_t ix = ox * stride_ - pad_ + kx;
              col(row, kidx) = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                   ? plane[iy * w + ix]
                                   : 0.0;
            }
          }
        }
      }
  }

  void col2im(const MatrixXdRM& dcol, Tensor& grad_in, std::int64_t img) const {
    const auto h = grad_in.dim(2);
    const auto w = grad_in.dim(3);
    const auto oh = out_size(h);
    const auto ow = out_size(w);
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t row = oy * ow + ox;
        std::int64_t kidx = 0;
        for (std::int64_t c = 0; c < in_c_; ++c) {
          double* plane = grad_in.data() + ((img * in_c_ + c) * h * w);
          for (int ky = 0; ky < k_; ++ky) {
            const std::int64_t iy = oy * stride_ - pad_ + ky;
            for (int kx = 0; kx < k_; ++kx, ++kidx) {
              const std::int64_t ix = ox * stride_ - pad_ + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                plane[iy * w + ix] += dcol(row, kidx);
            }
          }
        }
      }
  }

  std::int64_t in_c_, out_c_;
  int k_, stride_, pad_;
  Param weight_, bias_;
  Tensor input_;
};

// ---------------------------------------------------------------------------

class ReLU {
 public:
  Tensor forward(const Tensor& x) {
    mask_.assign(x.numel(), false);
    Tensor y = x;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      if (y[i] > 0.0)
        mask_[i] = true;
      else
        y[i] = 0.0;
    }
    return y;
  }
  Tensor backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (!mask_[i]) g[i] = 0.0;
    return g;
  }

 private:
  std::vector<bool> mask_;
};

// (B,C,H,W) -> (B,C); exact spatial mean per channel.
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ContractError("global_avg_pool: expected 4-d");
  const auto b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({b, c});
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < c; ++j) {
      const double* plane = x.data() + ((i * c + j) * h * w);
      double acc = 0.0;
      for (std::int64_t k = 0; k < h * w; ++k) acc += plane[k];
      y[i * c + j] = acc / static_cast<double>(h * w);
    }
  return y;
}

inline Tensor global_avg_pool_backward(const Tensor& grad_pooled,
                                       const std::vector<std::int64_t>& shape) {
  Tensor g(shape);
  const auto b = shape[0], c = shape[1], h = shape[2], w = shape[3];
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < c; ++j) {
      const double v = grad_pooled[i * c + j] / static_cast<double>(h * w);
      double* plane = g.data() + ((i * c + j) * h * w);
      for (std::int64_t k = 0; k < h * w; ++k) plane[k] = v;
    }
  return g;
}

// ---------------------------------------------------------------------------

// Adam with standard moment defaults.
class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      for (std::int64_t j = 0; j < p.value.numel(); ++j) {
        const double g = p.grad[j];
        m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g;
        v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        p.value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace ssldet
