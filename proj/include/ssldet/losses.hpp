#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "ssldet/box.hpp"
#include "ssldet/common.hpp"
#include "ssldet/tensor.hpp"

namespace ssldet {

inline constexpr double kNormEps = 1e-8;

inline double cosine_sim(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size())
    throw ContractError("cosine_sim: dimension mismatch");
  const double nu = std::max(u.norm(), kNormEps);
  const double nv = std::max(v.norm(), kNormEps);
  return u.dot(v) / (nu * nv);
}

// ---------------------------------------------------------------------------
// NT-Xent / InfoNCE over a batch of 2B embeddings where rows 2m and 2m+1
// are the two views of source m. The denominator for anchor i runs over
// all other 2B-1 rows.

struct InfoNceResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // (2B, D), d loss / d z
};

namespace detail {

struct NceWork {
  Eigen::MatrixXd zhat;       // row-normalized embeddings
  Eigen::VectorXd norms;      // eps-floored row norms
  Eigen::MatrixXd sim;        // zhat * zhat^T
  Eigen::MatrixXd softmax;    // row-wise softmax over j != i of sim/tau
  double loss = 0.0;
};

inline NceWork nce_forward(const Eigen::MatrixXd& z, double tau) {
  if (tau <= 0.0) throw DomainError("info_nce: temperature must be positive");
  const auto n = z.rows();
  if (n % 2 != 0) throw ContractError("info_nce: row count must be even");
  if (n < 4) throw ContractError("info_nce: need at least two source pairs");

  NceWork w;
  w.norms.resize(n);
  w.zhat.resize(n, z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    w.norms(i) = std::max(z.row(i).norm(), kNormEps);
    w.zhat.row(i) = z.row(i) / w.norms(i);
  }
  w.sim.noalias() = w.zhat * w.zhat.transpose();

  w.softmax.setZero(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index pos = i ^ 1;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, w.sim(i, j) / tau);
    double denom = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) denom += std::exp(w.sim(i, j) / tau - mx);
    const double lse = mx + std::log(denom);
    total += lse - w.sim(i, pos) / tau;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) w.softmax(i, j) = std::exp(w.sim(i, j) / tau - mx) / denom;
  }
  w.loss = total / static_cast<double>(n);
  return w;
}

}  // namespace detail

inline double info_nce(const Eigen::MatrixXd& z, double tau) {
  return detail::nce_forward(z, tau).loss;
}

inline InfoNceResult info_nce_with_grad(const Eigen::MatrixXd& z, double tau) {
  const auto w = detail::nce_forward(z, tau);
  const auto n = z.rows();

  // coeff(i,j) = d loss / d sim(i,j) for the ordered pair (i,j), j != i.
  Eigen::MatrixXd coeff = w.softmax;
  for (Eigen::Index i = 0; i < n; ++i) coeff(i, i ^ 1) -= 1.0;
  coeff /= tau * static_cast<double>(n);

  InfoNceResult r;
  r.loss = w.loss;
  r.grad.setZero(n, z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double c = coeff(i, j) + coeff(j, i);
      if (c == 0.0) continue;
      // d sim(i,j) / d z_i = (zhat_j - sim_ij * zhat_i) / ||z_i||
      r.grad.row(i) +=
          c * (w.zhat.row(j) - w.sim(i, j) * w.zhat.row(i)) / w.norms(i);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Categorical cross-entropy on raw logits, log-sum-exp stable form.

inline double cce(const Eigen::VectorXd& logits, int target) {
  if (target < 0 || target >= logits.size())
    throw ContractError("cce: target index out of range");
  const double mx = logits.maxCoeff();
  double denom = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    denom += std::exp(logits(i) - mx);
  return mx + std::log(denom) - logits(target);
}

inline Eigen::VectorXd cce_grad(const Eigen::VectorXd& logits, int target) {
  if (target < 0 || target >= logits.size())
    throw ContractError("cce: target index out of range");
  const double mx = logits.maxCoeff();
  Eigen::VectorXd g = (logits.array() - mx).exp();
  g /= g.sum();
  g(target) -= 1.0;
  return g;
}

// diou() and diou_grad() live in box.hpp.

inline double combined_loss(double cce_value, double diou_value, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw DomainError("combined_loss: alpha must be in [0,1]");
  return alpha * cce_value + (1.0 - alpha) * diou_value;
}

// ---------------------------------------------------------------------------
// Batch reductions: arithmetic means of per-sample losses.

inline double cce_batch(const Tensor& logits, const std::vector<int>& targets) {
  const auto b = logits.dim(0);
  const auto k = logits.dim(1);
  if (static_cast<std::size_t>(b) != targets.size())
    throw ContractError("cce_batch: batch size mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    Eigen::Map<const Eigen::VectorXd> row(logits.data() + i * k, k);
    acc += cce(row, targets[i]);
  }
  return acc / static_cast<double>(b);
}

inline double diou_batch(const Tensor& boxes,
                         const std::vector<BoundingBox>& gt) {
  const auto b = boxes.dim(0);
  if (static_cast<std::size_t>(b) != gt.size())
    throw ContractError("diou_batch: batch size mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    Box4 pred{boxes[i * 4 + 0], boxes[i * 4 + 1], boxes[i * 4 + 2],
              boxes[i * 4 + 3]};
    acc += diou(pred, gt[i]);
  }
  return acc / static_cast<double>(b);
}

}  // namespace ssldet
