#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "ssldet/common.hpp"

namespace ssldet {

// Dense row-major tensor of doubles. Just enough for the conv stack and
// the image pipeline; anything matrix-shaped is mapped into Eigen.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}
  Tensor(std::initializer_list<std::int64_t> shape)
      : Tensor(std::vector<std::int64_t>(shape)) {}

  static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
      if (d < 0) throw ContractError("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }

  double& at3(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at3(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at4(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at4(std::int64_t b, std::int64_t c, std::int64_t y,
             std::int64_t x) const {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  using MatMap =
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>;

  MatMap as_matrix(std::int64_t rows, std::int64_t cols) {
    if (rows * cols != numel()) throw ContractError("tensor: bad matrix view");
    return MatMap(data(), rows, cols);
  }
  ConstMatMap as_matrix(std::int64_t rows, std::int64_t cols) const {
    if (rows * cols != numel()) throw ContractError("tensor: bad matrix view");
    return ConstMatMap(data(), rows, cols);
  }

  std::uint64_t digest() const {
    return fnv1a(data_.data(), data_.size() * sizeof(double));
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

using MatrixXdRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace ssldet
