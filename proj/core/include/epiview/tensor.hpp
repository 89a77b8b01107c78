// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "epiview/error.hpp"

namespace epiview {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixD = RowMatrix<double>;

/// Per-sample patch features laid out view-major, then token, then channel.
/// Each view slice is a contiguous T x D row-major block.
template <typename Scalar>
class Tensor {
 public:
  using ViewMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstViewMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  Tensor(std::size_t views, std::size_t tokens, std::size_t dims)
      : views_(views), tokens_(tokens), dims_(dims), data_(views * tokens * dims, Scalar(0)) {}
  Tensor(std::size_t views, std::size_t tokens, std::size_t dims, std::vector<Scalar> data)
      : views_(views), tokens_(tokens), dims_(dims), data_(std::move(data)) {
    if (data_.size() != views_ * tokens_ * dims_) {
      fail(ErrorCode::ShapeMismatch, "tensor payload length does not match V*T*D");
    }
  }

  std::size_t views() const noexcept { return views_; }
  std::size_t tokens() const noexcept { return tokens_; }
  std::size_t dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  Scalar& at(std::size_t v, std::size_t t, std::size_t d) {
    return data_[(v * tokens_ + t) * dims_ + d];
  }
  Scalar at(std::size_t v, std::size_t t, std::size_t d) const {
    return data_[(v * tokens_ + t) * dims_ + d];
  }

  std::span<Scalar> token(std::size_t v, std::size_t t) {
    return {data_.data() + (v * tokens_ + t) * dims_, dims_};
  }
  std::span<const Scalar> token(std::size_t v, std::size_t t) const {
    return {data_.data() + (v * tokens_ + t) * dims_, dims_};
  }

  ViewMap view(std::size_t v) {
    return ViewMap(data_.data() + v * tokens_ * dims_, static_cast<Eigen::Index>(tokens_),
                   static_cast<Eigen::Index>(dims_));
  }
  ConstViewMap view(std::size_t v) const {
    return ConstViewMap(data_.data() + v * tokens_ * dims_, static_cast<Eigen::Index>(tokens_),
                        static_cast<Eigen::Index>(dims_));
  }

  std::vector<Scalar>& data() noexcept { return data_; }
  const std::vector<Scalar>& data() const noexcept { return data_; }

  bool all_finite() const {
    for (const Scalar x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return Tensor<Other>(views_, tokens_, dims_, std::move(out));
  }

  bool same_shape(const Tensor& other) const {
    return views_ == other.views_ && tokens_ == other.tokens_ && dims_ == other.dims_;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t views_ = 0;
  std::size_t tokens_ = 0;
  std::size_t dims_ = 0;
  std::vector<Scalar> data_;
};

/// Storage/interchange precision (MVFT files).
using FeatureTensor = Tensor<float>;
/// Compute precision for attention, losses and gradients.
using FeatureTensor64 = Tensor<double>;

}  // namespace epiview
