// Copyright 2026 The fedvae Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fedvae {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense n-d array of doubles with row-major flat storage. Rank is small
/// (<= 4 in practice: [batch, channels, height, width]).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(Eigen::VectorXd::Zero(count(shape_))) {}

  Tensor(std::vector<int> shape, Eigen::VectorXd data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  Eigen::Index size() const { return data_.size(); }

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }

  double& operator[](Eigen::Index i) { return data_[i]; }
  double operator[](Eigen::Index i) const { return data_[i]; }

  bool all_finite() const { return data_.allFinite(); }

  /// View as [rows, cols]; rows*cols must equal size().
  Eigen::Map<MatrixRM> as_matrix(Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != data_.size()) {
      throw std::invalid_argument("Tensor: matrix view size mismatch");
    }
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const MatrixRM> as_matrix(Eigen::Index rows, Eigen::Index cols) const {
    if (rows * cols != data_.size()) {
      throw std::invalid_argument("Tensor: matrix view size mismatch");
    }
    return {data_.data(), rows, cols};
  }

  /// [batch, features] view of a rank >= 1 tensor, batch = dim(0).
  Eigen::Map<MatrixRM> as_batch_matrix() {
    const Eigen::Index b = rank() == 0 ? 1 : dim(0);
    return as_matrix(b, b == 0 ? 0 : data_.size() / b);
  }
  Eigen::Map<const MatrixRM> as_batch_matrix() const {
    const Eigen::Index b = rank() == 0 ? 1 : dim(0);
    return as_matrix(b, b == 0 ? 0 : data_.size() / b);
  }

  /// Same storage, new shape.
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != data_.size()) {
      throw std::invalid_argument("Tensor: reshape size mismatch");
    }
    return Tensor(std::move(shape), data_);
  }

  /// One sample of a batch tensor, as [1, rest...].
  Tensor slice_batch(int i) const {
    const Eigen::Index per = data_.size() / dim(0);
    std::vector<int> s = shape_;
    s[0] = 1;
    return Tensor(std::move(s), data_.segment(per * i, per));
  }

  static Eigen::Index count(const std::vector<int>& shape) {
    Eigen::Index n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
      n *= d;
    }
    return n;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int> shape_;
  Eigen::VectorXd data_;
};

inline void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw std::runtime_error(std::string("non-finite values in ") + what);
  }
}

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace fedvae
