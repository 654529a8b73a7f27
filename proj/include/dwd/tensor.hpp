#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dwd/errors.hpp"

namespace dwd {

/// Dense row-major matrix. Float matrices hold sampled data and weights;
/// double matrices carry all linear algebra.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::shape, "matrix data length does not match extents");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Weights are n x c x kh x kw; activations are N x c x H x W.
enum class Role { weight_nckk, activation_nchw };

inline std::string to_string(Role r) { return r == Role::weight_nckk ? "weight_nckk" : "activation_nchw"; }

/// Dense single-precision 4-D array, row-major in declared dimension order.
class Tensor4 {
 public:
  using Dims = std::array<std::size_t, 4>;

  Tensor4() = default;
  Tensor4(Role role, Dims dims, float fill = 0.0f)
      : role_(role), dims_(dims), data_(dims[0] * dims[1] * dims[2] * dims[3], fill) {}
  Tensor4(Role role, Dims dims, std::vector<float> data) : role_(role), dims_(dims), data_(std::move(data)) {
    require(data_.size() == dims[0] * dims[1] * dims[2] * dims[3], ErrorKind::shape,
            "tensor data length does not match extents");
  }

  Role role() const noexcept { return role_; }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t i) const noexcept { return dims_[i]; }
  std::size_t size() const noexcept { return data_.size(); }

  float& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) noexcept {
    return data_[offset(a, b, c, d)];
  }
  float operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    return data_[offset(a, b, c, d)];
  }

  std::size_t offset(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    return ((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  void expect_role(Role r, const char* what) const {
    if (role_ != r) fail(ErrorKind::shape, std::string(what) + ": expected " + to_string(r) + " tensor, got " + to_string(role_));
  }

  bool operator==(const Tensor4&) const = default;

 private:
  Role role_ = Role::activation_nchw;
  Dims dims_{0, 0, 0, 0};
  std::vector<float> data_;
};

}  // namespace dwd
