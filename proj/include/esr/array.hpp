#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "esr/common.hpp"

namespace esr {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);

// Dense row-major array of doubles, any rank. Rank 0 is a scalar.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);

  static Array scalar(double v);
  static Array vec(std::vector<double> v);
  static Array matrix(size_t rows, size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  size_t rows() const { return shape_.at(0); }
  size_t cols() const { return shape_.at(1); }

  double& at(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
  double at(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(size_t i, size_t j, size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(size_t i, size_t j, size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Scalar access for rank 0 or any single-element array.
  double item() const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace esr
