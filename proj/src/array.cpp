#include "esr/array.hpp"

#include <cmath>

namespace esr {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  size_t n = 1;
  for (size_t d : shape_) n *= d;
  data_.assign(n, fill);
}

Array Array::scalar(double v) {
  Array a{Shape{}};
  a.data_ = {v};
  return a;
}

Array Array::vec(std::vector<double> v) {
  Array a;
  a.shape_ = {v.size()};
  a.data_ = std::move(v);
  return a;
}

Array Array::matrix(size_t rows, size_t cols, std::vector<double> v) {
  if (v.size() != rows * cols)
    fail(ErrorCode::invalid_argument,
         "Array::matrix: " + std::to_string(v.size()) + " values for " +
             std::to_string(rows) + "x" + std::to_string(cols));
  Array a;
  a.shape_ = {rows, cols};
  a.data_ = std::move(v);
  return a;
}

double Array::item() const {
  if (data_.size() != 1)
    fail(ErrorCode::invalid_argument,
         "Array::item on array of shape " + shape_str(shape_));
  return data_[0];
}

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace esr
