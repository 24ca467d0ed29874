#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "supnerf/errors.hpp"

namespace supnerf {

// Dense row-major tensor of 64-bit reals. Value semantics throughout; the
// tape owns all sharing concerns.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_))
      throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor full(std::vector<std::int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor zeros(std::vector<std::int64_t> shape) {
    return Tensor(std::move(shape));
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t extent(std::int64_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }

  // 2D accessor (row-major).
  double& at(std::int64_t r, std::int64_t c) {
    return data_[r * shape_[1] + c];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return data_[r * shape_[1] + c];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const;

  static std::string shape_str(const std::vector<std::int64_t>& s);

  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape);

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace supnerf
