// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace smatch {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

const char* dtype_name(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array. Elements are held as double; a float32 tensor rounds
// every element to the nearest float at construction, so its contents are
// exactly the float32 values it would hold on disk.
//
// Tensors are immutable once built. Producers fill a std::vector<double> and
// hand it over.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f64);
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::f64);

  static Tensor full(Shape shape, double value, DType dtype = DType::f64);
  static Tensor scalar(double value, DType dtype = DType::f64);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return values_.size(); }
  DType dtype() const noexcept { return dtype_; }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const double> values() const noexcept { return values_; }
  const double* data() const noexcept { return values_.data(); }
  double operator[](std::size_t i) const { return values_[i]; }

  // Row-major linear index of a full coordinate.
  std::size_t offset(std::initializer_list<std::size_t> index) const;
  double at(std::initializer_list<std::size_t> index) const {
    return values_[offset(index)];
  }
  double item() const;

  Tensor reshaped(Shape shape) const;
  Tensor to(DType dtype) const;

  // Same shape, dtype and bit patterns.
  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_{0};
  DType dtype_ = DType::f64;
  std::vector<double> values_;
};

// Rounds values to the precision of dtype in place.
void round_to(DType dtype, std::span<double> values);

}  // namespace smatch
