// SPDX-License-Identifier: Apache-2.0
#include "smatch/tensor.hpp"

#include <cstring>
#include <sstream>

#include "smatch/errors.hpp"

namespace smatch {

const char* dtype_name(DType dtype) {
  return dtype == DType::f32 ? "float32" : "float64";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void round_to(DType dtype, std::span<double> values) {
  if (dtype != DType::f32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor::Tensor(Shape shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype), values_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) + " elements, got " +
                         std::to_string(values_.size()));
  }
  round_to(dtype_, values_);
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) {
  return Tensor(Shape{}, std::vector<double>{value}, dtype);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) +
                         " does not match shape " + shape_string(shape_));
  }
  std::size_t linear = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw DimensionError("index " + std::to_string(i) + " out of range on axis " +
                           std::to_string(axis) + " of " + shape_string(shape_));
    }
    linear = linear * shape_[axis] + i;
    ++axis;
  }
  return linear;
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  }
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), values_, dtype_);
}

Tensor Tensor::to(DType dtype) const { return Tensor(shape_, values_, dtype); }

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  if (values_.size() != other.values_.size()) return false;
  return values_.empty() ||
         std::memcmp(values_.data(), other.values_.data(),
                     values_.size() * sizeof(double)) == 0;
}

}  // namespace smatch
