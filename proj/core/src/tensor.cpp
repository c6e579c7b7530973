// SPDX-License-Identifier: Apache-2.0
#include "emforge/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace emforge {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType dtype_from_string(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw DTypeError("unknown dtype '" + name + "' (expected f32 or f64)");
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::shared_ptr<const Storage> storage)
    : shape_(std::move(shape)), storage_(std::move(storage)) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape_));
  }
  dtype_ = std::holds_alternative<std::vector<float>>(*storage_) ? DType::f32 : DType::f64;
  const std::size_t len = std::visit([](const auto& v) { return v.size(); }, *storage_);
  if (len != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(len) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const std::size_t n = shape_numel(shape);
  return dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    return make_tensor<T>(std::move(shape), std::vector<T>(n, static_cast<T>(value)));
  });
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  return dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    return make_tensor<T>(std::move(shape), std::vector<T>(values.begin(), values.end()));
  });
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> values) {
  return make_tensor<float>(std::move(shape), std::move(values));
}

Tensor Tensor::from_f64(Shape shape, std::vector<double> values) {
  return make_tensor<double>(std::move(shape), std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t flat_index) const {
  if (flat_index >= numel()) throw ShapeError("at(): index out of range");
  return dispatch(dtype_, [&](auto tag) { return static_cast<double>(data<decltype(tag)>()[flat_index]); });
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype_, [&](auto tag) {
    auto d = data<decltype(tag)>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor Tensor::astype(DType dtype) const {
  if (dtype == dtype_) return detach();
  return dispatch(dtype_, [&](auto src_tag) {
    auto src = data<decltype(src_tag)>();
    return dispatch(dtype, [&](auto dst_tag) {
      using D = decltype(dst_tag);
      std::vector<D> out(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<D>(src[i]);
      return make_tensor<D>(shape_, std::move(out));
    });
  });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), storage_);
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_.reset();
  t.var_ = 0;
  return t;
}

Tensor Tensor::with_var(std::shared_ptr<detail::TapeState> tape, std::size_t var) const {
  Tensor t = *this;
  t.tape_ = std::move(tape);
  t.var_ = var;
  return t;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (!defined() || !other.defined()) return defined() == other.defined();
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  return dispatch(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto a = data<T>();
    auto b = other.data<T>();
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
  });
}

void check_finite(const Tensor& t, const char* where) {
  dispatch(t.dtype(), [&](auto tag) {
    for (auto v : t.data<decltype(tag)>()) {
      if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite value produced");
    }
  });
}

}  // namespace emforge
