// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "emforge/error.hpp"

namespace emforge {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
class TapeState;
}

// Immutable dense row-major array. Copies share storage; every operation
// returns a fresh value. A tensor may additionally be tracked by a Tape, in
// which case operations applied to it are recorded for reverse-mode
// differentiation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype);
  static Tensor full(Shape shape, double value, DType dtype);
  static Tensor scalar(double value, DType dtype);
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype);
  static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype);
  static Tensor from_f32(Shape shape, std::vector<float> values);
  static Tensor from_f64(Shape shape, std::vector<double> values);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return shape_numel(shape_); }
  DType dtype() const { return dtype_; }

  template <class T>
  std::span<const T> data() const;

  double at(std::size_t flat_index) const;
  double item() const;
  std::vector<double> to_vector() const;

  Tensor astype(DType dtype) const;
  Tensor reshaped(Shape shape) const;

  // Same values, no tape association.
  Tensor detach() const;
  bool tracked() const { return tape_ != nullptr; }

  // Same shape, dtype and bit patterns.
  bool bitwise_equal(const Tensor& other) const;

  // Internal: used by kernels and the tape.
  using Storage = std::variant<std::vector<float>, std::vector<double>>;
  Tensor(Shape shape, std::shared_ptr<const Storage> storage);
  const std::shared_ptr<const Storage>& storage() const { return storage_; }
  const std::shared_ptr<detail::TapeState>& tape_state() const { return tape_; }
  std::size_t var() const { return var_; }
  Tensor with_var(std::shared_ptr<detail::TapeState> tape, std::size_t var) const;

 private:
  Shape shape_;
  DType dtype_ = DType::f32;
  std::shared_ptr<const Storage> storage_;
  std::shared_ptr<detail::TapeState> tape_;
  std::size_t var_ = 0;
};

template <class T>
std::span<const T> Tensor::data() const {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (!storage_) throw Error("data(): undefined tensor");
  const auto* vec = std::get_if<std::vector<T>>(storage_.get());
  if (vec == nullptr) throw DTypeError("data(): dtype mismatch, tensor is " + to_string(dtype_));
  return {vec->data(), vec->size()};
}

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::f32;
  } else {
    static_assert(std::is_same_v<T, double>);
    return DType::f64;
  }
}

// Builds a tensor from an owned buffer; the buffer length must equal the
// shape's element count.
template <class T>
Tensor make_tensor(Shape shape, std::vector<T> values) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("make_tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_to_string(shape));
  }
  return Tensor(std::move(shape), std::make_shared<const Tensor::Storage>(std::move(values)));
}

// Calls fn(T{}) with T = float or double according to dtype.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

// Throws NumericError if any element is NaN or infinite.
void check_finite(const Tensor& t, const char* where);

}  // namespace emforge
