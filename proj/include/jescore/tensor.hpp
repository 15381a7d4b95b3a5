#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "jescore/errors.hpp"

namespace jescore {

enum class DType : uint8_t { f32, f64 };

inline size_t dtype_size(DType dt) { return dt == DType::f32 ? 4 : 8; }
inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }
DType dtype_from_name(const std::string& name);

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense n-d array, row-major, single buffer, f32 or f64.
/// Copies share the buffer; ops never mutate their inputs, so a Tensor that
/// has been handed to an op is effectively immutable.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt);
  static Tensor full(Shape shape, double value, DType dt);
  static Tensor scalar(double value, DType dt);
  static Tensor from_f32(Shape shape, std::span<const float> values);
  static Tensor from_f64(Shape shape, std::span<const double> values);
  static Tensor from_f64(Shape shape, std::initializer_list<double> values, DType dt = DType::f64);

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  int64_t numel() const { return numel_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  bool defined() const { return buf_ != nullptr; }

  template <class T>
  std::span<T> data() {
    check_type<T>();
    return {reinterpret_cast<T*>(buf_.get()), static_cast<size_t>(numel_)};
  }
  template <class T>
  std::span<const T> data() const {
    check_type<T>();
    return {reinterpret_cast<const T*>(buf_.get()), static_cast<size_t>(numel_)};
  }
  void* raw() { return buf_.get(); }
  const void* raw() const { return buf_.get(); }
  size_t nbytes() const { return static_cast<size_t>(numel_) * dtype_size(dtype_); }

  /// Deep copy.
  Tensor clone() const;
  /// Deep copy with dtype conversion (identity conversion still copies).
  Tensor astype(DType dt) const;
  /// Deep copy reinterpreted under a new shape with equal numel.
  Tensor reshaped(Shape shape) const;

  /// Scalar read regardless of dtype.
  double item() const;
  double at(int64_t flat_index) const;
  void set(int64_t flat_index, double v);

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Tensor(Shape shape, DType dt);
  template <class T>
  void check_type() const;

  Shape shape_;
  DType dtype_ = DType::f32;
  int64_t numel_ = 0;
  std::shared_ptr<std::byte[]> buf_;
};

template <>
inline void Tensor::check_type<float>() const {
  if (dtype_ != DType::f32) throw UsageError("tensor is not f32");
}
template <>
inline void Tensor::check_type<double>() const {
  if (dtype_ != DType::f64) throw UsageError("tensor is not f64");
}

}  // namespace jescore
