#include "jescore/tensor.hpp"

#include <cmath>
#include <cstring>
#include <new>
#include <sstream>

namespace jescore {

DType dtype_from_name(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw DataError("unknown dtype name: " + name);
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw UsageError("shape dimensions must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace {
constexpr size_t kAlign = 64;

std::shared_ptr<std::byte[]> alloc_aligned(size_t nbytes) {
  if (nbytes == 0) nbytes = kAlign;
  auto* p = static_cast<std::byte*>(::operator new[](nbytes, std::align_val_t{kAlign}));
  return std::shared_ptr<std::byte[]>(
      p, [](std::byte* q) { ::operator delete[](q, std::align_val_t{kAlign}); });
}
}  // namespace

Tensor::Tensor(Shape shape, DType dt) : shape_(std::move(shape)), dtype_(dt) {
  numel_ = shape_numel(shape_);
  buf_ = alloc_aligned(static_cast<size_t>(numel_) * dtype_size(dt));
}

Tensor Tensor::zeros(Shape shape, DType dt) {
  Tensor t(std::move(shape), dt);
  std::memset(t.buf_.get(), 0, t.nbytes());
  return t;
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
  Tensor t(std::move(shape), dt);
  if (dt == DType::f32) {
    auto d = t.data<float>();
    std::fill(d.begin(), d.end(), static_cast<float>(value));
  } else {
    auto d = t.data<double>();
    std::fill(d.begin(), d.end(), value);
  }
  return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

Tensor Tensor::from_f32(Shape shape, std::span<const float> values) {
  Tensor t(std::move(shape), DType::f32);
  if (static_cast<int64_t>(values.size()) != t.numel_)
    throw UsageError("from_f32: value count does not match shape");
  std::memcpy(t.buf_.get(), values.data(), t.nbytes());
  return t;
}

Tensor Tensor::from_f64(Shape shape, std::span<const double> values) {
  Tensor t(std::move(shape), DType::f64);
  if (static_cast<int64_t>(values.size()) != t.numel_)
    throw UsageError("from_f64: value count does not match shape");
  std::memcpy(t.buf_.get(), values.data(), t.nbytes());
  return t;
}

Tensor Tensor::from_f64(Shape shape, std::initializer_list<double> values, DType dt) {
  Tensor t = from_f64(std::move(shape), std::span<const double>(values.begin(), values.size()));
  return dt == DType::f64 ? t : t.astype(dt);
}

Tensor Tensor::clone() const {
  Tensor t(shape_, dtype_);
  std::memcpy(t.buf_.get(), buf_.get(), nbytes());
  return t;
}

Tensor Tensor::astype(DType dt) const {
  if (dt == dtype_) return clone();
  Tensor t(shape_, dt);
  if (dtype_ == DType::f32) {
    auto src = data<float>();
    auto dst = t.data<double>();
    for (int64_t i = 0; i < numel_; ++i) dst[i] = static_cast<double>(src[i]);
  } else {
    auto src = data<double>();
    auto dst = t.data<float>();
    for (int64_t i = 0; i < numel_; ++i) dst[i] = static_cast<float>(src[i]);
  }
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel_)
    throw UsageError("reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(shape));
  Tensor t = clone();
  t.shape_ = std::move(shape);
  return t;
}

double Tensor::item() const {
  if (numel_ != 1) throw UsageError("item() requires a single-element tensor");
  return at(0);
}

double Tensor::at(int64_t i) const {
  if (i < 0 || i >= numel_) throw UsageError("tensor index out of range");
  return dtype_ == DType::f32 ? static_cast<double>(data<float>()[static_cast<size_t>(i)])
                              : data<double>()[static_cast<size_t>(i)];
}

void Tensor::set(int64_t i, double v) {
  if (i < 0 || i >= numel_) throw UsageError("tensor index out of range");
  if (dtype_ == DType::f32)
    data<float>()[static_cast<size_t>(i)] = static_cast<float>(v);
  else
    data<double>()[static_cast<size_t>(i)] = v;
}

bool Tensor::all_finite() const {
  if (dtype_ == DType::f32) {
    for (float v : data<float>())
      if (!std::isfinite(v)) return false;
  } else {
    for (double v : data<double>())
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace jescore
