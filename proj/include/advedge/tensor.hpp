#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace advedge {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw ShapeError("tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major N-d array. Value type; cheap to copy for the sizes this
/// library works with (28x28 images, small kernel stacks).
template <typename T = float>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel(shape_)), T(0)) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != numel(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at2(int y, int x) { return data_[static_cast<std::size_t>(y) * dim(1) + x]; }
  T at2(int y, int x) const { return data_[static_cast<std::size_t>(y) * dim(1) + x]; }

  T& at3(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x]; }
  T at3(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x]; }

  T& at4(int a, int b, int y, int x) {
    return data_[((static_cast<std::size_t>(a) * dim(1) + b) * dim(2) + y) * dim(3) + x];
  }
  T at4(int a, int b, int y, int x) const {
    return data_[((static_cast<std::size_t>(a) * dim(1) + b) * dim(2) + y) * dim(3) + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* ctx) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(ctx) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = std::min(hi, std::max(lo, a[i]));
  return out;
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m = T(0);
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

template <typename T>
T linf_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "linf_diff");
  T m = T(0);
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// x composed with a perturbation, clipped into the valid pixel range. This is
/// the canonical form of every image that reaches a model.
template <typename T>
Tensor<T> compose_clipped(const Tensor<T>& x, const Tensor<T>& delta) {
  check_same_shape(x, delta, "compose_clipped");
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = std::min(T(1), std::max(T(0), x[i] + delta[i]));
  return out;
}

}  // namespace advedge
