#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mde/common.hpp"

namespace mde {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    MDE_CHECK(d > 0, DimensionError, "non-positive dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major N-dimensional array. The scalar type is float for training
// and double for gradient verification.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    MDE_CHECK(shape_numel(shape) == static_cast<int64_t>(data.size()), DimensionError,
              "tensor data length ", data.size(), " does not match shape ", shape_str(shape));
    for (int64_t d : shape)
      MDE_CHECK(d > 0, DimensionError, "non-positive dimension in shape ", shape_str(shape));
  }

  static Tensor zeros(Shape sh) {
    int64_t n = shape_numel(sh);
    return Tensor(std::move(sh), std::vector<S>(static_cast<size_t>(n), S(0)));
  }
  static Tensor full(Shape sh, S v) {
    int64_t n = shape_numel(sh);
    return Tensor(std::move(sh), std::vector<S>(static_cast<size_t>(n), v));
  }
  static Tensor scalar(S v) { return Tensor({1}, {v}); }
  static Tensor from(Shape sh, std::vector<S> vals) { return Tensor(std::move(sh), std::move(vals)); }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool empty() const { return data.empty(); }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // Convenience indexers for the common layouts; kernels index raw data.
  S& at2(int64_t a, int64_t b) { return data[static_cast<size_t>(a * shape[1] + b)]; }
  const S& at2(int64_t a, int64_t b) const { return data[static_cast<size_t>(a * shape[1] + b)]; }
  S& at3(int64_t a, int64_t b, int64_t c) {
    return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
  }
  const S& at3(int64_t a, int64_t b, int64_t c) const {
    return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
  }
  S& at4(int64_t a, int64_t b, int64_t c, int64_t d) {
    return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
  }
  const S& at4(int64_t a, int64_t b, int64_t c, int64_t d) const {
    return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Tensor reshaped(Shape sh) const {
    MDE_CHECK(shape_numel(sh) == size(), DimensionError, "reshape ", shape_str(shape), " -> ",
              shape_str(sh), " changes element count");
    return Tensor(std::move(sh), data);
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> d(data.size());
    for (size_t i = 0; i < data.size(); ++i) d[i] = static_cast<T>(data[i]);
    return Tensor<T>(shape, std::move(d));
  }
};

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  MDE_CHECK(a.same_shape(b), DimensionError, "max_abs_diff shape mismatch ", shape_str(a.shape),
            " vs ", shape_str(b.shape));
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace mde
