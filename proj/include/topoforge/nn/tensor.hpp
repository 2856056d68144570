#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "topoforge/errors.hpp"

namespace topoforge::nn {

/// Dense NCHW array. Value semantics; the buffer is always contiguous.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0)) : dims_{n, c, h, w} {
    if (n < 1 || c < 1 || h < 1 || w < 1) {
      std::ostringstream msg;
      msg << "tensor dims must be >= 1, got (" << n << "," << c << "," << h << "," << w << ")";
      throw ParameterError(msg.str());
    }
    data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.n(), t.c(), t.h(), t.w()); }

  int n() const { return dims_[0]; }
  int c() const { return dims_[1]; }
  int h() const { return dims_[2]; }
  int w() const { return dims_[3]; }
  const std::array<int, 4>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t plane() const { return static_cast<std::size_t>(h()) * w(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + y) * dims_[3] + x;
  }
  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the (h, w) plane of sample n, channel c.
  T* plane_ptr(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane_ptr(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  std::string shape_string() const {
    std::ostringstream s;
    s << "(" << dims_[0] << "," << dims_[1] << "," << dims_[2] << "," << dims_[3] << ")";
    return s.str();
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n(), c(), h(), w());
    for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same(const Tensor& o, const char* what) const {
    if (!same_shape(o)) {
      throw ParameterError(std::string(what) + ": shape mismatch " + shape_string() + " vs " +
                           o.shape_string());
    }
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::array<int, 4> dims_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor4 = Tensor<float>;

}  // namespace topoforge::nn
