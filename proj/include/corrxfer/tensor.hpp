#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrxfer {

/// Dense row-major tensor. Shape convention for image data is NCHW.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw std::invalid_argument("tensor shape/data mismatch");
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  const T& at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace corrxfer
