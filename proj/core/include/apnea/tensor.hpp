#ifndef APNEA_TENSOR_HPP
#define APNEA_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <utility>
#include <vector>

#include "apnea/errors.hpp"

namespace apnea {

/// Dense row-major tensor of doubles, rank 1-3.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(product(shape), 0.0) {}
  Tensor(std::initializer_list<std::size_t> s)
      : shape(s), data(product(shape), 0.0) {}

  static std::size_t product(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return s.empty() ? 0 : n;
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return data.size(); }
  std::size_t extent(std::size_t d) const { return shape[d]; }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t a, std::size_t b) {
    return data[a * shape[1] + b];
  }
  double operator()(std::size_t a, std::size_t b) const {
    return data[a * shape[1] + b];
  }
  double& operator()(std::size_t a, std::size_t b, std::size_t c) {
    return data[(a * shape[1] + b) * shape[2] + c];
  }
  double operator()(std::size_t a, std::size_t b, std::size_t c) const {
    return data[(a * shape[1] + b) * shape[2] + c];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void require_shape(const Tensor& t, const std::vector<std::size_t>& s,
                          const char* what) {
  if (t.shape != s) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace apnea

#endif
