#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "clasp/error.hpp"

namespace clasp {

// Dense row-major f64 tensor. Deliberately small: shape bookkeeping plus raw
// storage; the arithmetic lives in clasp::kern on flat pointers.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::initializer_list<std::size_t> s) { resize(s); }
  explicit Tensor(const std::vector<std::size_t>& s) { resize(s); }

  void resize(const std::vector<std::size_t>& s) {
    shape = s;
    std::size_t n = 1;
    for (const std::size_t d : s) n *= d;
    data.assign(n, 0.0);
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void require_shape(const std::vector<std::size_t>& s, const char* what) const {
    if (shape != s) throw ConfigError(std::string("shape mismatch in ") + what);
  }
};

}  // namespace clasp
