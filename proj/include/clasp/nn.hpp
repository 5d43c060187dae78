#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "clasp/rng.hpp"
#include "clasp/tensor.hpp"

namespace clasp::nn {

// One named trainable tensor plus its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered, named parameter registry. Registration order is the canonical
// iteration order everywhere (optimizer slots, EMA pairing, checkpoints),
// so two stores built by the same construction sequence are isomorphic.
class ParamStore {
 public:
  Param& create(const std::string& name, const std::vector<std::size_t>& shape);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  std::size_t count() const { return params_.size(); }
  Param& param(std::size_t i) { return *params_[i]; }
  const Param& param(std::size_t i) const { return *params_[i]; }

  void zero_grads();
  std::size_t total_size() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gaussian init, sigma 0.02 unless stated otherwise at the call site.
void gaussian_init(Tensor& t, Rng& rng, double sigma);

double gelu(double x);
double gelu_grad(double x);
double softplus(double x);   // overflow-safe log(1 + e^x)
double sigmoid(double x);

// In-place stable softmax over a contiguous row.
void softmax_row(double* x, std::size_t n);
// out = log softmax(x); x untouched.
void log_softmax_row(const double* x, double* out, std::size_t n);

}  // namespace clasp::nn
