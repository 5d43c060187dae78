#include "clasp/nn.hpp"

#include <cmath>

#include "clasp/error.hpp"

namespace clasp::nn {

Param& ParamStore::create(const std::string& name,
                          const std::vector<std::size_t>& shape) {
  if (index_.count(name))
    throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value.resize(shape);
  p->grad.resize(shape);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::at(const std::string& name) {
  Param* p = find(name);
  if (!p) throw ConfigError("unknown parameter: " + name);
  return *p;
}

const Param& ParamStore::at(const std::string& name) const {
  const Param* p = find(name);
  if (!p) throw ConfigError("unknown parameter: " + name);
  return *p;
}

Param* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.zero();
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void gaussian_init(Tensor& t, Rng& rng, double sigma) {
  for (double& v : t.data) v = sigma * rng.normal();
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad(double x) {
  static const double kInvSqrt2Pi = 0.3989422804014326779;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void softmax_row(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    s += x[i];
  }
  const double inv = 1.0 / s;
  for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

void log_softmax_row(const double* x, double* out, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - lse;
}

}  // namespace clasp::nn
