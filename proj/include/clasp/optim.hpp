#pragma once

#include <cstddef>
#include <vector>

#include "clasp/nn.hpp"
#include "clasp/tensor.hpp"

namespace clasp {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam over one parameter store. Moment slots are
// aligned with the store's registration order.
class AdamW {
 public:
  AdamW(nn::ParamStore& store, const AdamWConfig& cfg);

  // One update from the gradients currently in the store, at the given
  // learning rate (the schedule lives in the caller).
  void step(double lr);

  long steps_taken() const { return t_; }
  void set_steps_taken(long t) { t_ = t; }
  std::size_t slot_count() const { return m_.size(); }
  Tensor& m_slot(std::size_t i) { return m_[i]; }
  Tensor& v_slot(std::size_t i) { return v_[i]; }
  const Tensor& m_slot(std::size_t i) const { return m_[i]; }
  const Tensor& v_slot(std::size_t i) const { return v_[i]; }
  const AdamWConfig& config() const { return cfg_; }

  void reset();

 private:
  nn::ParamStore& store_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// Cosine annealing from base_lr to 0 across total steps; step is 0-based.
double cosine_lr(double base_lr, long step, long total_steps);

}  // namespace clasp
