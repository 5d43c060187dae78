#include "clasp/optim.hpp"

#include <cmath>

#include "clasp/error.hpp"
#include "clasp/kernels.hpp"

namespace clasp {

AdamW::AdamW(nn::ParamStore& store, const AdamWConfig& cfg)
    : store_(store), cfg_(cfg) {
  if (cfg.lr <= 0.0) throw ConfigError("learning rate must be positive");
  m_.reserve(store.count());
  v_.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    m_.emplace_back(store.param(i).value.shape);
    v_.emplace_back(store.param(i).value.shape);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store_.count(); ++i) {
    nn::Param& p = store_.param(i);
    kern::adamw_update(p.value.ptr(), p.grad.ptr(), m_[i].ptr(), v_[i].ptr(),
                       p.value.size(), lr, cfg_.beta1, cfg_.beta2, cfg_.eps,
                       cfg_.weight_decay, bc1, bc2);
  }
}

void AdamW::reset() {
  t_ = 0;
  for (Tensor& t : m_) t.zero();
  for (Tensor& t : v_) t.zero();
}

double cosine_lr(double base_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  const double frac =
      static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * frac));
}

}  // namespace clasp
