#include "clasp/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clasp/error.hpp"
#include "clasp/kernels.hpp"

namespace clasp {

void MoEConfig::validate() const {
  if (n_experts < 1) throw ConfigError("n_experts must be >= 1");
  if (k_top < 1 || k_top > n_experts)
    throw ConfigError("k_top must satisfy 1 <= k_top <= n_experts");
}

MoEBlock::MoEBlock(nn::ParamStore& store, const std::string& prefix,
                   std::size_t c, const MoEConfig& cfg, Rng& init_rng)
    : c_(c), cfg_(cfg) {
  cfg_.validate();
  const auto N = static_cast<std::size_t>(cfg_.n_experts);
  const double sigma = 0.02;

  w_c_ = &store.create(prefix + ".gate.Wc", {c, c});
  w_g_ = &store.create(prefix + ".gate.Wg", {c, N});
  w_noise_ = &store.create(prefix + ".gate.Wnoise", {c, N});
  nn::gaussian_init(w_c_->value, init_rng, sigma);
  nn::gaussian_init(w_g_->value, init_rng, sigma);
  nn::gaussian_init(w_noise_->value, init_rng, sigma);

  experts_.resize(N);
  for (std::size_t j = 0; j < N; ++j) {
    const std::string ep = prefix + ".expert" + std::to_string(j);
    experts_[j].w1 = &store.create(ep + ".W1", {c, c});
    experts_[j].b1 = &store.create(ep + ".b1", {c});
    experts_[j].w2 = &store.create(ep + ".W2", {c, c});
    experts_[j].b2 = &store.create(ep + ".b2", {c});
    nn::gaussian_init(experts_[j].w1->value, init_rng, sigma);
    nn::gaussian_init(experts_[j].w2->value, init_rng, sigma);
  }

  // Zero-initialized residual map: training starts at the pure MoE output.
  fc_w_ = &store.create(prefix + ".fc.W", {c, c});
  fc_b_ = &store.create(prefix + ".fc.b", {c});
}

Tensor MoEBlock::expert_forward(int j, const Tensor& z, Tensor* h_pre,
                                Tensor* h_act) const {
  const std::size_t n = z.dim(0), c = c_;
  const Expert& ex = experts_[static_cast<std::size_t>(j)];
  Tensor pre({n, c});
  kern::gemm_nn(n, c, c, z.ptr(), ex.w1->value.ptr(), pre.ptr(), false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) pre.at(i, k) += ex.b1->value.at(k);
  Tensor act({n, c});
  for (std::size_t i = 0; i < pre.size(); ++i)
    act.at(i) = nn::gelu(pre.at(i));
  Tensor out({n, c});
  kern::gemm_nn(n, c, c, act.ptr(), ex.w2->value.ptr(), out.ptr(), false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) out.at(i, k) += ex.b2->value.at(k);
  if (h_pre) *h_pre = std::move(pre);
  if (h_act) *h_act = std::move(act);
  return out;
}

Tensor MoEBlock::forward(const Tensor& x, const double* prompt, bool training,
                         Rng& rng, MoECache& cache) const {
  if (x.shape.size() != 2 || x.dim(1) != c_)
    throw ConfigError("MoEBlock::forward: expected [n, c] input");
  const std::size_t n = x.dim(0), c = c_;
  const auto N = static_cast<std::size_t>(cfg_.n_experts);

  cache = MoECache{};
  cache.x = x;
  cache.prompt.assign(prompt, prompt + c);
  cache.x_gate = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) cache.x_gate.at(i, k) += prompt[k];

  // Channel gate: per-token softmax over channels of x_gate · Wc.
  cache.chan.resize({n, c});
  kern::gemm_nn(n, c, c, cache.x_gate.ptr(), w_c_->value.ptr(),
                cache.chan.ptr(), false);
  for (std::size_t i = 0; i < n; ++i)
    nn::softmax_row(cache.chan.ptr() + i * c, c);
  for (std::size_t i = 0; i < cache.chan.size(); ++i)
    if (!std::isfinite(cache.chan.at(i)))
      throw Error("channel gate produced non-finite weights");

  cache.z.resize({n, c});
  kern::vmul(x.ptr(), cache.chan.ptr(), cache.z.ptr(), n * c);

  // Global gate: mean-pool x_gate, softmax expert logits, optional noise,
  // then keep the k_top largest entries (ties broken toward lower index).
  cache.xbar.assign(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) cache.xbar[k] += cache.x_gate.at(i, k);
  for (std::size_t k = 0; k < c; ++k) cache.xbar[k] /= static_cast<double>(n);

  cache.probs_soft.assign(N, 0.0);
  for (std::size_t j = 0; j < N; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k)
      s += cache.xbar[k] * w_g_->value.at(k, j);
    cache.probs_soft[j] = s;
  }
  nn::softmax_row(cache.probs_soft.data(), N);

  cache.probs = cache.probs_soft;
  cache.noisy = training && cfg_.noise_enabled;
  if (cache.noisy) {
    cache.noise_draw.resize(N);
    cache.sp_noise.resize(N);
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k)
        s += cache.xbar[k] * w_noise_->value.at(k, j);
      cache.sp_noise[j] = nn::softplus(s);
      cache.noise_draw[j] = rng.normal();
      cache.probs[j] += cache.noise_draw[j] * cache.sp_noise[j];
    }
  }

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return cache.probs[a] > cache.probs[b];
                   });
  cache.rec.gate.assign(N, 0.0);
  cache.rec.selected.clear();
  for (int j = 0; j < cfg_.k_top; ++j) {
    const std::size_t idx = order[static_cast<std::size_t>(j)];
    cache.rec.gate[idx] = cache.probs[idx];
    cache.rec.selected.push_back(static_cast<int>(idx));
  }
  std::sort(cache.rec.selected.begin(), cache.rec.selected.end());
  if (cfg_.renormalize_after_topk) {
    double s = 0.0;
    for (const int j : cache.rec.selected)
      s += cache.rec.gate[static_cast<std::size_t>(j)];
    if (s != 0.0)
      for (const int j : cache.rec.selected)
        cache.rec.gate[static_cast<std::size_t>(j)] /= s;
  }

  // Combine the kept experts; the others are never evaluated.
  Tensor y({n, c});
  const std::size_t kept = cache.rec.selected.size();
  cache.h_pre.resize(kept);
  cache.h_act.resize(kept);
  cache.e_out.resize(kept);
  for (std::size_t s = 0; s < kept; ++s) {
    const int j = cache.rec.selected[s];
    cache.e_out[s] =
        expert_forward(j, cache.z, &cache.h_pre[s], &cache.h_act[s]);
    kern::axpy(cache.rec.gate[static_cast<std::size_t>(j)],
               cache.e_out[s].ptr(), y.ptr(), n * c);
  }

  // Prompt residual, broadcast to every token.
  std::vector<double> res(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double s = fc_b_->value.at(k);
    for (std::size_t i = 0; i < c; ++i)
      s += prompt[i] * fc_w_->value.at(i, k);
    res[k] = s;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) y.at(i, k) += res[k];

  cache.valid = true;
  return y;
}

Tensor MoEBlock::forward_dense(const Tensor& x, const double* prompt,
                               const GateRecord& rec) const {
  const std::size_t n = x.dim(0), c = c_;
  const auto N = static_cast<std::size_t>(cfg_.n_experts);

  Tensor x_gate = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) x_gate.at(i, k) += prompt[k];
  Tensor chan({n, c});
  kern::gemm_nn(n, c, c, x_gate.ptr(), w_c_->value.ptr(), chan.ptr(), false);
  for (std::size_t i = 0; i < n; ++i) nn::softmax_row(chan.ptr() + i * c, c);
  Tensor z({n, c});
  kern::vmul(x.ptr(), chan.ptr(), z.ptr(), n * c);

  Tensor y({n, c});
  for (std::size_t j = 0; j < N; ++j) {
    Tensor out = expert_forward(static_cast<int>(j), z, nullptr, nullptr);
    kern::axpy(rec.gate[j], out.ptr(), y.ptr(), n * c);
  }
  for (std::size_t k = 0; k < c; ++k) {
    double s = fc_b_->value.at(k);
    for (std::size_t i = 0; i < c; ++i)
      s += prompt[i] * fc_w_->value.at(i, k);
    for (std::size_t i = 0; i < n; ++i) y.at(i, k) += s;
  }
  return y;
}

Tensor MoEBlock::backward(const MoECache& cache, const Tensor& dy,
                          const double* dg_direct, double* dprompt) const {
  if (!cache.valid)
    throw Error("MoEBlock::backward called without a forward record");
  const std::size_t n = cache.x.dim(0), c = c_;
  const auto N = static_cast<std::size_t>(cfg_.n_experts);
  dy.require_shape({n, c}, "MoEBlock::backward upstream gradient");

  // Residual map: y += prompt · fcW + fcb, broadcast over tokens.
  std::vector<double> dres(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) dres[k] += dy.at(i, k);
  for (std::size_t k = 0; k < c; ++k) {
    fc_b_->grad.at(k) += dres[k];
    for (std::size_t i = 0; i < c; ++i)
      fc_w_->grad.at(i, k) += cache.prompt[i] * dres[k];
  }
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += fc_w_->value.at(i, k) * dres[k];
    dprompt[i] += s;
  }

  // Experts: chain rule through the kept set only.
  std::vector<double> dgate(N, 0.0);
  Tensor dz({n, c});
  const std::size_t kept = cache.rec.selected.size();
  for (std::size_t s = 0; s < kept; ++s) {
    const auto j = static_cast<std::size_t>(cache.rec.selected[s]);
    const Expert& ex = experts_[j];
    dgate[j] = kern::dot(cache.e_out[s].ptr(), dy.ptr(), n * c);

    const double gj = cache.rec.gate[j];
    Tensor dout({n, c});
    for (std::size_t i = 0; i < n * c; ++i) dout.at(i) = gj * dy.at(i);

    kern::gemm_tn(c, n, c, cache.h_act[s].ptr(), dout.ptr(), ex.w2->grad.ptr(),
                  true);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k)
        ex.b2->grad.at(k) += dout.at(i, k);
    Tensor dh({n, c});
    kern::gemm_nt(n, c, c, dout.ptr(), ex.w2->value.ptr(), dh.ptr(), false);
    for (std::size_t i = 0; i < n * c; ++i)
      dh.at(i) *= nn::gelu_grad(cache.h_pre[s].at(i));
    kern::gemm_tn(c, n, c, cache.z.ptr(), dh.ptr(), ex.w1->grad.ptr(), true);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k)
        ex.b1->grad.at(k) += dh.at(i, k);
    kern::gemm_nt(n, c, c, dh.ptr(), ex.w1->value.ptr(), dz.ptr(), true);
  }

  // Straight-through top-k: gradient reaches only the kept entries.
  std::vector<double> dprobs(N, 0.0);
  if (cfg_.renormalize_after_topk) {
    double s = 0.0;
    for (const int j : cache.rec.selected)
      s += cache.probs[static_cast<std::size_t>(j)];
    double inner = 0.0;
    for (const int j : cache.rec.selected) {
      const auto u = static_cast<std::size_t>(j);
      const double dg = dgate[u] + (dg_direct ? dg_direct[u] : 0.0);
      inner += dg * cache.rec.gate[u];
    }
    for (const int j : cache.rec.selected) {
      const auto u = static_cast<std::size_t>(j);
      const double dg = dgate[u] + (dg_direct ? dg_direct[u] : 0.0);
      dprobs[u] = s != 0.0 ? (dg - inner) / s : 0.0;
    }
  } else {
    for (const int j : cache.rec.selected) {
      const auto u = static_cast<std::size_t>(j);
      dprobs[u] = dgate[u] + (dg_direct ? dg_direct[u] : 0.0);
    }
  }

  std::vector<double> dxbar(c, 0.0);
  if (cache.noisy) {
    for (std::size_t j = 0; j < N; ++j) {
      const double dsp = dprobs[j] * cache.noise_draw[j];
      const double dnl = dsp * (-std::expm1(-cache.sp_noise[j]));
      for (std::size_t k = 0; k < c; ++k) {
        w_noise_->grad.at(k, j) += cache.xbar[k] * dnl;
        dxbar[k] += w_noise_->value.at(k, j) * dnl;
      }
    }
  }

  // Softmax over expert logits.
  double dot_dp = 0.0;
  for (std::size_t j = 0; j < N; ++j) dot_dp += dprobs[j] * cache.probs_soft[j];
  for (std::size_t j = 0; j < N; ++j) {
    const double dlogit = cache.probs_soft[j] * (dprobs[j] - dot_dp);
    for (std::size_t k = 0; k < c; ++k) {
      w_g_->grad.at(k, j) += cache.xbar[k] * dlogit;
      dxbar[k] += w_g_->value.at(k, j) * dlogit;
    }
  }

  Tensor dx_gate({n, c});
  const double invn = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) dx_gate.at(i, k) = dxbar[k] * invn;

  // Channel gate: dz ⊙ x → softmax rows → Wc and x_gate.
  Tensor dchan({n, c});
  kern::vmul(dz.ptr(), cache.x.ptr(), dchan.ptr(), n * c);
  Tensor dlogits({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = cache.chan.ptr() + i * c;
    const double* da = dchan.ptr() + i * c;
    double inner = kern::dot(a, da, c);
    double* dl = dlogits.ptr() + i * c;
    for (std::size_t k = 0; k < c; ++k) dl[k] = a[k] * (da[k] - inner);
  }
  kern::gemm_tn(c, n, c, cache.x_gate.ptr(), dlogits.ptr(), w_c_->grad.ptr(),
                true);
  kern::gemm_nt(n, c, c, dlogits.ptr(), w_c_->value.ptr(), dx_gate.ptr(),
                true);

  // Assemble input and prompt gradients.
  Tensor dx({n, c});
  kern::vmul(dz.ptr(), cache.chan.ptr(), dx.ptr(), n * c);
  kern::axpy(1.0, dx_gate.ptr(), dx.ptr(), n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) dprompt[k] += dx_gate.at(i, k);
  return dx;
}

}  // namespace clasp
