#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clasp/nn.hpp"
#include "clasp/rng.hpp"
#include "clasp/tensor.hpp"

namespace clasp {

struct MoEConfig {
  int n_experts = 10;
  int k_top = 6;
  bool noise_enabled = true;        // training-time gate noise; eval is always clean
  bool renormalize_after_topk = false;  // rescale kept gate entries to sum 1

  void validate() const;
};

// Per-sample global gate after top-k sparsification.
struct GateRecord {
  std::vector<double> gate;      // length N; zero outside the kept set
  std::vector<int> selected;     // kept expert indices, ascending
};

// Everything the backward pass needs from one forward call.
struct MoECache {
  bool valid = false;
  bool noisy = false;            // noise was drawn in this forward
  Tensor x;                      // input tokens [n, c]
  Tensor x_gate;                 // x with prompt added [n, c]
  std::vector<double> prompt;    // the task vector used [c]
  Tensor chan;                   // channel gate, softmax rows [n, c]
  Tensor z;                      // x ⊙ chan [n, c]
  std::vector<double> xbar;      // mean-pooled x_gate [c]
  std::vector<double> probs_soft;  // softmax over expert logits [N]
  std::vector<double> noise_draw;  // standard normal draws [N] when noisy
  std::vector<double> sp_noise;    // softplus(noise logits) [N] when noisy
  std::vector<double> probs;       // pre-top-k gate inputs [N]
  GateRecord rec;
  std::vector<Tensor> h_pre;     // per kept expert: pre-activation [n, c]
  std::vector<Tensor> h_act;     // per kept expert: gelu output [n, c]
  std::vector<Tensor> e_out;     // per kept expert: expert output [n, c]
};

// Mixture-of-experts block with a prompt-conditioned channel gate and a
// sparse top-k global gate. One instance per backbone stage; the prompt
// vector itself lives in the model's prompt table and is passed in.
class MoEBlock {
 public:
  MoEBlock(nn::ParamStore& store, const std::string& prefix, std::size_t c,
           const MoEConfig& cfg, Rng& init_rng);

  // x: [n, c] tokens; prompt: length-c task vector. Draws gate noise from
  // rng only when training and cfg.noise_enabled. Returns [n, c].
  Tensor forward(const Tensor& x, const double* prompt, bool training,
                 Rng& rng, MoECache& cache) const;

  // dy: upstream gradient [n, c]. dg_direct (optional, length N) carries
  // loss terms that depend on the gate vector itself; entries for experts
  // outside the kept set are masked, matching the straight-through rule.
  // Accumulates parameter grads, adds the prompt grad into dprompt[0..c),
  // and returns the input gradient [n, c].
  Tensor backward(const MoECache& cache, const Tensor& dy,
                  const double* dg_direct, double* dprompt) const;

  // Test oracle: evaluates every expert and weighs each by rec.gate —
  // zeros included — instead of skipping the unselected ones.
  Tensor forward_dense(const Tensor& x, const double* prompt,
                       const GateRecord& rec) const;

  std::size_t channels() const { return c_; }
  const MoEConfig& config() const { return cfg_; }

 private:
  Tensor expert_forward(int j, const Tensor& z, Tensor* h_pre,
                        Tensor* h_act) const;

  std::size_t c_ = 0;
  MoEConfig cfg_;
  nn::Param* w_c_ = nullptr;      // [c, c]
  nn::Param* w_g_ = nullptr;      // [c, N]
  nn::Param* w_noise_ = nullptr;  // [c, N]
  struct Expert {
    nn::Param* w1;  // [c, c]
    nn::Param* b1;  // [c]
    nn::Param* w2;  // [c, c]
    nn::Param* b2;  // [c]
  };
  std::vector<Expert> experts_;
  nn::Param* fc_w_ = nullptr;  // [c, c]
  nn::Param* fc_b_ = nullptr;  // [c]
};

}  // namespace clasp
