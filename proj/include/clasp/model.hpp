#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clasp/image.hpp"
#include "clasp/moe.hpp"
#include "clasp/nn.hpp"
#include "clasp/rng.hpp"
#include "clasp/tensor.hpp"

namespace clasp {

struct StageSpec {
  std::size_t c = 0, h = 0, w = 0;  // channels and token grid
};

struct ModelConfig {
  std::size_t image_h = 32, image_w = 16;
  std::size_t patch = 4;  // stage-0 square patch edge
  std::vector<StageSpec> stages = {{8, 8, 4}, {16, 4, 2}};
  MoEConfig moe;
  std::size_t n_tasks = 3;  // 0 = appearance, 1 = part, 2 = attribute
  std::size_t dino_hidden = 256;
  std::size_t dino_proto = 256;
  std::size_t n_part_classes = 8;  // part vocabulary + background
  std::size_t n_attr_logits = 7;   // sum of per-attribute value counts

  void validate() const;
  std::size_t final_tokens() const { return stages.back().h * stages.back().w; }
  std::size_t final_channels() const { return stages.back().c; }
};

struct StageCache {
  Tensor input;  // [n_in, in_dim]
  Tensor t_pre;  // embed pre-activation [n, c]
  Tensor a;      // gelu(t_pre) [n, c]
  Tensor m;      // mixed tokens, block input [n, c]
  MoECache moe;
};

// One per-sample, per-task forward trace through all stages.
struct BackboneCache {
  int task = 0;
  std::vector<StageCache> stages;
  Tensor final_tokens;  // last stage output [n_last, c_last]
};

struct MlpCache {
  std::vector<double> in;
  std::vector<double> h1_pre, h1, h2_pre, h2, h2n, out;
  double h2_norm = 1.0;
};

// Student/teacher network: patch embedding, per-stage token mixing and
// mixture-of-experts blocks conditioned on per-(stage, task) prompt vectors,
// plus the three task heads. Teacher instances are built identically and
// tracked by exponential moving average; they share this type.
class Model {
 public:
  Model(const ModelConfig& cfg, unsigned long long init_seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

  BackboneCache forward_backbone(const ImageRGB& img, int task, bool training,
                                 Rng& noise_rng) const;
  // dg_direct: optional per-stage gate gradients (length n_experts each).
  void backward_backbone(const BackboneCache& cache, const Tensor& dfinal,
                         const std::vector<std::vector<double>>* dg_direct);

  // Mean over tokens of the final stage map; gradient is the broadcast.
  static std::vector<double> gap(const Tensor& tokens);
  static Tensor gap_backward(const std::vector<double>& dgap, std::size_t n);

  // Projection head: 3-layer perceptron c -> hidden -> hidden -> proto. The
  // prototype layer reads the L2-normalized bottleneck, so its output scale
  // is independent of the backbone's magnitude — without this the softmax
  // targets degenerate toward uniform and distillation stalls.
  std::vector<double> dino_head_forward(const std::vector<double>& gap_vec,
                                        MlpCache& cache) const;
  // Returns d(gap); accumulates head parameter grads.
  std::vector<double> dino_head_backward(const MlpCache& cache,
                                         const std::vector<double>& dout);

  // Token-wise linear part head: [n, c] -> [n, n_part_classes].
  Tensor part_head_forward(const Tensor& tokens) const;
  Tensor part_head_backward(const Tensor& tokens, const Tensor& dlogits);

  // Linear attribute head on the pooled vector.
  std::vector<double> attr_head_forward(const std::vector<double>& gap_vec) const;
  std::vector<double> attr_head_backward(const std::vector<double>& gap_vec,
                                         const std::vector<double>& dlogits);

  const Tensor& prompt(std::size_t stage, std::size_t task) const;

  // Trainable tensors shared across tasks: backbone and MoE parameters,
  // excluding heads and prompt vectors.
  static bool is_shared_layer(const std::string& name);

 private:
  Tensor extract_patches(const ImageRGB& img) const;
  Tensor merge_tokens(const Tensor& prev, std::size_t h_prev,
                      std::size_t w_prev) const;
  Tensor merge_tokens_backward(const Tensor& dmerged, std::size_t h_prev,
                               std::size_t w_prev, std::size_t c_prev) const;

  struct Stage {
    StageSpec spec;
    std::size_t in_dim = 0;
    nn::Param* embed_w = nullptr;  // [in_dim, c]
    nn::Param* embed_b = nullptr;  // [c]
    nn::Param* mix_w = nullptr;    // [n, n]
    MoEBlock* moe = nullptr;
  };

  ModelConfig cfg_;
  nn::ParamStore store_;
  std::vector<Stage> stages_;
  std::vector<std::unique_ptr<MoEBlock>> moe_blocks_;
  std::vector<std::vector<nn::Param*>> prompts_;  // [stage][task]
  nn::Param* dino_w1_ = nullptr;
  nn::Param* dino_b1_ = nullptr;
  nn::Param* dino_w2_ = nullptr;
  nn::Param* dino_b2_ = nullptr;
  nn::Param* dino_w3_ = nullptr;
  nn::Param* dino_b3_ = nullptr;
  nn::Param* part_w_ = nullptr;
  nn::Param* part_b_ = nullptr;
  nn::Param* attr_w_ = nullptr;
  nn::Param* attr_b_ = nullptr;
};

// theta_t <- m * theta_t + (1 - m) * theta_s over every tensor, bitwise
// per the literal expression. Stores must be isomorphic.
void ema_update(Model& teacher, const Model& student, double m);

}  // namespace clasp
