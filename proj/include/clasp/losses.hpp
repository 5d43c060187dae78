#pragma once

#include <cstddef>
#include <vector>

#include "clasp/moe.hpp"
#include "clasp/pseudo_labels.hpp"
#include "clasp/tensor.hpp"

namespace clasp {

struct LossWeights {
  double dino = 0.8;
  double part = 0.6;
  double attribute = 0.6;
  double balancing = 1.0;
};

struct LossBreakdown {
  double dino = 0.0;
  double part = 0.0;
  double attribute = 0.0;
  double balancing = 0.0;
  double total = 0.0;
};

// Centering state for the self-distillation objective. The center tracks
// teacher logits by EMA and is subtracted before the teacher softmax.
struct DinoState {
  std::vector<double> center;
  double tau_s = 0.1;
  double tau_t = 0.04;
  double center_momentum = 0.9;

  explicit DinoState(std::size_t proto = 0) : center(proto, 0.0) {}
};

// Cross-entropy of one directed teacher→student view pair:
// -Σ softmax((t - center)/τ_t) · logsoftmax(s/τ_s). Teacher side is a
// constant. Adds grad_scale · d/d(student_logits) into dstudent.
double dino_pair_loss(const std::vector<double>& teacher_logits,
                      const std::vector<double>& student_logits,
                      const DinoState& state, double grad_scale,
                      std::vector<double>* dstudent);

// Mean over samples of the two cross-view pairs (t1→s2, t2→s1).
// logits[sample][view]; dstudent mirrors student_logits.
double dino_loss_batch(
    const std::vector<std::vector<std::vector<double>>>& teacher_logits,
    const std::vector<std::vector<std::vector<double>>>& student_logits,
    const DinoState& state,
    std::vector<std::vector<std::vector<double>>>* dstudent);

// center <- m · center + (1 - m) · mean of the supplied teacher logits.
void dino_center_update(DinoState& state,
                        const std::vector<const std::vector<double>*>& logits);

// Majority label per token cell; ties go to the smallest label id.
std::vector<int> downsample_labels(const PartLabelMap& map, std::size_t h,
                                   std::size_t w);

// Mean over tokens of softmax cross-entropy against integer labels
// (background is class 0). Adds grad_scale · d/d(logits) into dlogits.
double part_loss(const Tensor& logits, const std::vector<int>& labels,
                 double grad_scale, Tensor* dlogits);

// Mean sigmoid binary cross-entropy over the one-hot slots of the known
// attributes; unknown attributes are skipped and the normalizer shrinks.
// All-unknown contributes 0 with zero gradient.
double attribute_loss(const std::vector<double>& logits,
                      const std::vector<AttributeLabel>& labels,
                      const AttributeSchema& schema, double grad_scale,
                      std::vector<double>* dlogits);

// Var(x) / (Mean(x)^2 + 1e-10), population variance.
double cv2(const double* x, std::size_t n);
// d cv2 / dx_i, same conventions.
void cv2_grad(const double* x, std::size_t n, double scale, double* dx);

// 0.01 · [cv2(importance) + cv2(load)] over one stage's gate records.
// importance_e = Σ_b gate_{b,e}; load_e = Σ_b 1(gate_{b,e} > 0). The load
// term is piecewise constant, so the gradient comes from importance alone
// and is identical for every record; it is written to dgate (length N).
double balancing_loss_stage(const std::vector<GateRecord>& records,
                            int n_experts, double grad_scale,
                            std::vector<double>* dgate);

double balancing_loss_total(const std::vector<double>& per_stage);

// Σ_b gate_{b,e} normalized is not applied here; this is the raw cv2 of the
// stage's importance vector, recorded every step as a routing health metric.
double cv2_importance(const std::vector<GateRecord>& records, int n_experts);

// Weighted combination; throws a numeric error naming the first non-finite
// component.
LossBreakdown total_loss(double dino, double part, double attribute,
                         double balancing, const LossWeights& w);

}  // namespace clasp
