#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clasp/moe.hpp"

namespace clasp {

// Per-task, per-shared-layer flattened gradients. tasks[i] names row i of
// every layer's gradient list.
struct GradientTrace {
  std::vector<std::string> tasks;
  struct Layer {
    std::string name;
    std::vector<std::vector<double>> grads;  // [task][flat values]
  };
  std::vector<Layer> layers;

  void validate() const;
};

// Normalized expert-activation mass for one task.
struct ExpertActivationProfile {
  std::string task;
  std::vector<double> p;  // length N, sums to 1
};

// Zero vectors are defined to have cosine 0 against anything.
double gradient_cosine(const std::vector<double>& a,
                       const std::vector<double>& b);

// Fraction of (layer, ordered task pair) combinations whose gradient cosine
// is strictly negative. Requires at least two tasks.
double conflict_ratio(const GradientTrace& trace);

// p_e = Σ_records gate_e / Σ_records Σ_e gate_e; if every gate mass is zero,
// falls back to normalized selection counts.
ExpertActivationProfile build_activation_profile(
    const std::vector<GateRecord>& records, int n_experts,
    const std::string& task);

// 1 - (1/N) Σ_e min(p_i[e], p_j[e]), exactly as written: two identical
// uniform profiles score 1 - 1/N, not 0.
double expert_activation_divergence(const ExpertActivationProfile& pi,
                                    const ExpertActivationProfile& pj);

// 2ab/(a+b); both inputs must be positive.
double harmonic_mean(double a, double b);

// Trace file round-trip (JSON; floats carry 17 significant digits). The
// file may also hold per-task activation profiles.
struct DiagnosticsTrace {
  GradientTrace gradients;
  std::vector<ExpertActivationProfile> profiles;  // optional
};

void save_trace(const DiagnosticsTrace& trace, const std::string& path);
DiagnosticsTrace load_trace(const std::string& path);

// Full report: conflict ratio plus the pairwise divergence matrix.
std::string diagnostics_report_json(const DiagnosticsTrace& trace);

}  // namespace clasp
