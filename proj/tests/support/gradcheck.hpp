#pragma once

// Central-difference gradient checking. The loss closure is re-evaluated at
// x ± h per coordinate; analytic gradients must match to a relative error
// everything else in the suite treats as exact at f64: |a - n| over
// max(1, |a|, |n|).

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "clasp/tensor.hpp"

namespace gradcheck {

inline double rel_err(double analytic, double numeric) {
  const double scale =
      std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / scale;
}

struct Report {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<name>[i]" of the worst coordinate
};

// Checks d loss / d value[i] for every i (or a strided subsample when
// stride > 1) against `analytic`. `loss` must recompute the full forward
// from current tensor contents.
inline void check_tensor(const std::function<double()>& loss,
                         clasp::Tensor& value, const clasp::Tensor& analytic,
                         const std::string& name, Report& rep, double h = 1e-5,
                         std::size_t stride = 1) {
  for (std::size_t i = 0; i < value.size(); i += stride) {
    const double keep = value.at(i);
    value.at(i) = keep + h;
    const double up = loss();
    value.at(i) = keep - h;
    const double dn = loss();
    value.at(i) = keep;
    const double numeric = (up - dn) / (2.0 * h);
    const double e = rel_err(analytic.at(i), numeric);
    if (e > rep.max_rel_err) {
      rep.max_rel_err = e;
      rep.worst = name + "[" + std::to_string(i) + "]";
    }
    ++rep.checked;
  }
}

// Plain-vector overload for loss modules whose gradients are std::vectors.
inline void check_vector(const std::function<double()>& loss,
                         std::vector<double>& value,
                         const std::vector<double>& analytic,
                         const std::string& name, Report& rep,
                         double h = 1e-5, std::size_t stride = 1) {
  for (std::size_t i = 0; i < value.size(); i += stride) {
    const double keep = value[i];
    value[i] = keep + h;
    const double up = loss();
    value[i] = keep - h;
    const double dn = loss();
    value[i] = keep;
    const double numeric = (up - dn) / (2.0 * h);
    const double e = rel_err(analytic[i], numeric);
    if (e > rep.max_rel_err) {
      rep.max_rel_err = e;
      rep.worst = name + "[" + std::to_string(i) + "]";
    }
    ++rep.checked;
  }
}

}  // namespace gradcheck
