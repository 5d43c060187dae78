#include "clasp/losses.hpp"

#include <cmath>
#include <map>

#include "clasp/error.hpp"
#include "clasp/nn.hpp"

namespace clasp {

double dino_pair_loss(const std::vector<double>& teacher_logits,
                      const std::vector<double>& student_logits,
                      const DinoState& state, double grad_scale,
                      std::vector<double>* dstudent) {
  const std::size_t d = teacher_logits.size();
  if (student_logits.size() != d || state.center.size() != d)
    throw ConfigError("dino loss: prototype dims disagree");

  std::vector<double> t(d);
  for (std::size_t i = 0; i < d; ++i)
    t[i] = (teacher_logits[i] - state.center[i]) / state.tau_t;
  nn::softmax_row(t.data(), d);  // p_t, treated as a constant target

  std::vector<double> s(d), logp(d);
  for (std::size_t i = 0; i < d; ++i) s[i] = student_logits[i] / state.tau_s;
  nn::log_softmax_row(s.data(), logp.data(), d);

  double loss = 0.0;
  for (std::size_t i = 0; i < d; ++i) loss -= t[i] * logp[i];

  if (dstudent) {
    // d loss / d s_logit = (softmax(s/τ_s) - p_t) / τ_s
    std::vector<double>& ds = *dstudent;
    if (ds.size() != d) throw ConfigError("dino loss: gradient buffer size");
    const double inv_tau = 1.0 / state.tau_s;
    for (std::size_t i = 0; i < d; ++i)
      ds[i] += grad_scale * (std::exp(logp[i]) - t[i]) * inv_tau;
  }
  return loss;
}

double dino_loss_batch(
    const std::vector<std::vector<std::vector<double>>>& teacher_logits,
    const std::vector<std::vector<std::vector<double>>>& student_logits,
    const DinoState& state,
    std::vector<std::vector<std::vector<double>>>* dstudent) {
  const std::size_t b = teacher_logits.size();
  if (b == 0 || student_logits.size() != b)
    throw Error("dino loss: empty batch or view shape mismatch");
  for (std::size_t i = 0; i < b; ++i)
    if (teacher_logits[i].size() != 2 || student_logits[i].size() != 2)
      throw Error("dino loss: cross-view pairing requires two views");

  const double scale = 0.5 / static_cast<double>(b);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double>* d1 = dstudent ? &(*dstudent)[i][1] : nullptr;
    std::vector<double>* d0 = dstudent ? &(*dstudent)[i][0] : nullptr;
    loss +=
        dino_pair_loss(teacher_logits[i][0], student_logits[i][1], state, scale, d1);
    loss +=
        dino_pair_loss(teacher_logits[i][1], student_logits[i][0], state, scale, d0);
  }
  return loss * scale;
}

void dino_center_update(DinoState& state,
                        const std::vector<const std::vector<double>*>& logits) {
  if (logits.empty()) throw Error("center update needs at least one sample");
  const std::size_t d = state.center.size();
  std::vector<double> mean(d, 0.0);
  for (const auto* v : logits) {
    if (v->size() != d) throw ConfigError("center update: dim mismatch");
    for (std::size_t i = 0; i < d; ++i) mean[i] += (*v)[i];
  }
  const double inv = 1.0 / static_cast<double>(logits.size());
  const double m = state.center_momentum;
  for (std::size_t i = 0; i < d; ++i)
    state.center[i] = m * state.center[i] + (1.0 - m) * mean[i] * inv;
}

std::vector<int> downsample_labels(const PartLabelMap& map, std::size_t h,
                                   std::size_t w) {
  if (h == 0 || w == 0 || map.h % h != 0 || map.w % w != 0)
    throw ConfigError("label downsample: token grid must tile the map");
  const std::size_t cell_h = map.h / h, cell_w = map.w / w;
  std::vector<int> out(h * w, 0);
  for (std::size_t ty = 0; ty < h; ++ty)
    for (std::size_t tx = 0; tx < w; ++tx) {
      std::map<int, int> freq;
      for (std::size_t py = 0; py < cell_h; ++py)
        for (std::size_t px = 0; px < cell_w; ++px)
          ++freq[map.at(ty * cell_h + py, tx * cell_w + px)];
      int best = 0, best_count = -1;
      for (const auto& [label, count] : freq)
        if (count > best_count) best = label, best_count = count;
      out[ty * w + tx] = best;
    }
  return out;
}

double part_loss(const Tensor& logits, const std::vector<int>& labels,
                 double grad_scale, Tensor* dlogits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw ConfigError("part loss: one label per token required");
  double loss = 0.0;
  std::vector<double> logp(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw ConfigError("part loss: label id exceeds head output dim");
    nn::log_softmax_row(logits.ptr() + i * k, logp.data(), k);
    loss -= logp[static_cast<std::size_t>(y)];
    if (dlogits) {
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(logp[j]);
        const double target = (static_cast<std::size_t>(y) == j) ? 1.0 : 0.0;
        dlogits->at(i, j) +=
            grad_scale * (p - target) / static_cast<double>(n);
      }
    }
  }
  return loss / static_cast<double>(n);
}

double attribute_loss(const std::vector<double>& logits,
                      const std::vector<AttributeLabel>& labels,
                      const AttributeSchema& schema, double grad_scale,
                      std::vector<double>* dlogits) {
  if (labels.size() != schema.attributes.size())
    throw ConfigError("attribute loss: one label per schema attribute");
  std::size_t total = 0;
  for (const AttributeSchema::Attribute& a : schema.attributes)
    total += a.values.size();
  if (logits.size() != total)
    throw ConfigError("attribute loss: head width must match the schema");

  std::size_t norm = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i].known) norm += schema.attributes[i].values.size();
  if (norm == 0) return 0.0;

  double loss = 0.0;
  std::size_t off = 0;
  const double inv = 1.0 / static_cast<double>(norm);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t k = schema.attributes[i].values.size();
    if (labels[i].known) {
      if (labels[i].onehot.size() != k)
        throw ConfigError("attribute loss: one-hot width mismatch");
      for (std::size_t j = 0; j < k; ++j) {
        const double l = logits[off + j];
        const double y = labels[i].onehot[j];
        // -(y ln σ(l) + (1-y) ln(1-σ(l))) in the stable logits form.
        loss += y * nn::softplus(-l) + (1.0 - y) * nn::softplus(l);
        if (dlogits)
          (*dlogits)[off + j] += grad_scale * (nn::sigmoid(l) - y) * inv;
      }
    }
    off += k;
  }
  return loss * inv;
}

double cv2(const double* x, std::size_t n) {
  if (n == 0) throw Error("cv2 of an empty vector");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  return var / (mean * mean + 1e-10);
}

void cv2_grad(const double* x, std::size_t n, double scale, double* dx) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double denom = mean * mean + 1e-10;
  // d/dx_i [var/denom] with dVar/dx_i = 2(x_i - mean)/n, dMean/dx_i = 1/n.
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dvar = 2.0 * (x[i] - mean) * inv_n;
    dx[i] += scale * (dvar * denom - var * 2.0 * mean * inv_n) / (denom * denom);
  }
}

double balancing_loss_stage(const std::vector<GateRecord>& records,
                            int n_experts, double grad_scale,
                            std::vector<double>* dgate) {
  if (records.empty())
    throw Error("balancing loss needs at least one gate record");
  const auto N = static_cast<std::size_t>(n_experts);
  std::vector<double> importance(N, 0.0), load(N, 0.0);
  for (const GateRecord& r : records) {
    if (r.gate.size() != N)
      throw ConfigError("balancing loss: record width != expert count");
    for (std::size_t e = 0; e < N; ++e) {
      importance[e] += r.gate[e];
      if (r.gate[e] > 0.0) load[e] += 1.0;
    }
  }
  const double alpha = 0.01;
  const double loss = alpha * (cv2(importance.data(), N) + cv2(load.data(), N));
  if (dgate) {
    // The load indicator is flat almost everywhere; only the importance term
    // moves. d importance_e / d gate_{b,e} = 1 for every record b.
    dgate->assign(N, 0.0);
    cv2_grad(importance.data(), N, grad_scale * alpha, dgate->data());
  }
  return loss;
}

double balancing_loss_total(const std::vector<double>& per_stage) {
  double s = 0.0;
  for (const double v : per_stage) s += v;
  return s;
}

double cv2_importance(const std::vector<GateRecord>& records, int n_experts) {
  if (records.empty()) return 0.0;
  const auto N = static_cast<std::size_t>(n_experts);
  std::vector<double> importance(N, 0.0);
  for (const GateRecord& r : records)
    for (std::size_t e = 0; e < N; ++e) importance[e] += r.gate[e];
  return cv2(importance.data(), N);
}

LossBreakdown total_loss(double dino, double part, double attribute,
                         double balancing, const LossWeights& w) {
  const char* names[4] = {"dino", "part", "attribute", "balancing"};
  const double vals[4] = {dino, part, attribute, balancing};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(vals[i]))
      throw Error(std::string("non-finite loss component: ") + names[i]);
  LossBreakdown out;
  out.dino = dino;
  out.part = part;
  out.attribute = attribute;
  out.balancing = balancing;
  out.total = w.dino * dino + w.part * part + w.attribute * attribute +
              w.balancing * balancing;
  return out;
}

}  // namespace clasp
