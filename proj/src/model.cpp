#include "clasp/model.hpp"

#include <cmath>

#include "clasp/error.hpp"
#include "clasp/kernels.hpp"

namespace clasp {

void ModelConfig::validate() const {
  if (stages.empty()) throw ConfigError("model needs at least one stage");
  if (patch == 0 || image_h != stages[0].h * patch ||
      image_w != stages[0].w * patch)
    throw ConfigError("stage-0 grid must tile the image with the patch size");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (stages[i].h * 2 != stages[i - 1].h || stages[i].w * 2 != stages[i - 1].w)
      throw ConfigError("each stage must halve the previous token grid");
  }
  for (const StageSpec& s : stages)
    if (s.c == 0 || s.h == 0 || s.w == 0)
      throw ConfigError("stage dims must be positive");
  if (n_tasks == 0) throw ConfigError("n_tasks must be positive");
  moe.validate();
}

namespace {

// Variance-preserving linear init; biases stay zero.
void xavier_init(Tensor& t, Rng& rng, std::size_t fan_in) {
  nn::gaussian_init(t, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

Model::Model(const ModelConfig& cfg, unsigned long long init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);

  std::size_t in_dim = cfg_.patch * cfg_.patch * 3;
  prompts_.resize(cfg_.stages.size());
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
    const StageSpec& spec = cfg_.stages[s];
    const std::size_t n = spec.h * spec.w;
    const std::string sp = "stage" + std::to_string(s);
    Stage st;
    st.spec = spec;
    st.in_dim = in_dim;
    st.embed_w = &store_.create(sp + ".embed.W", {in_dim, spec.c});
    st.embed_b = &store_.create(sp + ".embed.b", {spec.c});
    st.mix_w = &store_.create(sp + ".mix.W", {n, n});
    // Embeddings run 2x hotter than variance-preserving: the activation then
    // works in its curved region, which is what lets depth pull different
    // samples apart instead of averaging them together.
    nn::gaussian_init(st.embed_w->value, rng,
                      2.0 / std::sqrt(static_cast<double>(in_dim)));
    xavier_init(st.mix_w->value, rng, n);

    moe_blocks_.push_back(
        std::make_unique<MoEBlock>(store_, sp + ".moe", spec.c, cfg_.moe, rng));
    st.moe = moe_blocks_.back().get();

    prompts_[s].resize(cfg_.n_tasks);
    for (std::size_t k = 0; k < cfg_.n_tasks; ++k) {
      nn::Param& p =
          store_.create(sp + ".prompt.task" + std::to_string(k), {spec.c});
      nn::gaussian_init(p.value, rng, 0.02);
      prompts_[s][k] = &p;
    }
    stages_.push_back(st);
    in_dim = 4 * spec.c;  // 2x2 token merge feeds the next stage
  }

  const std::size_t c_last = cfg_.final_channels();
  dino_w1_ = &store_.create("head.dino.l1.W", {c_last, cfg_.dino_hidden});
  dino_b1_ = &store_.create("head.dino.l1.b", {cfg_.dino_hidden});
  dino_w2_ = &store_.create("head.dino.l2.W", {cfg_.dino_hidden, cfg_.dino_hidden});
  dino_b2_ = &store_.create("head.dino.l2.b", {cfg_.dino_hidden});
  dino_w3_ = &store_.create("head.dino.l3.W", {cfg_.dino_hidden, cfg_.dino_proto});
  dino_b3_ = &store_.create("head.dino.l3.b", {cfg_.dino_proto});
  xavier_init(dino_w1_->value, rng, c_last);
  xavier_init(dino_w2_->value, rng, cfg_.dino_hidden);
  xavier_init(dino_w3_->value, rng, cfg_.dino_hidden);
  // Prototype vectors (columns of l3.W) start at unit norm, the
  // weight-normalized form of the reference distillation head. Against the
  // unit-length bottleneck this puts logit spread on the order of the
  // teacher temperature; fan-in-scaled columns leave the softmax targets
  // near-uniform and the distillation loss without a usable signal.
  for (std::size_t j = 0; j < cfg_.dino_proto; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < cfg_.dino_hidden; ++i) {
      const double v = dino_w3_->value.at(i, j);
      ss += v * v;
    }
    const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
    for (std::size_t i = 0; i < cfg_.dino_hidden; ++i)
      dino_w3_->value.at(i, j) *= inv;
  }

  part_w_ = &store_.create("head.part.W", {c_last, cfg_.n_part_classes});
  part_b_ = &store_.create("head.part.b", {cfg_.n_part_classes});
  xavier_init(part_w_->value, rng, c_last);

  attr_w_ = &store_.create("head.attr.W", {c_last, cfg_.n_attr_logits});
  attr_b_ = &store_.create("head.attr.b", {cfg_.n_attr_logits});
  xavier_init(attr_w_->value, rng, c_last);
}

Tensor Model::extract_patches(const ImageRGB& img) const {
  if (img.h != cfg_.image_h || img.w != cfg_.image_w)
    throw ConfigError("image dims do not match the model config");
  const StageSpec& s0 = cfg_.stages[0];
  const std::size_t p = cfg_.patch;
  Tensor out({s0.h * s0.w, p * p * 3});
  for (std::size_t ty = 0; ty < s0.h; ++ty)
    for (std::size_t tx = 0; tx < s0.w; ++tx) {
      double* row = out.ptr() + (ty * s0.w + tx) * out.dim(1);
      std::size_t i = 0;
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px) {
          const double* rgb = img.at(ty * p + py, tx * p + px);
          // Center to [-1, 1]: color contrast, not brightness, is what
          // separates samples here.
          for (std::size_t ch = 0; ch < 3; ++ch)
            row[i++] = 2.0 * rgb[ch] - 1.0;
        }
    }
  return out;
}

Tensor Model::merge_tokens(const Tensor& prev, std::size_t h_prev,
                           std::size_t w_prev) const {
  const std::size_t c = prev.dim(1);
  const std::size_t h = h_prev / 2, w = w_prev / 2;
  Tensor out({h * w, 4 * c});
  for (std::size_t ty = 0; ty < h; ++ty)
    for (std::size_t tx = 0; tx < w; ++tx) {
      double* row = out.ptr() + (ty * w + tx) * 4 * c;
      const std::size_t src[4] = {
          (2 * ty) * w_prev + 2 * tx, (2 * ty) * w_prev + 2 * tx + 1,
          (2 * ty + 1) * w_prev + 2 * tx, (2 * ty + 1) * w_prev + 2 * tx + 1};
      for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t k = 0; k < c; ++k) row[q * c + k] = prev.at(src[q], k);
    }
  return out;
}

Tensor Model::merge_tokens_backward(const Tensor& dmerged, std::size_t h_prev,
                                    std::size_t w_prev,
                                    std::size_t c_prev) const {
  const std::size_t h = h_prev / 2, w = w_prev / 2;
  Tensor dprev({h_prev * w_prev, c_prev});
  for (std::size_t ty = 0; ty < h; ++ty)
    for (std::size_t tx = 0; tx < w; ++tx) {
      const double* row = dmerged.ptr() + (ty * w + tx) * 4 * c_prev;
      const std::size_t dst[4] = {
          (2 * ty) * w_prev + 2 * tx, (2 * ty) * w_prev + 2 * tx + 1,
          (2 * ty + 1) * w_prev + 2 * tx, (2 * ty + 1) * w_prev + 2 * tx + 1};
      for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t k = 0; k < c_prev; ++k)
          dprev.at(dst[q], k) += row[q * c_prev + k];
    }
  return dprev;
}

BackboneCache Model::forward_backbone(const ImageRGB& img, int task,
                                      bool training, Rng& noise_rng) const {
  if (task < 0 || static_cast<std::size_t>(task) >= cfg_.n_tasks)
    throw ConfigError("task index out of range");
  BackboneCache cache;
  cache.task = task;
  cache.stages.resize(stages_.size());

  Tensor cur = extract_patches(img);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& st = stages_[s];
    StageCache& sc = cache.stages[s];
    const std::size_t n = st.spec.h * st.spec.w, c = st.spec.c;
    sc.input = std::move(cur);

    sc.t_pre.resize({n, c});
    kern::gemm_nn(n, st.in_dim, c, sc.input.ptr(), st.embed_w->value.ptr(),
                  sc.t_pre.ptr(), false);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k)
        sc.t_pre.at(i, k) += st.embed_b->value.at(k);

    sc.a.resize({n, c});
    for (std::size_t i = 0; i < n * c; ++i)
      sc.a.at(i) = nn::gelu(sc.t_pre.at(i));

    sc.m = sc.a;
    kern::gemm_nn(n, n, c, st.mix_w->value.ptr(), sc.a.ptr(), sc.m.ptr(), true);

    const double* prompt = prompts_[s][static_cast<std::size_t>(task)]->value.ptr();
    // Skip connection around the expert block, as in a transformer FFN slot;
    // the zero-initialized block starts as a perturbation of the identity.
    Tensor y = st.moe->forward(sc.m, prompt, training, noise_rng, sc.moe);
    kern::axpy(1.0, sc.m.ptr(), y.ptr(), n * c);

    if (s + 1 < stages_.size()) {
      cur = merge_tokens(y, st.spec.h, st.spec.w);
    } else {
      cache.final_tokens = std::move(y);
    }
  }
  return cache;
}

void Model::backward_backbone(const BackboneCache& cache, const Tensor& dfinal,
                              const std::vector<std::vector<double>>* dg_direct) {
  if (cache.stages.size() != stages_.size())
    throw Error("backbone backward: cache does not match the model");
  Tensor dy = dfinal;
  for (std::size_t si = stages_.size(); si-- > 0;) {
    const Stage& st = stages_[si];
    const StageCache& sc = cache.stages[si];
    const std::size_t n = st.spec.h * st.spec.w, c = st.spec.c;

    if (si + 1 < stages_.size()) {
      // dy currently holds the merged-token gradient for stage si+1's input.
      dy = merge_tokens_backward(dy, st.spec.h, st.spec.w, c);
    }

    const double* dgd = nullptr;
    if (dg_direct && !(*dg_direct)[si].empty()) dgd = (*dg_direct)[si].data();
    double* dprompt =
        prompts_[si][static_cast<std::size_t>(cache.task)]->grad.ptr();
    Tensor dm = st.moe->backward(sc.moe, dy, dgd, dprompt);
    kern::axpy(1.0, dy.ptr(), dm.ptr(), n * c);  // skip-connection path

    Tensor da = dm;
    kern::gemm_tn(n, n, c, st.mix_w->value.ptr(), dm.ptr(), da.ptr(), true);
    kern::gemm_nt(n, c, n, dm.ptr(), sc.a.ptr(), st.mix_w->grad.ptr(), true);

    Tensor dt({n, c});
    for (std::size_t i = 0; i < n * c; ++i)
      dt.at(i) = da.at(i) * nn::gelu_grad(sc.t_pre.at(i));

    kern::gemm_tn(st.in_dim, n, c, sc.input.ptr(), dt.ptr(),
                  st.embed_w->grad.ptr(), true);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k)
        st.embed_b->grad.at(k) += dt.at(i, k);

    if (si > 0) {
      Tensor din({n, st.in_dim});
      kern::gemm_nt(n, c, st.in_dim, dt.ptr(), st.embed_w->value.ptr(),
                    din.ptr(), false);
      dy = std::move(din);
    }
  }
}

std::vector<double> Model::gap(const Tensor& tokens) {
  const std::size_t n = tokens.dim(0), c = tokens.dim(1);
  std::vector<double> g(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) g[k] += tokens.at(i, k);
  for (std::size_t k = 0; k < c; ++k) g[k] /= static_cast<double>(n);
  return g;
}

Tensor Model::gap_backward(const std::vector<double>& dgap, std::size_t n) {
  const std::size_t c = dgap.size();
  Tensor d({n, c});
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) d.at(i, k) = dgap[k] * inv;
  return d;
}

namespace {

// out = in · W + b for a single row vector.
std::vector<double> vec_linear(const std::vector<double>& in, const Tensor& w,
                               const Tensor& b) {
  const std::size_t m = w.dim(0), n = w.dim(1);
  std::vector<double> out(b.data.begin(), b.data.end());
  for (std::size_t i = 0; i < m; ++i) {
    const double v = in[i];
    if (v == 0.0) continue;
    kern::axpy(v, w.ptr() + i * n, out.data(), n);
  }
  return out;
}

// Accumulates dW, db; returns d(in).
std::vector<double> vec_linear_backward(const std::vector<double>& in,
                                        nn::Param& w, nn::Param& b,
                                        const std::vector<double>& dout) {
  const std::size_t m = w.value.dim(0), n = w.value.dim(1);
  for (std::size_t j = 0; j < n; ++j) b.grad.at(j) += dout[j];
  std::vector<double> din(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    kern::axpy(in[i], dout.data(), w.grad.ptr() + i * n, n);
    din[i] = kern::dot(w.value.ptr() + i * n, dout.data(), n);
  }
  return din;
}

}  // namespace

std::vector<double> Model::dino_head_forward(const std::vector<double>& gap_vec,
                                             MlpCache& cache) const {
  cache.in = gap_vec;
  cache.h1_pre = vec_linear(gap_vec, dino_w1_->value, dino_b1_->value);
  cache.h1.resize(cache.h1_pre.size());
  for (std::size_t i = 0; i < cache.h1.size(); ++i)
    cache.h1[i] = nn::gelu(cache.h1_pre[i]);
  cache.h2_pre = vec_linear(cache.h1, dino_w2_->value, dino_b2_->value);
  cache.h2.resize(cache.h2_pre.size());
  for (std::size_t i = 0; i < cache.h2.size(); ++i)
    cache.h2[i] = nn::gelu(cache.h2_pre[i]);
  cache.h2_norm =
      std::max(std::sqrt(kern::sumsq(cache.h2.data(), cache.h2.size())), 1e-12);
  cache.h2n.resize(cache.h2.size());
  for (std::size_t i = 0; i < cache.h2.size(); ++i)
    cache.h2n[i] = cache.h2[i] / cache.h2_norm;
  cache.out = vec_linear(cache.h2n, dino_w3_->value, dino_b3_->value);
  return cache.out;
}

std::vector<double> Model::dino_head_backward(const MlpCache& cache,
                                              const std::vector<double>& dout) {
  std::vector<double> dh2n =
      vec_linear_backward(cache.h2n, *dino_w3_, *dino_b3_, dout);
  // Through v/||v||: d = (I - v̂ v̂ᵀ) dv̂ / ||v||.
  const double proj =
      kern::dot(dh2n.data(), cache.h2n.data(), dh2n.size());
  std::vector<double> dh2(dh2n.size());
  for (std::size_t i = 0; i < dh2.size(); ++i)
    dh2[i] = (dh2n[i] - proj * cache.h2n[i]) / cache.h2_norm;
  for (std::size_t i = 0; i < dh2.size(); ++i)
    dh2[i] *= nn::gelu_grad(cache.h2_pre[i]);
  std::vector<double> dh1 =
      vec_linear_backward(cache.h1, *dino_w2_, *dino_b2_, dh2);
  for (std::size_t i = 0; i < dh1.size(); ++i)
    dh1[i] *= nn::gelu_grad(cache.h1_pre[i]);
  return vec_linear_backward(cache.in, *dino_w1_, *dino_b1_, dh1);
}

Tensor Model::part_head_forward(const Tensor& tokens) const {
  const std::size_t n = tokens.dim(0), c = tokens.dim(1);
  const std::size_t k = cfg_.n_part_classes;
  Tensor logits({n, k});
  kern::gemm_nn(n, c, k, tokens.ptr(), part_w_->value.ptr(), logits.ptr(),
                false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) logits.at(i, j) += part_b_->value.at(j);
  return logits;
}

Tensor Model::part_head_backward(const Tensor& tokens, const Tensor& dlogits) {
  const std::size_t n = tokens.dim(0), c = tokens.dim(1);
  const std::size_t k = cfg_.n_part_classes;
  kern::gemm_tn(c, n, k, tokens.ptr(), dlogits.ptr(), part_w_->grad.ptr(),
                true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      part_b_->grad.at(j) += dlogits.at(i, j);
  Tensor dtokens({n, c});
  kern::gemm_nt(n, k, c, dlogits.ptr(), part_w_->value.ptr(), dtokens.ptr(),
                false);
  return dtokens;
}

std::vector<double> Model::attr_head_forward(
    const std::vector<double>& gap_vec) const {
  return vec_linear(gap_vec, attr_w_->value, attr_b_->value);
}

std::vector<double> Model::attr_head_backward(
    const std::vector<double>& gap_vec, const std::vector<double>& dlogits) {
  return vec_linear_backward(gap_vec, *attr_w_, *attr_b_, dlogits);
}

const Tensor& Model::prompt(std::size_t stage, std::size_t task) const {
  return prompts_.at(stage).at(task)->value;
}

bool Model::is_shared_layer(const std::string& name) {
  if (name.rfind("head.", 0) == 0) return false;
  if (name.find(".prompt.") != std::string::npos) return false;
  return true;
}

void ema_update(Model& teacher, const Model& student, double m) {
  nn::ParamStore& t = teacher.store();
  const nn::ParamStore& s = student.store();
  if (t.count() != s.count())
    throw Error("ema_update: parameter trees differ in size");
  for (std::size_t i = 0; i < t.count(); ++i) {
    nn::Param& pt = t.param(i);
    const nn::Param& ps = s.param(i);
    if (!pt.value.same_shape(ps.value) || pt.name != ps.name)
      throw Error("ema_update: parameter trees are not isomorphic");
    kern::ema_update(pt.value.ptr(), ps.value.ptr(), m, pt.value.size());
  }
}

}  // namespace clasp
