#include "clasp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <utility>

#include "clasp/error.hpp"
#include "clasp/kernels.hpp"

namespace clasp {

namespace {

constexpr int kTaskDino = 0;
constexpr int kTaskPart = 1;
constexpr int kTaskAttr = 2;
constexpr const char* kTaskNames[3] = {"dino", "part", "attribute"};

// One student forward kept alive until the routing-balance backward.
struct PassTrace {
  int task = kTaskDino;
  std::size_t sample = 0;  // batch position
  std::size_t view = 0;    // dino only
  BackboneCache cache;
  MlpCache mlp;                 // projection-head trace (dino)
  std::vector<double> gap_vec;  // attribute-head input
  Tensor part_logits;
  std::vector<double> logits;  // dino or attribute head output
};

GradBank snapshot_bank(const nn::ParamStore& store, const std::string& name) {
  GradBank bank;
  bank.name = name;
  bank.grads.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i)
    bank.grads.push_back(store.param(i).grad);
  return bank;
}

double bank_weight(const std::string& name, const LossWeights& w) {
  if (name == "dino") return w.dino;
  if (name == "part") return w.part;
  if (name == "attribute") return w.attribute;
  if (name == "balancing") return w.balancing;
  throw Error("unknown gradient bank: " + name);
}

}  // namespace

void TrainConfig::validate() const {
  if (steps <= 0) throw ConfigError("steps must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(warm_lr_factor > 0.0) || warm_lr_factor > 1.0)
    throw ConfigError("warm_lr_factor must lie in (0, 1]");
  if (!(ema_momentum >= 0.0) || ema_momentum >= 1.0)
    throw ConfigError("ema_momentum must lie in [0, 1)");
  if (weights.dino < 0.0 || weights.part < 0.0 || weights.attribute < 0.0 ||
      weights.balancing < 0.0)
    throw ConfigError("loss weights must be nonnegative");
  model.validate();
  schema.validate();
  if (model.n_attr_logits != schema.total_values())
    throw ConfigError(
        "attribute head width must equal the schema's total value count");
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (warm_start_checkpoint.empty()) {
    // First phase: appearance distillation only.
    w.part = 0.0;
    w.attribute = 0.0;
    w.balancing = 0.0;
  }
  return w;
}

double TrainConfig::base_lr() const {
  return warm_start_checkpoint.empty() ? lr : lr * warm_lr_factor;
}

TrainingData make_training_samples(const std::vector<SyntheticSample>& raw,
                                   const PipelineConfig& pipe,
                                   const PartVocabulary& vocab,
                                   const AttributeSchema& schema,
                                   const OracleEmbedder& oracle,
                                   const ModelConfig& model_cfg,
                                   unsigned long long seed) {
  model_cfg.validate();
  const std::size_t gh = model_cfg.stages.back().h;
  const std::size_t gw = model_cfg.stages.back().w;
  Rng root(seed);
  TrainingData out;
  out.samples.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const SyntheticSample& s = raw[i];
    TrainSample t;
    t.image = s.image;
    Rng rng = root.derive("pseudo-label", i);
    PseudoLabelOutcome outcome =
        generate_part_labels(s.image, pipe, vocab, oracle, oracle, rng);
    if (outcome.accepted) {
      t.part_known = true;
      t.part_tokens = downsample_labels(outcome.map, gh, gw);
      ++out.n_part_known;
    } else {
      t.part_tokens.assign(gh * gw, 0);
    }
    t.attrs = assign_attribute_labels(s.image, schema, oracle).labels;
    for (const AttributeLabel& a : t.attrs)
      if (a.known) {
        ++out.n_attr_known;
        break;
      }
    out.samples.push_back(std::move(t));
  }
  return out;
}

std::vector<std::size_t> epoch_permutation(unsigned long long seed,
                                           std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng(seed).derive("epoch-shuffle", epoch);
  rng.shuffle(perm);
  return perm;
}

std::vector<const TrainSample*> select_batch(
    const std::vector<TrainSample>& data, const TrainConfig& cfg, long step) {
  if (data.empty()) throw ConfigError("training set is empty");
  if (step < 0) throw ConfigError("negative step index");
  const std::size_t n = data.size();
  std::vector<const TrainSample*> batch;
  batch.reserve(cfg.batch_size);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    const std::size_t g = static_cast<std::size_t>(step) * cfg.batch_size + i;
    const std::size_t epoch = g / n;
    if (epoch != cached_epoch) {
      perm = epoch_permutation(cfg.seed, epoch, n);
      cached_epoch = epoch;
    }
    batch.push_back(&data[perm[g % n]]);
  }
  return batch;
}

StepOutputs run_step_passes(ModelState& state,
                            const std::vector<const TrainSample*>& batch,
                            const TrainConfig& cfg, long step_index,
                            bool compute_grads) {
  if (batch.empty()) throw ConfigError("empty batch");
  const std::size_t b = batch.size();
  const LossWeights& w = cfg.weights;
  const std::size_t n_stages = cfg.model.stages.size();
  const int n_experts = cfg.model.moe.n_experts;
  const std::size_t n_views = 2;

  StepOutputs out;
  out.cv2_stage.assign(n_stages, 0.0);

  nn::ParamStore& store = state.student.store();
  if (compute_grads) store.zero_grads();

  Rng step_rng =
      Rng(cfg.seed).derive("step", static_cast<std::uint64_t>(step_index));
  Rng dummy(0);

  std::vector<std::vector<ImageRGB>> views(b);
  if (w.dino > 0.0)
    for (std::size_t i = 0; i < b; ++i) {
      Rng vr = step_rng.derive("views", i);
      views[i] = make_global_views(batch[i]->image, vr);
    }

  std::vector<PassTrace> traces;
  traces.reserve(b * n_views + 2 * b);

  // Teacher forward: clean gates, no gradient path.
  if (w.dino > 0.0) {
    out.teacher_logits.assign(b, std::vector<std::vector<double>>(n_views));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t v = 0; v < n_views; ++v) {
        BackboneCache tc =
            state.teacher.forward_backbone(views[i][v], kTaskDino, false, dummy);
        MlpCache mc;
        out.teacher_logits[i][v] =
            state.teacher.dino_head_forward(Model::gap(tc.final_tokens), mc);
      }
  }

  // Student appearance passes, both views.
  double loss_dino = 0.0;
  if (w.dino > 0.0) {
    std::vector<std::vector<std::vector<double>>> student_logits(
        b, std::vector<std::vector<double>>(n_views));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t v = 0; v < n_views; ++v) {
        PassTrace t;
        t.task = kTaskDino;
        t.sample = i;
        t.view = v;
        Rng nr = step_rng.derive("noise-dino", i * n_views + v);
        t.cache =
            state.student.forward_backbone(views[i][v], kTaskDino, true, nr);
        t.logits = state.student.dino_head_forward(
            Model::gap(t.cache.final_tokens), t.mlp);
        student_logits[i][v] = t.logits;
        traces.push_back(std::move(t));
      }

    std::vector<std::vector<std::vector<double>>> dstudent;
    std::vector<std::vector<std::vector<double>>>* dptr = nullptr;
    if (compute_grads) {
      dstudent.assign(b, std::vector<std::vector<double>>(
                             n_views,
                             std::vector<double>(cfg.model.dino_proto, 0.0)));
      dptr = &dstudent;
    }
    loss_dino =
        dino_loss_batch(out.teacher_logits, student_logits, state.dino, dptr);
    out.ran_dino = true;

    if (compute_grads) {
      for (PassTrace& t : traces) {
        if (t.task != kTaskDino) continue;
        std::vector<double> dgap =
            state.student.dino_head_backward(t.mlp, dstudent[t.sample][t.view]);
        Tensor dfinal =
            Model::gap_backward(dgap, t.cache.final_tokens.dim(0));
        state.student.backward_backbone(t.cache, dfinal, nullptr);
      }
      out.banks.push_back(snapshot_bank(store, "dino"));
      store.zero_grads();
    }
  }

  // Part pass: unaugmented image, accepted samples only.
  double loss_part = 0.0;
  std::vector<std::size_t> part_traces;
  if (w.part > 0.0) {
    for (std::size_t i = 0; i < b; ++i) {
      if (!batch[i]->part_known) continue;
      PassTrace t;
      t.task = kTaskPart;
      t.sample = i;
      Rng nr = step_rng.derive("noise-part", i);
      t.cache =
          state.student.forward_backbone(batch[i]->image, kTaskPart, true, nr);
      t.part_logits = state.student.part_head_forward(t.cache.final_tokens);
      part_traces.push_back(traces.size());
      traces.push_back(std::move(t));
    }
    if (!part_traces.empty()) {
      const double inv = 1.0 / static_cast<double>(part_traces.size());
      for (const std::size_t idx : part_traces) {
        PassTrace& t = traces[idx];
        Tensor dlogits;
        if (compute_grads) dlogits.resize(t.part_logits.shape);
        loss_part += inv * part_loss(t.part_logits, batch[t.sample]->part_tokens,
                                     inv, compute_grads ? &dlogits : nullptr);
        if (compute_grads) {
          Tensor dtokens =
              state.student.part_head_backward(t.cache.final_tokens, dlogits);
          state.student.backward_backbone(t.cache, dtokens, nullptr);
        }
      }
      out.ran_part = true;
      if (compute_grads) {
        out.banks.push_back(snapshot_bank(store, "part"));
        store.zero_grads();
      }
    }
  }

  // Attribute pass: unaugmented image, samples with any known attribute.
  double loss_attr = 0.0;
  std::vector<std::size_t> attr_traces;
  if (w.attribute > 0.0) {
    for (std::size_t i = 0; i < b; ++i) {
      bool any = false;
      for (const AttributeLabel& a : batch[i]->attrs) any = any || a.known;
      if (!any) continue;
      PassTrace t;
      t.task = kTaskAttr;
      t.sample = i;
      Rng nr = step_rng.derive("noise-attr", i);
      t.cache =
          state.student.forward_backbone(batch[i]->image, kTaskAttr, true, nr);
      t.gap_vec = Model::gap(t.cache.final_tokens);
      t.logits = state.student.attr_head_forward(t.gap_vec);
      attr_traces.push_back(traces.size());
      traces.push_back(std::move(t));
    }
    if (!attr_traces.empty()) {
      const double inv = 1.0 / static_cast<double>(attr_traces.size());
      for (const std::size_t idx : attr_traces) {
        PassTrace& t = traces[idx];
        std::vector<double> dlogits(t.logits.size(), 0.0);
        loss_attr += inv * attribute_loss(
                               t.logits, batch[t.sample]->attrs, cfg.schema,
                               inv, compute_grads ? &dlogits : nullptr);
        if (compute_grads) {
          std::vector<double> dgap =
              state.student.attr_head_backward(t.gap_vec, dlogits);
          Tensor dfinal =
              Model::gap_backward(dgap, t.cache.final_tokens.dim(0));
          state.student.backward_backbone(t.cache, dfinal, nullptr);
        }
      }
      out.ran_attr = true;
      if (compute_grads) {
        out.banks.push_back(snapshot_bank(store, "attribute"));
        store.zero_grads();
      }
    }
  }

  // Routing records: pooled per stage (health metric, balancing) and per
  // task (activation profiles).
  std::vector<std::vector<GateRecord>> stage_records(n_stages);
  std::vector<std::vector<GateRecord>> task_records(3);
  for (const PassTrace& t : traces)
    for (std::size_t s = 0; s < n_stages; ++s) {
      const GateRecord& r = t.cache.stages[s].moe.rec;
      stage_records[s].push_back(r);
      task_records[static_cast<std::size_t>(t.task)].push_back(r);
    }
  for (std::size_t s = 0; s < n_stages; ++s)
    out.cv2_stage[s] = cv2_importance(stage_records[s], n_experts);

  double loss_bal = 0.0;
  if (w.balancing > 0.0 && !traces.empty()) {
    std::vector<std::vector<double>> dgates(
        n_stages, std::vector<double>(static_cast<std::size_t>(n_experts), 0.0));
    for (std::size_t s = 0; s < n_stages; ++s)
      loss_bal += balancing_loss_stage(stage_records[s], n_experts, 1.0,
                                       compute_grads ? &dgates[s] : nullptr);
    out.ran_balancing = true;
    if (compute_grads) {
      for (PassTrace& t : traces) {
        Tensor dzero;
        dzero.resize(t.cache.final_tokens.shape);
        state.student.backward_backbone(t.cache, dzero, &dgates);
      }
      out.banks.push_back(snapshot_bank(store, "balancing"));
      store.zero_grads();
    }
  }

  out.losses = total_loss(loss_dino, loss_part, loss_attr, loss_bal, w);

  // Activation profiles and their pairwise divergences.
  const bool ran_task[3] = {out.ran_dino, out.ran_part, out.ran_attr};
  std::vector<ExpertActivationProfile> profiles(3);
  for (int k = 0; k < 3; ++k)
    if (ran_task[k])
      profiles[static_cast<std::size_t>(k)] = build_activation_profile(
          task_records[static_cast<std::size_t>(k)], n_experts, kTaskNames[k]);
  if (out.ran_dino && out.ran_part)
    out.ead_dino_part =
        expert_activation_divergence(profiles[0], profiles[1]);
  if (out.ran_dino && out.ran_attr)
    out.ead_dino_attr =
        expert_activation_divergence(profiles[0], profiles[2]);
  if (out.ran_part && out.ran_attr)
    out.ead_part_attr =
        expert_activation_divergence(profiles[1], profiles[2]);

  // Shared-layer gradient trace and the conflict ratio over the tasks that
  // actually ran this step.
  if (compute_grads) {
    std::vector<const GradBank*> task_banks;
    for (const GradBank& bank : out.banks)
      if (bank.name != "balancing") task_banks.push_back(&bank);
    if (task_banks.size() >= 2) {
      for (const GradBank* bank : task_banks)
        out.trace.gradients.tasks.push_back(bank->name);
      for (std::size_t i = 0; i < store.count(); ++i) {
        const nn::Param& p = store.param(i);
        if (!Model::is_shared_layer(p.name)) continue;
        GradientTrace::Layer layer;
        layer.name = p.name;
        for (const GradBank* bank : task_banks)
          layer.grads.push_back(bank->grads[i].data);
        out.trace.gradients.layers.push_back(std::move(layer));
      }
      for (int k = 0; k < 3; ++k)
        if (ran_task[k]) out.trace.profiles.push_back(profiles[static_cast<std::size_t>(k)]);
      out.gcr = conflict_ratio(out.trace.gradients);
      out.trace_valid = true;
    }

    // Weighted sum of the per-objective banks becomes the update gradient.
    store.zero_grads();
    for (const GradBank& bank : out.banks) {
      const double lam = bank_weight(bank.name, w);
      if (lam == 0.0) continue;
      for (std::size_t i = 0; i < store.count(); ++i)
        kern::axpy(lam, bank.grads[i].ptr(), store.param(i).grad.ptr(),
                   bank.grads[i].size());
    }
  }

  return out;
}

StepOutputs train_step(ModelState& state,
                       const std::vector<const TrainSample*>& batch,
                       const TrainConfig& cfg) {
  StepOutputs out = run_step_passes(state, batch, cfg, state.step, true);
  state.optim.step(cosine_lr(cfg.base_lr(), state.step, cfg.steps));
  ema_update(state.teacher, state.student, cfg.ema_momentum);
  if (!out.teacher_logits.empty()) {
    std::vector<const std::vector<double>*> ptrs;
    for (const auto& per_sample : out.teacher_logits)
      for (const auto& v : per_sample) ptrs.push_back(&v);
    dino_center_update(state.dino, ptrs);
  }
  ++state.step;
  return out;
}

CheckpointData state_to_checkpoint(const ModelState& state,
                                   const std::string& config_json) {
  CheckpointData ck;
  ck.step = state.step;
  ck.config_json = config_json;
  const nn::ParamStore& ss = state.student.store();
  const nn::ParamStore& ts = state.teacher.store();
  for (std::size_t i = 0; i < ss.count(); ++i)
    ck.tensors.emplace_back("student." + ss.param(i).name, ss.param(i).value);
  for (std::size_t i = 0; i < ts.count(); ++i)
    ck.tensors.emplace_back("teacher." + ts.param(i).name, ts.param(i).value);
  for (std::size_t i = 0; i < ss.count(); ++i) {
    ck.tensors.emplace_back("optim.m." + ss.param(i).name,
                            state.optim.m_slot(i));
    ck.tensors.emplace_back("optim.v." + ss.param(i).name,
                            state.optim.v_slot(i));
  }
  Tensor t({1});
  t.at(0) = static_cast<double>(state.optim.steps_taken());
  ck.tensors.emplace_back("optim.t", std::move(t));
  Tensor center({state.dino.center.size()});
  center.data = state.dino.center;
  ck.tensors.emplace_back("dino.center", std::move(center));
  return ck;
}

namespace {

const Tensor& require_tensor(const CheckpointData& ck, const std::string& name,
                             const std::vector<std::size_t>& shape) {
  const Tensor* t = ck.find(name);
  if (!t) throw CheckpointError("checkpoint missing tensor " + name);
  if (t->shape != shape)
    throw CheckpointError("tensor " + name + ": shape mismatch");
  return *t;
}

// Validates every model tensor against the checkpoint, then copies. Nothing
// mutates unless the whole set matches.
void restore_weights(ModelState& state, const CheckpointData& ck) {
  nn::ParamStore& ss = state.student.store();
  nn::ParamStore& ts = state.teacher.store();
  std::vector<std::pair<Tensor*, const Tensor*>> plan;
  for (std::size_t i = 0; i < ss.count(); ++i)
    plan.emplace_back(&ss.param(i).value,
                      &require_tensor(ck, "student." + ss.param(i).name,
                                      ss.param(i).value.shape));
  for (std::size_t i = 0; i < ts.count(); ++i)
    plan.emplace_back(&ts.param(i).value,
                      &require_tensor(ck, "teacher." + ts.param(i).name,
                                      ts.param(i).value.shape));
  const Tensor& center =
      require_tensor(ck, "dino.center", {state.dino.center.size()});
  for (auto& [dst, src] : plan) *dst = *src;
  state.dino.center = center.data;
}

}  // namespace

void warm_start_from_checkpoint(ModelState& state, const std::string& path) {
  const CheckpointData ck = load_checkpoint(path);
  restore_weights(state, ck);
  state.optim.reset();
  state.step = 0;
}

void resume_from_checkpoint(ModelState& state, const std::string& path) {
  const CheckpointData ck = load_checkpoint(path);
  nn::ParamStore& ss = state.student.store();
  // Validate the optimizer block before touching anything.
  std::vector<const Tensor*> ms, vs;
  for (std::size_t i = 0; i < ss.count(); ++i) {
    ms.push_back(&require_tensor(ck, "optim.m." + ss.param(i).name,
                                 ss.param(i).value.shape));
    vs.push_back(&require_tensor(ck, "optim.v." + ss.param(i).name,
                                 ss.param(i).value.shape));
  }
  const Tensor& t = require_tensor(ck, "optim.t", {1});
  restore_weights(state, ck);
  for (std::size_t i = 0; i < ss.count(); ++i) {
    state.optim.m_slot(i) = *ms[i];
    state.optim.v_slot(i) = *vs[i];
  }
  state.optim.set_steps_taken(static_cast<long>(t.at(0)));
  state.step = ck.step;
}

PretrainResult run_pretraining(const TrainConfig& cfg_in,
                               const std::vector<TrainSample>& data,
                               const std::string& out_dir,
                               const std::string& config_json,
                               const std::string& resume_path) {
  TrainConfig cfg = cfg_in;
  if (cfg.deterministic) cfg.model.moe.noise_enabled = false;
  cfg.validate();
  cfg.weights = cfg.effective_weights();
  if (data.empty()) throw ConfigError("training set is empty");

  std::filesystem::create_directories(out_dir);
  ModelState state(cfg);
  if (!resume_path.empty())
    resume_from_checkpoint(state, resume_path);
  else if (!cfg.warm_start_checkpoint.empty())
    warm_start_from_checkpoint(state, cfg.warm_start_checkpoint);

  PretrainResult res;
  DiagnosticsTrace last_trace;
  bool have_trace = false;
  for (long s = state.step; s < cfg.steps; ++s) {
    const auto batch = select_batch(data, cfg, s);
    const auto t0 = std::chrono::steady_clock::now();
    StepOutputs so = train_step(state, batch, cfg);
    MetricsRow row;
    row.step = s;
    row.losses = so.losses;
    row.cv2_stage = so.cv2_stage;
    row.gcr = so.gcr;
    row.ead_dino_part = so.ead_dino_part;
    row.ead_dino_attr = so.ead_dino_attr;
    row.ead_part_attr = so.ead_part_attr;
    row.wall_time_ms =
        cfg.deterministic
            ? 0.0
            : std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    res.history.push_back(std::move(row));
    if (so.trace_valid) {
      last_trace = std::move(so.trace);
      have_trace = true;
    }
  }

  res.checkpoint_path = out_dir + "/checkpoint.bin";
  save_checkpoint(state_to_checkpoint(state, config_json), res.checkpoint_path);
  if (!res.history.empty()) {
    res.metrics_path = out_dir + "/metrics.csv";
    write_metrics_csv(res.history, res.metrics_path);
    res.summary_path = out_dir + "/summary.json";
    write_metrics_summary(res.history, res.summary_path);
  }
  if (have_trace) {
    res.trace_path = out_dir + "/trace.json";
    save_trace(last_trace, res.trace_path);
  }
  return res;
}

}  // namespace clasp
