#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clasp/checkpoint.hpp"
#include "clasp/diagnostics.hpp"
#include "clasp/losses.hpp"
#include "clasp/metrics.hpp"
#include "clasp/model.hpp"
#include "clasp/optim.hpp"
#include "clasp/pseudo_labels.hpp"
#include "clasp/synthetic.hpp"

namespace clasp {

struct TrainConfig {
  long steps = 200;
  std::size_t batch_size = 4;
  double lr = 3e-4;
  double warm_lr_factor = 0.1;  // applied when warm-starting from a checkpoint
  double ema_momentum = 0.996;
  unsigned long long seed = 42;
  ModelConfig model;
  LossWeights weights;
  AdamWConfig optim;
  // Slot layout of the attribute head; total_values() must equal
  // model.n_attr_logits.
  AttributeSchema schema = AttributeSchema::defaults();
  // Empty: first phase, appearance distillation only (the other loss weights
  // are forced to zero). Set: load these weights, train every objective at
  // lr * warm_lr_factor.
  std::string warm_start_checkpoint;
  bool deterministic = false;  // clean gates, zeroed wall-time column

  void validate() const;
  // Loss weights actually used for this phase.
  LossWeights effective_weights() const;
  double base_lr() const;
};

// One element of the training set: the raster plus its generated labels.
// part_known marks images the label pipeline accepted; the rest still train
// the appearance objective.
struct TrainSample {
  ImageRGB image;
  std::vector<int> part_tokens;  // final-grid class ids, 0 background
  bool part_known = false;
  std::vector<AttributeLabel> attrs;
};

struct TrainingData {
  std::vector<TrainSample> samples;
  std::size_t n_part_known = 0;
  std::size_t n_attr_known = 0;  // samples with at least one known attribute
};

// Runs the label pipeline over raw synthetic samples. Token labels are the
// majority downsample of the generated pixel map onto the final stage grid.
TrainingData make_training_samples(const std::vector<SyntheticSample>& raw,
                                   const PipelineConfig& pipe,
                                   const PartVocabulary& vocab,
                                   const AttributeSchema& schema,
                                   const OracleEmbedder& oracle,
                                   const ModelConfig& model_cfg,
                                   unsigned long long seed);

// Student, its EMA-tracked teacher (identical at construction), the
// centering state, and the optimizer. Not copyable; the optimizer holds a
// reference to the student store.
struct ModelState {
  Model student;
  Model teacher;
  DinoState dino;
  AdamW optim;
  long step = 0;

  explicit ModelState(const TrainConfig& cfg)
      : student(cfg.model, cfg.seed),
        teacher(cfg.model, cfg.seed),
        dino(cfg.model.dino_proto),
        optim(student.store(), cfg.optim) {}
  ModelState(const ModelState&) = delete;
  ModelState& operator=(const ModelState&) = delete;
};

// Per-objective gradient snapshot, aligned with the student store order.
struct GradBank {
  std::string name;
  std::vector<Tensor> grads;
};

struct StepOutputs {
  LossBreakdown losses;
  std::vector<double> cv2_stage;  // routing health per stage, pooled records
  double gcr = 0.0;
  double ead_dino_part = 0.0;
  double ead_dino_attr = 0.0;
  double ead_part_attr = 0.0;
  bool ran_dino = false, ran_part = false, ran_attr = false,
       ran_balancing = false;
  std::vector<GradBank> banks;  // grad mode only; one per objective that ran
  DiagnosticsTrace trace;       // shared-layer task gradients + profiles
  bool trace_valid = false;     // set when at least two tasks ran
  // [sample][view][proto]; inputs to the post-step center update.
  std::vector<std::vector<std::vector<double>>> teacher_logits;
};

// Deterministic shuffled order for one epoch.
std::vector<std::size_t> epoch_permutation(unsigned long long seed,
                                           std::size_t epoch, std::size_t n);
std::vector<const TrainSample*> select_batch(
    const std::vector<TrainSample>& data, const TrainConfig& cfg, long step);

// All forward/backward passes of one step, no parameter mutation. With
// compute_grads=false only the losses and routing records are produced
// (gradients and banks untouched) — the replay used by finite-difference
// checks. All randomness derives from (cfg.seed, step_index).
StepOutputs run_step_passes(ModelState& state,
                            const std::vector<const TrainSample*>& batch,
                            const TrainConfig& cfg, long step_index,
                            bool compute_grads);

// Passes, weighted gradient combine, optimizer step at the cosine-annealed
// rate, teacher EMA update, center update, step counter bump.
StepOutputs train_step(ModelState& state,
                       const std::vector<const TrainSample*>& batch,
                       const TrainConfig& cfg);

CheckpointData state_to_checkpoint(const ModelState& state,
                                   const std::string& config_json);
// Weights and center only; optimizer and step counter start fresh. The
// checkpoint is fully validated against the state before anything mutates.
void warm_start_from_checkpoint(ModelState& state, const std::string& path);
// Full restore: weights, center, optimizer moments and counter, step.
void resume_from_checkpoint(ModelState& state, const std::string& path);

struct PretrainResult {
  std::vector<MetricsRow> history;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string summary_path;
  std::string trace_path;  // empty when fewer than two tasks ran
};

// Full run: phase handling, the step loop, and the output files
// (checkpoint.bin, metrics.csv, summary.json, trace.json) under out_dir.
// config_json is embedded in the checkpoint. resume_path, when set, restores
// a previous run of the same configuration and continues it.
PretrainResult run_pretraining(const TrainConfig& cfg,
                               const std::vector<TrainSample>& data,
                               const std::string& out_dir,
                               const std::string& config_json,
                               const std::string& resume_path = "");

}  // namespace clasp
