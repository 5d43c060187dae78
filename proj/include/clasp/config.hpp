#pragma once

#include <cstddef>
#include <string>

#include "clasp/encoders.hpp"
#include "clasp/pseudo_labels.hpp"
#include "clasp/synthetic.hpp"
#include "clasp/trainer.hpp"

namespace clasp {

// Everything a run needs, assembled from one JSON file. Unknown keys fail
// fast with the offending key path; absent keys keep their defaults.
struct ExperimentConfig {
  TrainConfig train;  // includes model, loss weights, optimizer, schema
  SyntheticConfig synthetic;  // image dims mirror the model's
  std::size_t synthetic_count = 64;
  GranularitySet granularities = GranularitySet::defaults();
  double semantic_threshold = 0.9;
  unsigned long long oracle_seed = 7;
  std::size_t oracle_dim = 16;
  PartVocabulary vocabulary = PartVocabulary::defaults();
  std::string vocabulary_path;  // set when loaded from a file
  std::string schema_path;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& origin);
ExperimentConfig load_experiment_config(const std::string& path);

// Full effective configuration, stable across identical inputs; embedded in
// checkpoints and echoed by the CLI.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

// Label-pipeline config with the token-grid stage filled in from the model
// patch layout and the oracle dimension.
PipelineConfig make_pipeline_config(const ExperimentConfig& cfg);

OracleSpec make_oracle_spec(const ExperimentConfig& cfg);

}  // namespace clasp
