#include "clasp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clasp/error.hpp"

namespace clasp {

namespace {

using nlohmann::json;

std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

// Tracks which keys of one object were consumed; leftovers are fatal.
struct Section {
  const json& j;
  std::string path;
  std::set<std::string> seen;

  Section(const json& obj, std::string p) : j(obj), path(std::move(p)) {
    if (!j.is_object())
      throw ConfigError("config key " + (path.empty() ? "<root>" : path) +
                        ": expected an object");
  }
  const json* get(const char* key) {
    seen.insert(key);
    const auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
  }
  void finish() const {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!seen.count(it.key()))
        throw ConfigError("unknown config key: " + join_path(path, it.key()));
  }
};

[[noreturn]] void type_error(const Section& s, const char* key,
                             const char* want) {
  throw ConfigError("config key " + join_path(s.path, key) + ": expected " +
                    want);
}

void read_double(Section& s, const char* key, double& out) {
  if (const json* v = s.get(key)) {
    if (!v->is_number()) type_error(s, key, "a number");
    out = v->get<double>();
  }
}

void read_bool(Section& s, const char* key, bool& out) {
  if (const json* v = s.get(key)) {
    if (!v->is_boolean()) type_error(s, key, "a boolean");
    out = v->get<bool>();
  }
}

void read_string(Section& s, const char* key, std::string& out) {
  if (const json* v = s.get(key)) {
    if (!v->is_string()) type_error(s, key, "a string");
    out = v->get<std::string>();
  }
}

void read_size(Section& s, const char* key, std::size_t& out) {
  if (const json* v = s.get(key)) {
    if (!v->is_number_integer() || (v->is_number_integer() && v->get<long long>() < 0))
      type_error(s, key, "a nonnegative integer");
    out = static_cast<std::size_t>(v->get<long long>());
  }
}

void read_long(Section& s, const char* key, long& out) {
  if (const json* v = s.get(key)) {
    if (!v->is_number_integer()) type_error(s, key, "an integer");
    out = static_cast<long>(v->get<long long>());
  }
}

void read_int(Section& s, const char* key, int& out) {
  if (const json* v = s.get(key)) {
    if (!v->is_number_integer()) type_error(s, key, "an integer");
    out = static_cast<int>(v->get<long long>());
  }
}

void read_u64(Section& s, const char* key, unsigned long long& out) {
  if (const json* v = s.get(key)) {
    if (!v->is_number_integer() || v->get<long long>() < 0)
      type_error(s, key, "a nonnegative integer");
    out = v->get<unsigned long long>();
  }
}

void parse_weights(const json& j, const std::string& path, LossWeights& w) {
  Section s(j, path);
  read_double(s, "dino", w.dino);
  read_double(s, "part", w.part);
  read_double(s, "attribute", w.attribute);
  read_double(s, "balancing", w.balancing);
  s.finish();
}

void parse_optim(const json& j, const std::string& path, AdamWConfig& o) {
  Section s(j, path);
  read_double(s, "beta1", o.beta1);
  read_double(s, "beta2", o.beta2);
  read_double(s, "eps", o.eps);
  read_double(s, "weight_decay", o.weight_decay);
  s.finish();
}

void parse_moe(const json& j, const std::string& path, MoEConfig& m) {
  Section s(j, path);
  read_int(s, "n_experts", m.n_experts);
  read_int(s, "k_top", m.k_top);
  read_bool(s, "noise_enabled", m.noise_enabled);
  read_bool(s, "renormalize_after_topk", m.renormalize_after_topk);
  s.finish();
}

void parse_model(const json& j, const std::string& path, ModelConfig& m) {
  Section s(j, path);
  read_size(s, "image_h", m.image_h);
  read_size(s, "image_w", m.image_w);
  read_size(s, "patch", m.patch);
  if (const json* v = s.get("stages")) {
    if (!v->is_array() || v->empty()) type_error(s, "stages", "a nonempty array");
    m.stages.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string sp = path + ".stages[" + std::to_string(i) + "]";
      Section st((*v)[i], sp);
      StageSpec spec;
      read_size(st, "c", spec.c);
      read_size(st, "h", spec.h);
      read_size(st, "w", spec.w);
      st.finish();
      m.stages.push_back(spec);
    }
  }
  read_size(s, "n_tasks", m.n_tasks);
  read_size(s, "dino_hidden", m.dino_hidden);
  read_size(s, "dino_proto", m.dino_proto);
  read_size(s, "n_part_classes", m.n_part_classes);
  read_size(s, "n_attr_logits", m.n_attr_logits);
  if (const json* v = s.get("moe")) parse_moe(*v, path + ".moe", m.moe);
  s.finish();
}

void parse_synthetic(const json& j, const std::string& path,
                     SyntheticConfig& c, std::size_t& count) {
  Section s(j, path);
  read_size(s, "count", count);
  read_size(s, "cell", c.cell);
  read_size(s, "parts_per_image", c.parts_per_image);
  read_double(s, "background_fraction", c.background_fraction);
  read_u64(s, "seed", c.seed);
  s.finish();
}

void parse_pipeline(const json& j, const std::string& path,
                    GranularitySet& g, double& threshold) {
  Section s(j, path);
  if (const json* v = s.get("granularities")) {
    if (!v->is_array() || v->empty())
      type_error(s, "granularities", "a nonempty array");
    g.candidates.clear();
    for (const json& e : *v) {
      if (!e.is_number_integer() || e.get<long long>() < 0)
        type_error(s, "granularities", "nonnegative integers");
      g.candidates.push_back(static_cast<std::size_t>(e.get<long long>()));
    }
  }
  read_double(s, "semantic_threshold", threshold);
  s.finish();
}

void parse_oracle(const json& j, const std::string& path,
                  unsigned long long& seed, std::size_t& dim) {
  Section s(j, path);
  read_u64(s, "seed", seed);
  read_size(s, "dim", dim);
  s.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
  vocabulary.validate();
  train.validate();
  if (train.model.n_part_classes != vocabulary.size() + 1)
    throw ConfigError(
        "model.n_part_classes must be the vocabulary size plus background");
  granularities.validate();
  if (!(semantic_threshold > 0.0) || !(semantic_threshold < 1.0))
    throw ConfigError("pipeline.semantic_threshold must lie in (0, 1)");
  if (synthetic_count == 0)
    throw ConfigError("synthetic.count must be positive");
  const std::size_t need =
      2 + vocabulary.size() + train.schema.total_values();
  if (oracle_dim < need)
    throw ConfigError("oracle.dim too small for the concept vocabulary (need " +
                      std::to_string(need) + ")");
  SyntheticConfig syn = synthetic;
  syn.image_h = train.model.image_h;
  syn.image_w = train.model.image_w;
  syn.validate(vocabulary);
}

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  ExperimentConfig cfg;
  Section s(j, "");
  read_u64(s, "seed", cfg.train.seed);
  read_long(s, "steps", cfg.train.steps);
  read_size(s, "batch_size", cfg.train.batch_size);
  read_double(s, "lr", cfg.train.lr);
  read_double(s, "warm_lr_factor", cfg.train.warm_lr_factor);
  read_double(s, "ema_momentum", cfg.train.ema_momentum);
  read_string(s, "warm_start_checkpoint", cfg.train.warm_start_checkpoint);
  read_bool(s, "deterministic", cfg.train.deterministic);
  if (const json* v = s.get("weights"))
    parse_weights(*v, "weights", cfg.train.weights);
  if (const json* v = s.get("optim"))
    parse_optim(*v, "optim", cfg.train.optim);
  if (const json* v = s.get("model"))
    parse_model(*v, "model", cfg.train.model);
  if (const json* v = s.get("synthetic"))
    parse_synthetic(*v, "synthetic", cfg.synthetic, cfg.synthetic_count);
  if (const json* v = s.get("pipeline"))
    parse_pipeline(*v, "pipeline", cfg.granularities,
                   cfg.semantic_threshold);
  if (const json* v = s.get("oracle"))
    parse_oracle(*v, "oracle", cfg.oracle_seed, cfg.oracle_dim);
  read_string(s, "vocabulary", cfg.vocabulary_path);
  read_string(s, "attribute_schema", cfg.schema_path);
  s.finish();

  if (!cfg.vocabulary_path.empty())
    cfg.vocabulary = PartVocabulary::load(cfg.vocabulary_path);
  if (!cfg.schema_path.empty())
    cfg.train.schema = AttributeSchema::load(cfg.schema_path);

  cfg.synthetic.image_h = cfg.train.model.image_h;
  cfg.synthetic.image_w = cfg.train.model.image_w;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str(), path);
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.train.seed;
  j["steps"] = cfg.train.steps;
  j["batch_size"] = cfg.train.batch_size;
  j["lr"] = cfg.train.lr;
  j["warm_lr_factor"] = cfg.train.warm_lr_factor;
  j["ema_momentum"] = cfg.train.ema_momentum;
  j["warm_start_checkpoint"] = cfg.train.warm_start_checkpoint;
  j["deterministic"] = cfg.train.deterministic;
  j["weights"] = {{"dino", cfg.train.weights.dino},
                  {"part", cfg.train.weights.part},
                  {"attribute", cfg.train.weights.attribute},
                  {"balancing", cfg.train.weights.balancing}};
  j["optim"] = {{"beta1", cfg.train.optim.beta1},
                {"beta2", cfg.train.optim.beta2},
                {"eps", cfg.train.optim.eps},
                {"weight_decay", cfg.train.optim.weight_decay}};
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (const StageSpec& st : cfg.train.model.stages)
    stages.push_back({{"c", st.c}, {"h", st.h}, {"w", st.w}});
  j["model"] = {{"image_h", cfg.train.model.image_h},
                {"image_w", cfg.train.model.image_w},
                {"patch", cfg.train.model.patch},
                {"stages", stages},
                {"n_tasks", cfg.train.model.n_tasks},
                {"dino_hidden", cfg.train.model.dino_hidden},
                {"dino_proto", cfg.train.model.dino_proto},
                {"n_part_classes", cfg.train.model.n_part_classes},
                {"n_attr_logits", cfg.train.model.n_attr_logits},
                {"moe",
                 {{"n_experts", cfg.train.model.moe.n_experts},
                  {"k_top", cfg.train.model.moe.k_top},
                  {"noise_enabled", cfg.train.model.moe.noise_enabled},
                  {"renormalize_after_topk",
                   cfg.train.model.moe.renormalize_after_topk}}}};
  j["synthetic"] = {{"count", cfg.synthetic_count},
                    {"cell", cfg.synthetic.cell},
                    {"parts_per_image", cfg.synthetic.parts_per_image},
                    {"background_fraction", cfg.synthetic.background_fraction},
                    {"seed", cfg.synthetic.seed}};
  j["pipeline"] = {{"granularities", cfg.granularities.candidates},
                   {"semantic_threshold", cfg.semantic_threshold}};
  j["oracle"] = {{"seed", cfg.oracle_seed}, {"dim", cfg.oracle_dim}};
  if (!cfg.vocabulary_path.empty()) j["vocabulary"] = cfg.vocabulary_path;
  if (!cfg.schema_path.empty()) j["attribute_schema"] = cfg.schema_path;
  return j.dump(1) + "\n";
}

PipelineConfig make_pipeline_config(const ExperimentConfig& cfg) {
  PipelineConfig p;
  p.stage = StageShape{cfg.oracle_dim,
                       cfg.train.model.image_h / cfg.train.model.patch,
                       cfg.train.model.image_w / cfg.train.model.patch, 0};
  p.granularities = cfg.granularities;
  p.semantic_threshold = cfg.semantic_threshold;
  return p;
}

OracleSpec make_oracle_spec(const ExperimentConfig& cfg) {
  return make_default_oracle_spec(cfg.oracle_seed, cfg.oracle_dim,
                                  cfg.vocabulary.names(),
                                  cfg.train.schema.all_value_names());
}

}  // namespace clasp
