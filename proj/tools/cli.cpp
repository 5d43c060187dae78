#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clasp/config.hpp"
#include "clasp/diagnostics.hpp"
#include "clasp/error.hpp"
#include "clasp/image.hpp"
#include "clasp/metrics.hpp"
#include "clasp/synthetic.hpp"
#include "clasp/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::string zero_pad(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw clasp::DataError("cannot open for writing: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw clasp::DataError("write failed: " + path);
}

clasp::ExperimentConfig load_config(const std::string& path) {
  clasp::ExperimentConfig cfg = clasp::load_experiment_config(path);
  if (const char* env = std::getenv("CLASP_SEED")) {
    const std::string s(env);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw clasp::ConfigError("CLASP_SEED must be a nonnegative integer");
    cfg.train.seed = std::stoull(s);
  }
  return cfg;
}

clasp::GrayImage to_gray(const clasp::PartLabelMap& map) {
  clasp::GrayImage g(map.h, map.w);
  g.px = map.labels;
  return g;
}

const char* reason_name(clasp::RejectReason r) {
  switch (r) {
    case clasp::RejectReason::None:
      return "none";
    case clasp::RejectReason::SpatialFilter:
      return "spatial_filter";
    case clasp::RejectReason::SemanticFilter:
      return "semantic_filter";
    case clasp::RejectReason::Degenerate:
      return "degenerate";
  }
  return "unknown";
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t prev = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t cur = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1,
                         prev + (a[i - 1] == b[j - 1] ? 0 : 1)});
      prev = cur;
    }
  }
  return row[b.size()];
}

int run_gen_data(const std::string& config_path, const std::string& out,
                 long count, long long seed) {
  clasp::ExperimentConfig cfg = load_config(config_path);
  if (count > 0) cfg.synthetic_count = static_cast<std::size_t>(count);
  if (seed >= 0) cfg.synthetic.seed = static_cast<unsigned long long>(seed);
  cfg.validate();

  const clasp::OracleSpec spec = clasp::make_oracle_spec(cfg);
  const auto data = clasp::generate_synthetic_dataset(
      cfg.synthetic_count, cfg.synthetic, spec, cfg.vocabulary,
      cfg.train.schema);

  fs::create_directories(out);
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string img_name = "img_" + zero_pad(i) + ".ppm";
    const std::string map_name = "map_" + zero_pad(i) + ".pgm";
    clasp::write_ppm(data[i].image, out + "/" + img_name);
    clasp::write_pgm(to_gray(data[i].part_map), out + "/" + map_name);
    nlohmann::ordered_json attrs = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < data[i].attrs.size(); ++k) {
      const clasp::AttributeLabel& a = data[i].attrs[k];
      nlohmann::ordered_json aj;
      aj["name"] = cfg.train.schema.attributes[k].name;
      aj["known"] = a.known;
      if (a.known) {
        aj["value"] = cfg.train.schema.attributes[k]
                          .values[static_cast<std::size_t>(a.value_index)];
        aj["value_index"] = a.value_index;
      }
      attrs.push_back(std::move(aj));
    }
    images.push_back({{"image", img_name},
                      {"map", map_name},
                      {"has_person", data[i].has_person},
                      {"attributes", attrs}});
  }
  nlohmann::ordered_json manifest;
  manifest["count"] = data.size();
  manifest["images"] = images;
  write_text_file(out + "/dataset.json", manifest.dump(1) + "\n");
  std::cout << "wrote " << data.size() << " samples to " << out << "\n";
  return 0;
}

int run_pseudo_label(const std::string& config_path, const std::string& out,
                     const std::string& images_dir) {
  clasp::ExperimentConfig cfg = load_config(config_path);
  const clasp::OracleSpec spec = clasp::make_oracle_spec(cfg);
  const clasp::OracleEmbedder emb(spec);
  const clasp::PipelineConfig pipe = clasp::make_pipeline_config(cfg);

  std::vector<std::pair<std::string, clasp::ImageRGB>> images;
  if (!images_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir))
      if (e.is_regular_file() && e.path().extension() == ".ppm")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw clasp::DataError("no .ppm images in " + images_dir);
    for (const fs::path& f : files)
      images.emplace_back(f.filename().string(), clasp::read_ppm(f.string()));
  } else {
    auto data = clasp::generate_synthetic_dataset(
        cfg.synthetic_count, cfg.synthetic, spec, cfg.vocabulary,
        cfg.train.schema);
    for (std::size_t i = 0; i < data.size(); ++i)
      images.emplace_back("synthetic_" + zero_pad(i),
                          std::move(data[i].image));
  }

  fs::create_directories(out);
  clasp::Rng root(cfg.train.seed);
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    clasp::Rng rng = root.derive("pseudo-label", i);
    const auto outcome = clasp::generate_part_labels(
        images[i].second, pipe, cfg.vocabulary, emb, emb, rng);
    const auto attrs =
        clasp::assign_attribute_labels(images[i].second, cfg.train.schema, emb);

    nlohmann::ordered_json e;
    e["image"] = images[i].first;
    e["accepted"] = outcome.accepted;
    e["reason"] = reason_name(outcome.reason);
    if (outcome.accepted) {
      ++accepted;
      e["granularity"] = outcome.granularity;
      const std::string map_name = "pl_map_" + zero_pad(i) + ".pgm";
      clasp::write_pgm(to_gray(outcome.map), out + "/" + map_name);
      e["map"] = map_name;
      nlohmann::ordered_json regions = nlohmann::ordered_json::array();
      for (const clasp::PartAssignment& r : outcome.regions)
        regions.push_back(
            {{"label_id", r.label_id},
             {"name",
              cfg.vocabulary.entries[static_cast<std::size_t>(r.label_id - 1)]
                  .name},
             {"score", r.score}});
      e["regions"] = regions;
    }
    nlohmann::ordered_json attrs_j = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < attrs.labels.size(); ++k) {
      const clasp::AttributeLabel& a = attrs.labels[k];
      nlohmann::ordered_json aj;
      aj["name"] = cfg.train.schema.attributes[k].name;
      aj["known"] = a.known;
      if (a.known)
        aj["value"] = cfg.train.schema.attributes[k]
                          .values[static_cast<std::size_t>(a.value_index)];
      aj["score"] = a.score;
      attrs_j.push_back(std::move(aj));
    }
    e["attributes"] = attrs_j;
    entries.push_back(std::move(e));
  }
  nlohmann::ordered_json top;
  top["count"] = images.size();
  top["accepted"] = accepted;
  top["images"] = entries;
  write_text_file(out + "/labels.json", top.dump(1) + "\n");
  std::cout << "accepted " << accepted << "/" << images.size() << " images\n";
  return 0;
}

int run_pretrain(const std::string& config_path, const std::string& out,
                 long steps, bool deterministic, const std::string& resume,
                 const std::string& warm_start) {
  clasp::ExperimentConfig cfg = load_config(config_path);
  if (steps > 0) cfg.train.steps = steps;
  if (deterministic) cfg.train.deterministic = true;
  if (!warm_start.empty()) cfg.train.warm_start_checkpoint = warm_start;
  cfg.validate();

  const clasp::OracleSpec spec = clasp::make_oracle_spec(cfg);
  const clasp::OracleEmbedder emb(spec);
  const auto raw = clasp::generate_synthetic_dataset(
      cfg.synthetic_count, cfg.synthetic, spec, cfg.vocabulary,
      cfg.train.schema);
  const clasp::TrainingData data = clasp::make_training_samples(
      raw, clasp::make_pipeline_config(cfg), cfg.vocabulary, cfg.train.schema,
      emb, cfg.train.model, cfg.train.seed);
  std::cout << "training set: " << data.samples.size() << " samples, "
            << data.n_part_known << " with part labels, " << data.n_attr_known
            << " with attributes\n";

  const std::string snapshot = clasp::experiment_config_to_json(cfg);
  const clasp::PretrainResult res =
      clasp::run_pretraining(cfg.train, data.samples, out, snapshot, resume);
  if (!res.history.empty()) {
    const clasp::MetricsRow& last = res.history.back();
    std::printf("step %ld: total %.6f (dino %.6f part %.6f attr %.6f bal %.6f)\n",
                last.step, last.losses.total, last.losses.dino,
                last.losses.part, last.losses.attribute,
                last.losses.balancing);
  }
  std::cout << "checkpoint: " << res.checkpoint_path << "\n";
  if (!res.metrics_path.empty())
    std::cout << "metrics: " << res.metrics_path << "\n";
  if (!res.trace_path.empty())
    std::cout << "trace: " << res.trace_path << "\n";
  return 0;
}

int run_diagnose(const std::string& trace_path, const std::string& out) {
  const clasp::DiagnosticsTrace trace = clasp::load_trace(trace_path);
  const std::string report = clasp::diagnostics_report_json(trace);
  if (!out.empty()) write_text_file(out, report);
  std::cout << report;
  return 0;
}

int run_export(const std::string& metrics_path, const std::string& out) {
  const clasp::MetricsTable table = clasp::read_metrics_csv(metrics_path);
  fs::create_directories(out);
  write_text_file(out + "/metrics.csv", clasp::metrics_table_to_csv(table));
  write_text_file(out + "/summary.json",
                  clasp::metrics_table_summary_json(table));
  std::cout << "exported " << table.rows.size() << " rows to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> known = {"gen-data", "pseudo-label",
                                          "pretrain", "diagnose", "export"};
  if (argc >= 2 && argv[1][0] != '-') {
    const std::string given = argv[1];
    if (std::find(known.begin(), known.end(), given) == known.end()) {
      std::cerr << "error: unknown command '" << given << "'\n";
      std::size_t best = std::string::npos;
      std::string suggestion;
      for (const std::string& k : known) {
        const std::size_t d = edit_distance(given, k);
        if (d < best) {
          best = d;
          suggestion = k;
        }
      }
      if (best <= 3) std::cerr << "did you mean '" << suggestion << "'?\n";
      return 2;
    }
  }

  CLI::App app{"self-supervised person pre-training workbench"};
  app.require_subcommand(1);

  std::string gd_config, gd_out;
  long gd_count = 0;
  long long gd_seed = -1;
  CLI::App* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
  gen->add_option("--config", gd_config, "experiment config JSON")->required();
  gen->add_option("--out", gd_out, "output directory")->required();
  gen->add_option("--count", gd_count, "override sample count");
  gen->add_option("--seed", gd_seed, "override the generator seed");

  std::string pl_config, pl_out, pl_images;
  CLI::App* pl = app.add_subcommand(
      "pseudo-label", "generate part and attribute labels for images");
  pl->add_option("--config", pl_config, "experiment config JSON")->required();
  pl->add_option("--out", pl_out, "output directory")->required();
  pl->add_option("--images", pl_images,
                 "directory of .ppm inputs (default: synthesize)");

  std::string pt_config, pt_out, pt_resume, pt_warm;
  long pt_steps = 0;
  bool pt_det = false;
  CLI::App* pt = app.add_subcommand("pretrain", "run the training loop");
  pt->add_option("--config", pt_config, "experiment config JSON")->required();
  pt->add_option("--out", pt_out, "output directory")->required();
  pt->add_option("--steps", pt_steps, "override the step count");
  pt->add_flag("--deterministic", pt_det,
               "clean gates and zeroed timings; reruns are byte-identical");
  pt->add_option("--resume", pt_resume, "continue from this checkpoint");
  pt->add_option("--warm-start", pt_warm,
                 "load weights from this checkpoint, then train all "
                 "objectives at reduced lr");

  std::string dg_trace, dg_out;
  CLI::App* dg = app.add_subcommand(
      "diagnose", "conflict and routing report from a gradient trace");
  dg->add_option("--trace", dg_trace, "trace JSON from a training run")
      ->required();
  dg->add_option("--out", dg_out, "also write the report here");

  std::string ex_metrics, ex_out;
  CLI::App* ex =
      app.add_subcommand("export", "re-emit a metrics CSV and its summary");
  ex->add_option("--metrics", ex_metrics, "metrics.csv from a training run")
      ->required();
  ex->add_option("--out", ex_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(gd_config, gd_out, gd_count, gd_seed);
    if (pl->parsed()) return run_pseudo_label(pl_config, pl_out, pl_images);
    if (pt->parsed())
      return run_pretrain(pt_config, pt_out, pt_steps, pt_det, pt_resume,
                          pt_warm);
    if (dg->parsed()) return run_diagnose(dg_trace, dg_out);
    if (ex->parsed()) return run_export(ex_metrics, ex_out);
  } catch (const clasp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
