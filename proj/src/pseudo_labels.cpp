#include "clasp/pseudo_labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clasp/kernels.hpp"

namespace clasp {
namespace {

double sq_dist(const EmbeddingVector& a, const EmbeddingVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

// Guarded cosine for filter logic: degenerate vectors simply rank lowest.
double person_similarity(const EmbeddingVector& v, const EmbeddingVector& person) {
  const double n = std::sqrt(kern::sumsq(v.data(), v.size()));
  if (n == 0.0) return -1.0;
  return kern::dot(v.data(), person.data(), v.size()) / n;
}

struct KmeansResult {
  std::vector<std::size_t> assignment;
  std::vector<EmbeddingVector> centroids;
};

// Lloyd iterations with stable-assignment stop. init_far_pair=true seeds with
// the two mutually farthest points (used by the 2-means filter, which gets no
// RNG); otherwise k-means++ draws from `rng`. Tie-breaks are all lowest-index.
// Empty clusters steal the farthest member of the largest cluster so every
// emitted cluster is nonempty.
KmeansResult kmeans(const std::vector<EmbeddingVector>& pts, std::size_t k,
                    Rng* rng, bool init_far_pair) {
  const std::size_t n = pts.size();
  const std::size_t dim = pts[0].size();
  std::vector<EmbeddingVector> centers;
  centers.reserve(k);

  if (init_far_pair) {
    std::size_t bi = 0, bj = 1;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = sq_dist(pts[i], pts[j]);
        if (d > best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    centers.push_back(pts[bi]);
    centers.push_back(pts[bj]);
  } else {
    centers.push_back(pts[rng->uniform_int(n)]);
    std::vector<double> d2(n);
    while (centers.size() < k) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double best = sq_dist(pts[i], centers[0]);
        for (std::size_t c = 1; c < centers.size(); ++c)
          best = std::min(best, sq_dist(pts[i], centers[c]));
        d2[i] = best;
        total += best;
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        const double r = rng->uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc > r) {
            pick = i;
            break;
          }
        }
      } else {
        // All remaining mass is zero (duplicate points); cycle indices.
        pick = centers.size() % n;
      }
      centers.push_back(pts[pick]);
    }
  }

  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best_c = 0;
      double best_d = sq_dist(pts[i], centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c) {
        const double d = sq_dist(pts[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best_c = c;
        }
      }
      if (assign[i] != best_c) {
        assign[i] = best_c;
        changed = true;
      }
    }

    std::vector<std::size_t> count(k, 0);
    for (const std::size_t a : assign) ++count[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      std::size_t donor = 0;
      for (std::size_t d = 1; d < k; ++d)
        if (count[d] > count[donor]) donor = d;
      std::size_t steal = n;
      double far = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] != donor) continue;
        const double d = sq_dist(pts[i], centers[donor]);
        if (d > far) {
          far = d;
          steal = i;
        }
      }
      assign[steal] = c;
      --count[donor];
      ++count[c];
      changed = true;
    }

    for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      kern::axpy(1.0, pts[i].data(), centers[assign[i]].data(), dim);
    for (std::size_t c = 0; c < k; ++c)
      kern::scal(1.0 / static_cast<double>(count[c]), centers[c].data(), dim);

    if (!changed) break;
  }
  return {std::move(assign), std::move(centers)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path);
  out << text;
}

}  // namespace

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (const auto v : values) n += v;
  return n;
}

void PartVocabulary::validate() const {
  if (entries.size() < 2) throw ConfigError("part vocabulary needs >= 2 entries");
  if (entries.size() > 255)
    throw ConfigError("part vocabulary exceeds 8-bit label space");
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.name.empty()) throw ConfigError("empty part name");
    if (!seen.insert(e.name).second)
      throw ConfigError("duplicate part name: " + e.name);
  }
}

PartVocabulary PartVocabulary::defaults() {
  PartVocabulary v;
  for (const char* name :
       {"hair", "face", "arm", "shirt", "pants", "legs", "shoes"})
    v.entries.push_back({name, std::string("a photo of a person's ") + name});
  return v;
}

PartVocabulary PartVocabulary::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
  PartVocabulary v;
  try {
    for (const auto& e : j.at("parts")) {
      Entry entry;
      entry.name = e.at("name").get<std::string>();
      entry.prompt = e.contains("prompt")
                         ? e.at("prompt").get<std::string>()
                         : "a photo of a person's " + entry.name;
      v.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad part vocabulary: " + e.what());
  }
  v.validate();
  return v;
}

void PartVocabulary::save(const std::string& path) const {
  nlohmann::ordered_json j;
  auto& arr = j["parts"] = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    arr.push_back({{"name", e.name}, {"prompt", e.prompt}});
  write_file(path, j.dump(2) + "\n");
}

std::vector<std::string> PartVocabulary::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.name);
  return out;
}

std::string AttributeSchema::Attribute::prompt(std::size_t value_index) const {
  const std::size_t slot = prompt_template.find("{}");
  std::string out = prompt_template;
  return out.replace(slot, 2, values.at(value_index));
}

void AttributeSchema::validate() const {
  if (attributes.empty()) throw ConfigError("attribute schema is empty");
  std::set<std::string> names, value_names;
  for (const auto& a : attributes) {
    if (!names.insert(a.name).second)
      throw ConfigError("duplicate attribute name: " + a.name);
    if (a.values.size() < 2)
      throw ConfigError("attribute '" + a.name + "' needs >= 2 candidate labels");
    const std::size_t slot = a.prompt_template.find("{}");
    if (slot == std::string::npos ||
        a.prompt_template.find("{}", slot + 1) != std::string::npos)
      throw ConfigError("attribute '" + a.name +
                        "' template must contain exactly one {} slot");
    for (const auto& v : a.values)
      if (!value_names.insert(v).second)
        throw ConfigError("duplicate attribute value across schema: " + v);
  }
}

std::size_t AttributeSchema::total_values() const {
  std::size_t n = 0;
  for (const auto& a : attributes) n += a.values.size();
  return n;
}

AttributeSchema AttributeSchema::defaults() {
  AttributeSchema s;
  s.attributes.push_back(
      {"gender", "A photo of a {} person.", {"Female", "Male"}});
  s.attributes.push_back({"sleeve length",
                          "A photo of a person wearing a {}.",
                          {"Long Sleeve", "Short Sleeve"}});
  s.attributes.push_back({"lower-body wear",
                          "A photo of a person wearing {}.",
                          {"Trousers", "Shorts", "Skirt"}});
  return s;
}

AttributeSchema AttributeSchema::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
  AttributeSchema s;
  try {
    for (const auto& e : j.at("attributes")) {
      Attribute a;
      a.name = e.at("name").get<std::string>();
      a.prompt_template = e.at("template").get<std::string>();
      a.values = e.at("values").get<std::vector<std::string>>();
      s.attributes.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad attribute schema: " + e.what());
  }
  s.validate();
  return s;
}

void AttributeSchema::save(const std::string& path) const {
  nlohmann::ordered_json j;
  auto& arr = j["attributes"] = nlohmann::ordered_json::array();
  for (const auto& a : attributes)
    arr.push_back({{"name", a.name},
                   {"template", a.prompt_template},
                   {"values", a.values}});
  write_file(path, j.dump(2) + "\n");
}

std::vector<std::string> AttributeSchema::all_value_names() const {
  std::vector<std::string> out;
  for (const auto& a : attributes)
    out.insert(out.end(), a.values.begin(), a.values.end());
  return out;
}

void GranularitySet::validate() const {
  if (candidates.empty()) throw ConfigError("granularity set is empty");
  for (const std::size_t l : candidates)
    if (l < 2) throw ConfigError("granularity candidates must be >= 2");
  if (!std::is_sorted(candidates.begin(), candidates.end()))
    throw ConfigError("granularity candidates must be ascending");
}

SpatialFilterOutcome spatial_filter(const FeatureMap& fm, const JointEmbedder& clip) {
  SpatialFilterOutcome out;
  const std::size_t n = fm.tokens();
  std::vector<EmbeddingVector> tokens(n);
  for (std::size_t t = 0; t < n; ++t) tokens[t] = fm.token(t);
  const EmbeddingVector person = clip.embed_text(kPersonPrompt);

  bool all_identical = true;
  for (std::size_t t = 1; t < n && all_identical; ++t)
    all_identical = tokens[t] == tokens[0];

  if (all_identical) {
    // One cluster only. A person-like cluster is all foreground; anything
    // else cannot be split, so reject with a diagnostic.
    if (person_similarity(tokens[0], person) > 0.5) {
      out.pass = true;
      out.fg_fraction = 1.0;
      out.fg = BinaryMask(fm.h, fm.w, 0);
      std::fill(out.fg.values.begin(), out.fg.values.end(), 1);
    } else {
      out.pass = false;
      out.fg = BinaryMask(fm.h, fm.w, 0);
      out.diagnostic = "degenerate: all tokens identical and not person-like";
    }
    return out;
  }

  const KmeansResult km = kmeans(tokens, 2, nullptr, true);
  const double sim0 = person_similarity(km.centroids[0], person);
  const double sim1 = person_similarity(km.centroids[1], person);
  const std::size_t fg_cluster = sim1 > sim0 ? 1 : 0;

  out.fg = BinaryMask(fm.h, fm.w, static_cast<int>(fg_cluster));
  std::size_t fg_count = 0;
  for (std::size_t t = 0; t < n; ++t)
    if (km.assignment[t] == fg_cluster) {
      out.fg.values[t] = 1;
      ++fg_count;
    }
  out.fg_fraction = static_cast<double>(fg_count) / static_cast<double>(n);
  // "Over half" is strict; integer arithmetic keeps the boundary exact.
  out.pass = 2 * fg_count > n;
  if (!out.pass) out.diagnostic = "foreground fraction not above one half";
  return out;
}

bool semantic_filter(const ImageRGB& image, const JointEmbedder& clip,
                     double threshold) {
  const EmbeddingVector z = clip.embed_image_region(image);
  const EmbeddingVector person = clip.embed_text(kPersonPrompt);
  return cosine_similarity(z, person) > threshold;
}

std::size_t sample_granularity(const GranularitySet& s, Rng& rng) {
  s.validate();
  return s.candidates[rng.uniform_int(s.candidates.size())];
}

std::vector<BinaryMask> cluster_foreground(const FeatureMap& fm,
                                           const BinaryMask& fg, std::size_t l,
                                           Rng& rng) {
  if (l == 0) throw ConfigError("granularity must be positive");
  std::vector<std::size_t> fg_index;
  for (std::size_t t = 0; t < fg.values.size(); ++t)
    if (fg.values[t] != 0) fg_index.push_back(t);
  if (fg_index.size() < l)
    throw GranularityError("foreground has " + std::to_string(fg_index.size()) +
                           " tokens, fewer than granularity " + std::to_string(l));

  std::vector<BinaryMask> masks;
  masks.reserve(l);
  if (l == 1) {
    BinaryMask m = fg;
    m.region_id = 0;
    masks.push_back(std::move(m));
    return masks;
  }

  std::vector<EmbeddingVector> pts;
  pts.reserve(fg_index.size());
  for (const std::size_t t : fg_index) pts.push_back(fm.token(t));
  const KmeansResult km = kmeans(pts, l, &rng, false);

  for (std::size_t c = 0; c < l; ++c)
    masks.emplace_back(fm.h, fm.w, static_cast<int>(c));
  for (std::size_t i = 0; i < fg_index.size(); ++i)
    masks[km.assignment[i]].values[fg_index[i]] = 1;
  return masks;
}

ImageRGB mask_image(const ImageRGB& image, const BinaryMask& mask) {
  ImageRGB out(image.h, image.w);
  for (std::size_t y = 0; y < image.h; ++y) {
    const std::size_t ty = y * mask.h / image.h;
    for (std::size_t x = 0; x < image.w; ++x) {
      const std::size_t tx = x * mask.w / image.w;
      if (mask.at(ty, tx) != 0) {
        const double* p = image.at(y, x);
        out.set(y, x, p[0], p[1], p[2]);
      }
    }
  }
  return out;
}

std::size_t part_argmax(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = j;
  return best;
}

PartAssignment assign_part_label(const ImageRGB& masked,
                                 const PartVocabulary& vocab,
                                 const JointEmbedder& clip) {
  const EmbeddingVector z = clip.embed_image_region(masked);  // throws on empty
  std::vector<double> scores;
  scores.reserve(vocab.size());
  for (const auto& e : vocab.entries)
    scores.push_back(cosine_similarity(z, clip.embed_text(e.prompt)));
  const std::size_t j = part_argmax(scores);
  return PartAssignment{static_cast<int>(j) + 1, scores[j]};
}

AttributeLabel attribute_decision(const std::vector<double>& scores,
                                  double threshold) {
  AttributeLabel out;
  out.onehot.assign(scores.size(), 0.0);
  int best = -1;
  double best_any = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (k == 0 || scores[k] > best_any) best_any = scores[k];
    if (scores[k] > threshold &&
        (best < 0 || scores[k] > scores[static_cast<std::size_t>(best)]))
      best = static_cast<int>(k);
  }
  if (best >= 0) {
    out.known = true;
    out.value_index = best;
    out.score = scores[static_cast<std::size_t>(best)];
    out.onehot[static_cast<std::size_t>(best)] = 1.0;
  } else {
    out.score = best_any;
  }
  return out;
}

PartLabelMap build_part_label_map(const std::vector<BinaryMask>& masks,
                                  const std::vector<int>& labels,
                                  std::size_t height, std::size_t width) {
  if (masks.size() != labels.size())
    throw ConfigError("build_part_label_map: masks/labels length mismatch");
  PartLabelMap map(height, width);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (labels[i] < 1 || labels[i] > 255)
      throw ConfigError("part label id out of range");
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t ty = y * masks[i].h / height;
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t tx = x * masks[i].w / width;
        if (masks[i].at(ty, tx) == 0) continue;
        if (map.at(y, x) != 0)
          throw Error("internal: overlapping part masks at pixel (" +
                      std::to_string(y) + "," + std::to_string(x) + ")");
        map.at(y, x) = static_cast<std::uint8_t>(labels[i]);
      }
    }
  }
  return map;
}

std::vector<double> onehot_encode(int label, std::size_t k) {
  if (label < 0 || static_cast<std::size_t>(label) >= k)
    throw ConfigError("onehot label out of range");
  std::vector<double> v(k, 0.0);
  v[static_cast<std::size_t>(label)] = 1.0;
  return v;
}

PseudoLabelOutcome generate_part_labels(const ImageRGB& image,
                                        const PipelineConfig& cfg,
                                        const PartVocabulary& vocab,
                                        const FeatureProvider& features,
                                        const JointEmbedder& clip, Rng& rng) {
  PseudoLabelOutcome out;
  const FeatureMap fm = features.extract_feature_map(image, cfg.stage);

  const SpatialFilterOutcome spatial = spatial_filter(fm, clip);
  if (!spatial.pass) {
    out.reason = RejectReason::SpatialFilter;
    return out;
  }
  if (!semantic_filter(image, clip, cfg.semantic_threshold)) {
    out.reason = RejectReason::SemanticFilter;
    return out;
  }

  std::size_t l = sample_granularity(cfg.granularities, rng);
  std::vector<BinaryMask> masks;
  for (;;) {
    try {
      masks = cluster_foreground(fm, spatial.fg, l, rng);
      break;
    } catch (const GranularityError&) {
      // Retry with the next smaller candidate before rejecting outright.
      std::size_t next = 0;
      for (const std::size_t cand : cfg.granularities.candidates)
        if (cand < l && cand > next) next = cand;
      if (next == 0) {
        out.reason = RejectReason::Degenerate;
        return out;
      }
      l = next;
    }
  }

  std::vector<BinaryMask> kept;
  std::vector<int> labels;
  for (auto& mask : masks) {
    try {
      const PartAssignment pa = assign_part_label(mask_image(image, mask), vocab, clip);
      out.regions.push_back(pa);
      kept.push_back(std::move(mask));
      labels.push_back(pa.label_id);
    } catch (const EmbedError&) {
      // Region with no visible content: its pixels stay background.
    }
  }

  out.map = build_part_label_map(kept, labels, image.h, image.w);
  out.accepted = true;
  out.granularity = l;
  return out;
}

AttributeLabelSet assign_attribute_labels(const ImageRGB& image,
                                          const AttributeSchema& schema,
                                          const JointEmbedder& clip) {
  const EmbeddingVector z = clip.embed_image_region(image);
  AttributeLabelSet out;
  out.labels.reserve(schema.attributes.size());
  for (const auto& attr : schema.attributes) {
    std::vector<double> scores;
    scores.reserve(attr.values.size());
    for (std::size_t k = 0; k < attr.values.size(); ++k)
      scores.push_back(cosine_similarity(z, clip.embed_text(attr.prompt(k))));
    out.labels.push_back(attribute_decision(scores, 0.5));
  }
  return out;
}

}  // namespace clasp
