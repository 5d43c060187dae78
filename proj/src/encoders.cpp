#include "clasp/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clasp/kernels.hpp"
#include "clasp/rng.hpp"

namespace clasp {
namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Case-insensitive whole-word containment ("arm" does not match "warm").
bool contains_concept(const std::string& text_lc, const std::string& name_lc) {
  std::size_t pos = 0;
  while ((pos = text_lc.find(name_lc, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(text_lc[pos - 1]);
    const std::size_t end = pos + name_lc.size();
    const bool right_ok = end >= text_lc.size() || !is_word_char(text_lc[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

void normalize(EmbeddingVector& v) {
  const double n = std::sqrt(kern::sumsq(v.data(), v.size()));
  if (n == 0.0) throw EmbedError("cannot normalize zero vector");
  kern::scal(1.0 / n, v.data(), v.size());
}

std::string hex_color(const PaletteEntry& p) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", p.r, p.g, p.b);
  return buf;
}

PaletteEntry parse_hex_color(const std::string& hex, const std::string& concept_name) {
  if (hex.size() != 7 || hex[0] != '#')
    throw DataError("bad palette color: " + hex);
  auto byte = [&](std::size_t i) {
    return static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16));
  };
  return PaletteEntry{byte(1), byte(3), byte(5), concept_name};
}

}  // namespace

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size())
    throw EmbedError("cosine_similarity: dimension mismatch");
  const double na = std::sqrt(kern::sumsq(a.data(), a.size()));
  const double nb = std::sqrt(kern::sumsq(b.data(), b.size()));
  if (na == 0.0 || nb == 0.0)
    throw EmbedError("cosine_similarity: zero-norm input");
  return kern::dot(a.data(), b.data(), a.size()) / (na * nb);
}

const EmbeddingVector* OracleSpec::find(const std::string& concept_name) const {
  for (const auto& [name, vec] : vocabulary)
    if (name == concept_name) return &vec;
  return nullptr;
}

PaletteEntry OracleSpec::color_of(const std::string& concept_name) const {
  for (const auto& p : palette)
    if (p.concept_name == concept_name) return p;
  throw ConfigError("no palette color for concept: " + concept_name);
}

std::vector<PaletteEntry> OracleSpec::colors_of(
    const std::string& concept_name) const {
  std::vector<PaletteEntry> out;
  for (const auto& p : palette)
    if (p.concept_name == concept_name) out.push_back(p);
  if (out.empty())
    throw ConfigError("no palette color for concept: " + concept_name);
  return out;
}

void OracleSpec::validate() const {
  if (vocabulary.empty()) throw ConfigError("oracle vocabulary is empty");
  if (find(person_concept) == nullptr)
    throw ConfigError("oracle vocabulary lacks the reserved person concept");
  for (const auto& [name, vec] : vocabulary) {
    if (vec.size() != dim)
      throw ConfigError("oracle concept '" + name + "' has wrong dimension");
    const double n = std::sqrt(kern::sumsq(vec.data(), vec.size()));
    if (std::abs(n - 1.0) > 1e-6)
      throw ConfigError("oracle concept '" + name + "' is not unit norm");
  }
  // The reserved person hub is exempt: all other concepts carry a controlled
  // component along it by design, which is what lets pooled person images
  // clear the 0.9 semantic gate while argmax stays exact.
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (vocabulary[i].first == person_concept) continue;
    for (std::size_t j = i + 1; j < vocabulary.size(); ++j) {
      if (vocabulary[j].first == person_concept) continue;
      const double c =
          cosine_similarity(vocabulary[i].second, vocabulary[j].second);
      if (c > 0.3 + 1e-9)
        throw ConfigError("oracle concepts '" + vocabulary[i].first + "' and '" +
                          vocabulary[j].first + "' exceed the pairwise bound");
    }
  }
  for (const auto& p : palette)
    if (find(p.concept_name) == nullptr)
      throw ConfigError("palette names unknown concept: " + p.concept_name);
}

std::string OracleSpec::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["dim"] = dim;
  j["person_concept"] = person_concept;
  auto& vocab = j["vocabulary"] = nlohmann::ordered_json::array();
  for (const auto& [name, vec] : vocabulary) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["values"] = vec;
    vocab.push_back(std::move(e));
  }
  auto& pal = j["palette"] = nlohmann::ordered_json::object();
  for (const auto& p : palette) pal[hex_color(p)] = p.concept_name;
  return j.dump(2);
}

OracleSpec OracleSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("oracle spec: invalid JSON: ") + e.what());
  }
  OracleSpec spec;
  try {
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.dim = j.at("dim").get<std::size_t>();
    spec.person_concept = j.at("person_concept").get<std::string>();
    for (const auto& e : j.at("vocabulary"))
      spec.vocabulary.emplace_back(e.at("name").get<std::string>(),
                                   e.at("values").get<EmbeddingVector>());
    for (const auto& [hex, concept_label] : j.at("palette").items())
      spec.palette.push_back(parse_hex_color(hex, concept_label.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("oracle spec: missing or bad field: ") + e.what());
  }
  spec.validate();
  return spec;
}

void OracleSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path);
  out << to_json() << "\n";
}

OracleSpec OracleSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

OracleEmbedder::OracleEmbedder(OracleSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  palette_vectors_.reserve(spec_.palette.size());
  for (const auto& p : spec_.palette) palette_vectors_.push_back(spec_.find(p.concept_name));
}

const EmbeddingVector& OracleEmbedder::concept_vector(const std::string& name) const {
  const EmbeddingVector* v = spec_.find(name);
  if (v == nullptr) throw EmbedError("unknown concept: " + name);
  return *v;
}

std::size_t OracleEmbedder::palette_index(double r, double g, double b) const {
  const double pr = r * 255.0, pg = g * 255.0, pb = b * 255.0;
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < spec_.palette.size(); ++i) {
    const auto& p = spec_.palette[i];
    const double dr = pr - p.r, dg = pg - p.g, db = pb - p.b;
    const double d = dr * dr + dg * dg + db * db;
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

FeatureMap OracleEmbedder::extract_feature_map(const ImageRGB& image,
                                               const StageShape& stage) const {
  if (stage.c != spec_.dim)
    throw ConfigError("oracle provides dimension " + std::to_string(spec_.dim) +
                      " tokens, stage config asks for " + std::to_string(stage.c));
  if (stage.h == 0 || stage.w == 0 || stage.h > image.h || stage.w > image.w)
    throw ConfigError("stage token grid does not fit the image");
  FeatureMap fm(stage.c, stage.h, stage.w, stage.stage_id);
  EmbeddingVector acc(spec_.dim);
  for (std::size_t ty = 0; ty < stage.h; ++ty) {
    const std::size_t y0 = ty * image.h / stage.h;
    const std::size_t y1 = (ty + 1) * image.h / stage.h;
    for (std::size_t tx = 0; tx < stage.w; ++tx) {
      const std::size_t x0 = tx * image.w / stage.w;
      const std::size_t x1 = (tx + 1) * image.w / stage.w;
      std::fill(acc.begin(), acc.end(), 0.0);
      std::size_t count = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          if (image.is_zero(y, x)) continue;
          const double* px = image.at(y, x);
          const EmbeddingVector* cv =
              palette_vectors_[palette_index(px[0], px[1], px[2])];
          kern::axpy(1.0, cv->data(), acc.data(), acc.size());
          ++count;
        }
      // A fully blank cell yields the zero token; downstream treats it as
      // contentless rather than erroring (only whole-region embeddings do).
      if (count > 0) {
        kern::scal(1.0 / static_cast<double>(count), acc.data(), acc.size());
        normalize(acc);
      }
      for (std::size_t ch = 0; ch < spec_.dim; ++ch)
        fm.at(ch, ty, tx) = acc[ch];
    }
  }
  return fm;
}

EmbeddingVector OracleEmbedder::embed_image_region(const ImageRGB& image) const {
  EmbeddingVector acc(spec_.dim, 0.0);
  std::size_t count = 0;
  for (std::size_t y = 0; y < image.h; ++y)
    for (std::size_t x = 0; x < image.w; ++x) {
      if (image.is_zero(y, x)) continue;
      const double* px = image.at(y, x);
      kern::axpy(1.0, palette_vectors_[palette_index(px[0], px[1], px[2])]->data(),
                 acc.data(), acc.size());
      ++count;
    }
  if (count == 0) throw EmbedError("empty region: no nonzero pixel to embed");
  kern::scal(1.0 / static_cast<double>(count), acc.data(), acc.size());
  normalize(acc);
  return acc;
}

EmbeddingVector OracleEmbedder::embed_text(const std::string& text) const {
  if (text.empty()) throw EmbedError("embed_text: empty string");
  const std::string text_lc = lower(text);
  std::vector<const std::string*> hits;
  for (const auto& [name, vec] : spec_.vocabulary) {
    (void)vec;
    if (contains_concept(text_lc, lower(name))) hits.push_back(&name);
  }
  // Prompts like "a photo of a person's hair" mention the person hub and a
  // concept; the specific concept wins. Bare "a photo of a person" resolves
  // to the hub itself.
  if (hits.size() > 1) {
    std::erase_if(hits, [&](const std::string* n) { return *n == spec_.person_concept; });
  }
  if (hits.empty()) throw EmbedError("embed_text: no known concept in: " + text);
  if (hits.size() > 1)
    throw EmbedError("embed_text: ambiguous concepts in: " + text);
  return *spec_.find(*hits[0]);
}

OracleSpec make_default_oracle_spec(std::uint64_t seed, std::size_t dim,
                                    const std::vector<std::string>& parts,
                                    const std::vector<std::string>& attribute_values) {
  const std::size_t n_base = 2 + parts.size() + attribute_values.size();
  if (n_base > dim)
    throw ConfigError("oracle dimension " + std::to_string(dim) +
                      " too small for " + std::to_string(n_base) + " concepts");

  // Orthonormal base via Gaussian draws + modified Gram-Schmidt. With
  // n_base <= dim this is exact, which is what makes every argmax below a
  // closed-form fact rather than a tolerance.
  Rng rng = Rng(seed).derive("oracle-base");
  std::vector<EmbeddingVector> base;
  base.reserve(n_base);
  while (base.size() < n_base) {
    EmbeddingVector v = rng.normal_vec(dim, 0.0, 1.0);
    for (const auto& u : base)
      kern::axpy(-kern::dot(v.data(), u.data(), dim), u.data(), v.data(), dim);
    const double n = std::sqrt(kern::sumsq(v.data(), dim));
    if (n < 1e-6) continue;  // essentially impossible; redraw
    kern::scal(1.0 / n, v.data(), dim);
    base.push_back(std::move(v));
  }

  OracleSpec spec;
  spec.seed = seed;
  spec.dim = dim;
  const EmbeddingVector& person = base[0];
  const EmbeddingVector& background = base[1];
  spec.vocabulary.emplace_back(spec.person_concept, person);
  spec.vocabulary.emplace_back("background", background);

  const double blend = kConceptBlend;
  const double priv = std::sqrt(1.0 - blend * blend);
  std::size_t next = 2;
  auto add_blended = [&](const std::string& name) {
    EmbeddingVector v(dim);
    for (std::size_t i = 0; i < dim; ++i)
      v[i] = blend * person[i] + priv * base[next][i];
    ++next;
    normalize(v);
    spec.vocabulary.emplace_back(name, v);
  };
  for (const auto& p : parts) add_blended(p);
  for (const auto& a : attribute_values) add_blended(a);

  // Palette colors sit on a coarse RGB lattice, pairwise at least 60 apart
  // and none near black (the "no content" marker), so nearest-color lookup is
  // unambiguous even after 8-bit quantization and mild view jitter. Concepts
  // get alias shades — distinct render colors that resolve to the same
  // concept — so rendered images can differ where their semantics do not;
  // sample separability is what the distillation task trains on. Person and
  // background carry most image area and get the most shades.
  const std::uint8_t lv[4] = {40, 100, 160, 220};
  auto slot = [&](std::size_t s) {
    const std::size_t k = (s * 37) % 64;  // 37 is coprime to 64: a permutation
    return std::array<std::uint8_t, 3>{lv[k / 16], lv[(k / 4) % 4], lv[k % 4]};
  };
  std::size_t next_slot = 0;
  auto add_color = [&](const std::string& name) {
    if (next_slot >= 64) throw ConfigError("oracle palette lattice exhausted");
    const auto c = slot(next_slot++);
    spec.palette.push_back(PaletteEntry{c[0], c[1], c[2], name});
  };
  for (const auto& [name, vec] : spec.vocabulary) {
    (void)vec;
    add_color(name);
  }
  for (std::size_t s = 0; s + 1 < 6; ++s) {
    add_color(spec.person_concept);
    add_color("background");
  }
  for (const auto& a : attribute_values) add_color(a);
  for (const auto& p : parts) add_color(p);
  spec.validate();
  return spec;
}

}  // namespace clasp
