#pragma once

// Embedding providers: a token-grid feature extractor (stand-in for a frozen
// self-distilled ViT) and a joint image/text embedder (stand-in for a
// contrastive image-text model), plus the deterministic color-keyed oracle
// used by every exact test.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "clasp/error.hpp"
#include "clasp/image.hpp"

namespace clasp {

using EmbeddingVector = std::vector<double>;

// Token grid [c, h, w], row-major with channel outermost.
struct FeatureMap {
  std::size_t c = 0, h = 0, w = 0;
  int stage_id = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(std::size_t c_, std::size_t h_, std::size_t w_, int stage = 0)
      : c(c_), h(h_), w(w_), stage_id(stage), values(c_ * h_ * w_, 0.0) {}

  std::size_t tokens() const { return h * w; }
  double& at(std::size_t ch, std::size_t y, std::size_t x) {
    return values[(ch * h + y) * w + x];
  }
  double at(std::size_t ch, std::size_t y, std::size_t x) const {
    return values[(ch * h + y) * w + x];
  }
  // Token vector (length c) for grid position t = y*w + x.
  EmbeddingVector token(std::size_t t) const {
    EmbeddingVector v(c);
    for (std::size_t ch = 0; ch < c; ++ch) v[ch] = values[ch * h * w + t];
    return v;
  }
};

struct StageShape {
  std::size_t c = 0, h = 0, w = 0;
  int stage_id = 0;
};

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Token features for the label pipeline.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual FeatureMap extract_feature_map(const ImageRGB& image,
                                         const StageShape& stage) const = 0;
};

// Joint image/text embedding space.
class JointEmbedder {
 public:
  virtual ~JointEmbedder() = default;
  virtual EmbeddingVector embed_image_region(const ImageRGB& image) const = 0;
  virtual EmbeddingVector embed_text(const std::string& text) const = 0;
  virtual std::size_t dim() const = 0;
};

struct PaletteEntry {
  std::uint8_t r = 0, g = 0, b = 0;
  std::string concept_name;
};

// Everything the oracle needs, serializable to JSON. `vocabulary` holds unit
// vectors; the entry named by `person_concept` is the reserved hub the other
// concepts correlate with (others are pairwise ≤ 0.3 by construction, the hub
// is exempt — see validate()).
struct OracleSpec {
  std::uint64_t seed = 7;
  std::size_t dim = 16;
  std::string person_concept = "person";
  std::vector<std::pair<std::string, EmbeddingVector>> vocabulary;
  std::vector<PaletteEntry> palette;

  const EmbeddingVector* find(const std::string& concept_name) const;
  // Color for a concept (first palette entry naming it).
  PaletteEntry color_of(const std::string& concept_name) const;
  // All palette entries for one concept, base shade first.
  std::vector<PaletteEntry> colors_of(const std::string& concept_name) const;
  // Pairwise-cosine bound over non-reserved entries, unit norms, palette
  // names resolvable. Throws ConfigError on violation.
  void validate() const;

  std::string to_json() const;
  static OracleSpec from_json(const std::string& text);
  void save(const std::string& path) const;
  static OracleSpec load(const std::string& path);
};

// Deterministic color-keyed embedder: each pixel maps to its palette
// concept's vector; regions embed as the L2-normalized mean over nonzero
// pixels; text embeds by vocabulary lookup of the contained concept name.
class OracleEmbedder : public FeatureProvider, public JointEmbedder {
 public:
  explicit OracleEmbedder(OracleSpec spec);

  FeatureMap extract_feature_map(const ImageRGB& image,
                                 const StageShape& stage) const override;
  EmbeddingVector embed_image_region(const ImageRGB& image) const override;
  EmbeddingVector embed_text(const std::string& text) const override;
  std::size_t dim() const override { return spec_.dim; }

  const OracleSpec& spec() const { return spec_; }
  const EmbeddingVector& concept_vector(const std::string& name) const;
  // Palette concept index for a pixel color (nearest in RGB, lowest index on
  // ties). Exposed for the synthetic generator.
  std::size_t palette_index(double r, double g, double b) const;

 private:
  OracleSpec spec_;
  std::vector<const EmbeddingVector*> palette_vectors_;
};

// Builds the shipped oracle: orthonormal base directions from `seed`
// (Gaussian draws + Gram-Schmidt), person as the reserved hub, and every
// part/attribute concept as blend*P + sqrt(1-blend^2)*private. Requires
// 2 + parts + attribute values <= dim.
OracleSpec make_default_oracle_spec(
    std::uint64_t seed, std::size_t dim, const std::vector<std::string>& parts,
    const std::vector<std::string>& attribute_values);

inline constexpr const char* kPersonPrompt = "a photo of a person";
inline constexpr double kConceptBlend = 0.52;

}  // namespace clasp
