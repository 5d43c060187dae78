#pragma once

// Multi-level pseudo-label generation: dual-criteria image filtering
// (spatial token vote, then whole-image semantic gate), multi-granularity
// K-means over foreground tokens, similarity-argmax part labeling, pixel
// label-map assembly, and thresholded attribute labeling.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clasp/encoders.hpp"
#include "clasp/image.hpp"
#include "clasp/rng.hpp"

namespace clasp {

struct BinaryMask {
  std::size_t h = 0, w = 0;
  int region_id = -1;
  std::vector<std::uint8_t> values;  // {0,1}

  BinaryMask() = default;
  BinaryMask(std::size_t h_, std::size_t w_, int id = -1)
      : h(h_), w(w_), region_id(id), values(h_ * w_, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * w + x]; }
  std::size_t count() const;
};

struct PartVocabulary {
  struct Entry {
    std::string name;
    std::string prompt;
  };
  std::vector<Entry> entries;

  std::size_t size() const { return entries.size(); }
  void validate() const;  // unique names, >= 2 entries, <= 255 for 8-bit maps
  static PartVocabulary defaults();
  static PartVocabulary load(const std::string& path);
  void save(const std::string& path) const;
  std::vector<std::string> names() const;
};

// Pixel-level map; 0 is background, part ids are vocabulary index + 1.
struct PartLabelMap {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> labels;

  PartLabelMap() = default;
  PartLabelMap(std::size_t h_, std::size_t w_) : h(h_), w(w_), labels(h_ * w_, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * w + x]; }
};

struct AttributeSchema {
  struct Attribute {
    std::string name;
    std::string prompt_template;  // exactly one "{}" slot
    std::vector<std::string> values;

    std::string prompt(std::size_t value_index) const;
  };
  std::vector<Attribute> attributes;

  void validate() const;
  std::size_t total_values() const;
  static AttributeSchema defaults();
  static AttributeSchema load(const std::string& path);
  void save(const std::string& path) const;
  std::vector<std::string> all_value_names() const;
};

struct AttributeLabel {
  bool known = false;
  int value_index = -1;          // index into the attribute's values when known
  double score = 0.0;            // winning (or best losing) similarity
  std::vector<double> onehot;    // length K^i; all zero when unknown
};

struct AttributeLabelSet {
  std::vector<AttributeLabel> labels;  // one per schema attribute, same order
};

struct GranularitySet {
  std::vector<std::size_t> candidates;  // ascending, unique, all >= 2

  static GranularitySet defaults() { return GranularitySet{{2, 3, 4}}; }
  void validate() const;
};

struct SpatialFilterOutcome {
  bool pass = false;
  double fg_fraction = 0.0;
  BinaryMask fg;              // token-grid mask of the foreground cluster
  std::string diagnostic;     // set when rejected
};

// 2-means over token vectors; the cluster whose centroid better matches the
// person prompt is foreground; pass requires strictly more than half the
// tokens. All-identical tokens collapse to one cluster: person-like -> full
// foreground, otherwise rejected with a diagnostic.
SpatialFilterOutcome spatial_filter(const FeatureMap& fm, const JointEmbedder& clip);

// Strictly-above-threshold gate on the pooled image embedding.
bool semantic_filter(const ImageRGB& image, const JointEmbedder& clip,
                     double threshold = 0.9);

std::size_t sample_granularity(const GranularitySet& s, Rng& rng);

// K-means (k-means++ seeding, <= 100 iterations, stable-assignment stop) over
// foreground tokens only. Returned masks are disjoint and union to fg.
std::vector<BinaryMask> cluster_foreground(const FeatureMap& fm,
                                           const BinaryMask& fg, std::size_t l,
                                           Rng& rng);

// Nearest-neighbor upscale of the token mask to the image grid, then
// elementwise multiply. Pixels outside the mask are exactly zero.
ImageRGB mask_image(const ImageRGB& image, const BinaryMask& mask);

struct PartAssignment {
  int label_id = 0;  // 1-based vocabulary id
  double score = 0.0;
};

// argmax_j cos(region embedding, part prompt embedding_j); ties -> lowest
// vocabulary index. Throws EmbedError when the region has no content.
PartAssignment assign_part_label(const ImageRGB& masked,
                                 const PartVocabulary& vocab,
                                 const JointEmbedder& clip);

// Pure decision cores, exposed so similarity fixtures can drive them directly.
std::size_t part_argmax(const std::vector<double>& scores);
AttributeLabel attribute_decision(const std::vector<double>& scores,
                                  double threshold = 0.5);

PartLabelMap build_part_label_map(const std::vector<BinaryMask>& masks,
                                  const std::vector<int>& labels,
                                  std::size_t height, std::size_t width);

std::vector<double> onehot_encode(int label, std::size_t k);

enum class RejectReason { None, SpatialFilter, SemanticFilter, Degenerate };

struct PseudoLabelOutcome {
  bool accepted = false;
  RejectReason reason = RejectReason::None;
  std::size_t granularity = 0;
  PartLabelMap map;
  std::vector<PartAssignment> regions;  // per emitted mask, in region order
};

struct PipelineConfig {
  StageShape stage{16, 8, 4, 0};
  GranularitySet granularities = GranularitySet::defaults();
  double semantic_threshold = 0.9;
};

// Full per-image part pipeline. Rejection is an outcome, not an error; when
// the sampled granularity exceeds the foreground token count the next smaller
// candidate is tried before giving up.
PseudoLabelOutcome generate_part_labels(const ImageRGB& image,
                                        const PipelineConfig& cfg,
                                        const PartVocabulary& vocab,
                                        const FeatureProvider& features,
                                        const JointEmbedder& clip, Rng& rng);

AttributeLabelSet assign_attribute_labels(const ImageRGB& image,
                                          const AttributeSchema& schema,
                                          const JointEmbedder& clip);

}  // namespace clasp
