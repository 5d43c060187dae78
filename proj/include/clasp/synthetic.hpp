#pragma once

#include <cstddef>
#include <vector>

#include "clasp/encoders.hpp"
#include "clasp/image.hpp"
#include "clasp/pseudo_labels.hpp"

namespace clasp {

// Band-layout person renderer. Images are split into token-aligned
// horizontal bands: the top rows are background, the rest belong to a
// subset of body parts, top to bottom in vocabulary order. Inside a person
// band every cell x cell patch carries a fixed pixel pattern: one pixel per
// attribute (the true value's color), four pixels of the band's part color,
// and the rest person-colored — so every token of a band embeds
// identically and ground truth is exact.
struct SyntheticConfig {
  std::size_t image_h = 32, image_w = 16;
  std::size_t cell = 4;                // band quantum; must match the patch
  std::size_t parts_per_image = 3;     // drawn from the vocabulary
  double background_fraction = 0.125;  // of token rows, rounded to whole rows
  unsigned long long seed = 1234;

  void validate(const PartVocabulary& vocab) const;
};

struct SyntheticSample {
  ImageRGB image;
  PartLabelMap part_map;              // pixel-level ground truth, 0 background
  std::vector<AttributeLabel> attrs;  // ground truth, always known
  bool has_person = true;             // false for all-background images
};

std::vector<SyntheticSample> generate_synthetic_dataset(
    std::size_t n, const SyntheticConfig& cfg, const OracleSpec& oracle,
    const PartVocabulary& vocab, const AttributeSchema& schema);

}  // namespace clasp
