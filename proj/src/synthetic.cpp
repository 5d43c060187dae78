#include "clasp/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "clasp/error.hpp"
#include "clasp/rng.hpp"

namespace clasp {

void SyntheticConfig::validate(const PartVocabulary& vocab) const {
  if (cell == 0 || image_h % cell != 0 || image_w % cell != 0)
    throw ConfigError("synthetic: cell must tile the image");
  if (parts_per_image < 1 || parts_per_image > vocab.size())
    throw ConfigError("synthetic: parts_per_image outside the vocabulary");
  if (background_fraction < 0.0 || background_fraction > 1.0)
    throw ConfigError("synthetic: background_fraction outside [0, 1]");
}

namespace {

void paint_patch(ImageRGB& img, std::size_t y0, std::size_t x0,
                 std::size_t cell, const double* person, const double* part,
                 const std::vector<std::array<double, 3>>& attr_colors) {
  // Attribute rows carry a centered mirror pair of their value color, the
  // last row is solid part color, everything else person color. Each row is
  // symmetric under x -> cell-1-x, so a horizontal flip reproduces the image
  // exactly and the two training views of one sample stay consistent. The
  // oracle reads per-cell color counts only, so the arrangement is free.
  for (std::size_t py = 0; py < cell; ++py)
    for (std::size_t px = 0; px < cell; ++px) {
      const double* rgb = person;
      if (py + 1 == cell) rgb = part;
      else if (py < attr_colors.size() && (px == 1 || px == cell - 2))
        rgb = attr_colors[py].data();
      img.set(y0 + py, x0 + px, rgb[0], rgb[1], rgb[2]);
    }
}

std::array<double, 3> unit_rgb(const PaletteEntry& e) {
  return {e.r / 255.0, e.g / 255.0, e.b / 255.0};
}

}  // namespace

std::vector<SyntheticSample> generate_synthetic_dataset(
    std::size_t n, const SyntheticConfig& cfg, const OracleSpec& oracle,
    const PartVocabulary& vocab, const AttributeSchema& schema) {
  cfg.validate(vocab);
  if (schema.attributes.size() + 1 > cfg.cell)
    throw ConfigError("synthetic: cell too small for attribute rows plus part row");

  const std::size_t rows = cfg.image_h / cfg.cell;
  const std::size_t bg_rows = static_cast<std::size_t>(
      std::llround(cfg.background_fraction * static_cast<double>(rows)));
  const std::size_t person_rows = rows - std::min(bg_rows, rows);
  if (person_rows > 0 && person_rows < cfg.parts_per_image)
    throw ConfigError("synthetic: not enough person rows for the parts");

  // Person and background draw a per-sample shade: the oracle resolves every
  // shade to the same concept, but the pixels differ, which is what gives the
  // backbone something to tell samples apart by. One shade per sample, not
  // per band: coherent whole-image variation survives pooling, per-band
  // variation averages out.
  std::vector<std::array<double, 3>> bg_shades, person_shades;
  for (const auto& p : oracle.colors_of("background"))
    bg_shades.push_back(unit_rgb(p));
  for (const auto& p : oracle.colors_of(oracle.person_concept))
    person_shades.push_back(unit_rgb(p));

  std::vector<SyntheticSample> out;
  out.reserve(n);
  Rng base(cfg.seed);
  for (std::size_t idx = 0; idx < n; ++idx) {
    Rng rng = base.derive("sample", idx);
    SyntheticSample s;
    s.image = ImageRGB(cfg.image_h, cfg.image_w);
    s.part_map = PartLabelMap(cfg.image_h, cfg.image_w);

    const std::array<double, 3>& bg =
        bg_shades[rng.uniform_int(bg_shades.size())];
    const std::array<double, 3>& person =
        person_shades[rng.uniform_int(person_shades.size())];

    // Background band at the top.
    for (std::size_t y = 0; y < bg_rows * cfg.cell; ++y)
      for (std::size_t x = 0; x < cfg.image_w; ++x)
        s.image.set(y, x, bg[0], bg[1], bg[2]);

    if (person_rows == 0) {
      s.has_person = false;
      s.attrs.assign(schema.attributes.size(), AttributeLabel{});
      out.push_back(std::move(s));
      continue;
    }

    // Attribute ground truth and the per-attribute pixel colors.
    std::vector<std::array<double, 3>> attr_colors;
    for (const auto& attr : schema.attributes) {
      AttributeLabel lab;
      lab.known = true;
      lab.value_index =
          static_cast<int>(rng.uniform_int(attr.values.size()));
      lab.score = 1.0;
      lab.onehot.assign(attr.values.size(), 0.0);
      lab.onehot[static_cast<std::size_t>(lab.value_index)] = 1.0;
      const auto shades =
          oracle.colors_of(attr.values[static_cast<std::size_t>(lab.value_index)]);
      attr_colors.push_back(unit_rgb(shades[rng.uniform_int(shades.size())]));
      s.attrs.push_back(std::move(lab));
    }
    // Which cell row carries which attribute is itself drawn per sample; the
    // labeler reads per-cell color counts, so row order is free variation.
    rng.shuffle(attr_colors);

    // Part subset in random top-to-bottom order, with random band heights:
    // layout entropy is what separates samples for the distillation task.
    std::vector<std::size_t> pool(vocab.size());
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool);
    pool.resize(cfg.parts_per_image);

    // Random composition of person_rows into parts_per_image positive parts:
    // draw cut points without replacement from the interior gaps.
    std::vector<std::size_t> cuts(person_rows - 1);
    std::iota(cuts.begin(), cuts.end(), 1);
    rng.shuffle(cuts);
    cuts.resize(cfg.parts_per_image - 1);
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(person_rows);

    std::size_t row = bg_rows;
    std::size_t prev_cut = 0;
    for (std::size_t b = 0; b < pool.size(); ++b) {
      const std::size_t band_rows = cuts[b] - prev_cut;
      prev_cut = cuts[b];
      const auto part_shades = oracle.colors_of(vocab.entries[pool[b]].name);
      const std::array<double, 3> part =
          unit_rgb(part_shades[rng.uniform_int(part_shades.size())]);
      const auto label = static_cast<std::uint8_t>(pool[b] + 1);
      for (std::size_t r = 0; r < band_rows; ++r, ++row) {
        for (std::size_t tx = 0; tx < cfg.image_w / cfg.cell; ++tx)
          paint_patch(s.image, row * cfg.cell, tx * cfg.cell, cfg.cell,
                      person.data(), part.data(), attr_colors);
        for (std::size_t y = row * cfg.cell; y < (row + 1) * cfg.cell; ++y)
          for (std::size_t x = 0; x < cfg.image_w; ++x)
            s.part_map.at(y, x) = label;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace clasp
