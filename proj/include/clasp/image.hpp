#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clasp/rng.hpp"

namespace clasp {

// Interleaved RGB raster, values in [0, 1]. A pixel equal to exactly
// (0, 0, 0) marks "no content" for region embedding; file IO round-trips
// through 8-bit channels.
struct ImageRGB {
  std::size_t h = 0, w = 0;
  std::vector<double> px;  // h * w * 3

  ImageRGB() = default;
  ImageRGB(std::size_t height, std::size_t width)
      : h(height), w(width), px(height * width * 3, 0.0) {}

  double* at(std::size_t y, std::size_t x) { return px.data() + (y * w + x) * 3; }
  const double* at(std::size_t y, std::size_t x) const {
    return px.data() + (y * w + x) * 3;
  }
  void set(std::size_t y, std::size_t x, double r, double g, double b) {
    double* p = at(y, x);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  bool is_zero(std::size_t y, std::size_t x) const {
    const double* p = at(y, x);
    return p[0] == 0.0 && p[1] == 0.0 && p[2] == 0.0;
  }
};

// 8-bit single-channel raster (class-id maps).
struct GrayImage {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> px;

  GrayImage() = default;
  GrayImage(std::size_t height, std::size_t width)
      : h(height), w(width), px(height * width, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return px[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return px[y * w + x]; }
};

// Binary P6 / P5, maxval 255. Readers reject anything else.
void write_ppm(const ImageRGB& img, const std::string& path);
ImageRGB read_ppm(const std::string& path);
void write_pgm(const GrayImage& img, const std::string& path);
GrayImage read_pgm(const std::string& path);

// Training-view augmentations. Each draws its parameters from `rng`, so a
// fixed stream yields a fixed view. Defaults are tuned for the tiny synthetic
// images: at 32x16 a crop below ~0.95 scale shifts stripe boundaries across
// patch cells, and the two views of one image stop agreeing on anything the
// distillation loss could latch onto.
ImageRGB hflip(const ImageRGB& img);
ImageRGB crop_resize(const ImageRGB& img, Rng& rng, double min_scale = 0.99);
ImageRGB color_jitter(const ImageRGB& img, Rng& rng, double max_delta = 0.005);

// Two global views: flip (coin each) + crop-resize + jitter.
std::vector<ImageRGB> make_global_views(const ImageRGB& img, Rng& rng);

}  // namespace clasp
