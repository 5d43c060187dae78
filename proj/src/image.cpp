#include "clasp/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "clasp/error.hpp"

namespace clasp {
namespace {

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

void parse_header(std::istream& in, const char* magic, std::size_t& w,
                  std::size_t& h, const std::string& path) {
  if (next_token(in) != magic)
    throw DataError(path + ": expected " + magic + " header");
  try {
    w = std::stoul(next_token(in));
    h = std::stoul(next_token(in));
    if (std::stoul(next_token(in)) != 255)
      throw DataError(path + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw DataError(path + ": malformed header");
  }
  if (w == 0 || h == 0) throw DataError(path + ": zero image dimension");
}

}  // namespace

void write_ppm(const ImageRGB& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> row(img.w * 3);
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w; ++x) {
      const double* p = img.at(y, x);
      row[x * 3 + 0] = to_byte(p[0]);
      row[x * 3 + 1] = to_byte(p[1]);
      row[x * 3 + 2] = to_byte(p[2]);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("short write: " + path);
}

ImageRGB read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::size_t w = 0, h = 0;
  parse_header(in, "P6", w, h, path);
  ImageRGB img(h, w);
  std::vector<std::uint8_t> raw(w * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw DataError(path + ": truncated pixel data");
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.px[i] = static_cast<double>(raw[i]) / 255.0;
  return img;
}

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
  if (!out) throw DataError("short write: " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::size_t w = 0, h = 0;
  parse_header(in, "P5", w, h, path);
  GrayImage img(h, w);
  in.read(reinterpret_cast<char*>(img.px.data()),
          static_cast<std::streamsize>(img.px.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.px.size())
    throw DataError(path + ": truncated pixel data");
  return img;
}

ImageRGB hflip(const ImageRGB& img) {
  ImageRGB out(img.h, img.w);
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      const double* p = img.at(y, img.w - 1 - x);
      out.set(y, x, p[0], p[1], p[2]);
    }
  return out;
}

// Bilinear sampling: the view must vary smoothly with the crop window, or
// sub-pixel offsets snap band boundaries across patch cells and two views of
// one image decorrelate completely at this resolution.
ImageRGB crop_resize(const ImageRGB& img, Rng& rng, double min_scale) {
  const double scale = rng.uniform(min_scale, 1.0);
  const double ch = scale * static_cast<double>(img.h);
  const double cw = scale * static_cast<double>(img.w);
  const double y0 = rng.uniform(0.0, static_cast<double>(img.h) - ch);
  const double x0 = rng.uniform(0.0, static_cast<double>(img.w) - cw);
  const double ymax = static_cast<double>(img.h) - 1.0;
  const double xmax = static_cast<double>(img.w) - 1.0;
  ImageRGB out(img.h, img.w);
  for (std::size_t y = 0; y < img.h; ++y) {
    const double sy = std::clamp(
        y0 + (static_cast<double>(y) + 0.5) * ch / static_cast<double>(img.h) -
            0.5,
        0.0, ymax);
    const std::size_t ya = static_cast<std::size_t>(sy);
    const std::size_t yb = std::min(ya + 1, img.h - 1);
    const double wy = sy - static_cast<double>(ya);
    for (std::size_t x = 0; x < img.w; ++x) {
      const double sx = std::clamp(
          x0 + (static_cast<double>(x) + 0.5) * cw / static_cast<double>(img.w) -
              0.5,
          0.0, xmax);
      const std::size_t xa = static_cast<std::size_t>(sx);
      const std::size_t xb = std::min(xa + 1, img.w - 1);
      const double wx = sx - static_cast<double>(xa);
      const double* paa = img.at(ya, xa);
      const double* pab = img.at(ya, xb);
      const double* pba = img.at(yb, xa);
      const double* pbb = img.at(yb, xb);
      double px[3];
      for (int c = 0; c < 3; ++c)
        px[c] = (1.0 - wy) * ((1.0 - wx) * paa[c] + wx * pab[c]) +
                wy * ((1.0 - wx) * pba[c] + wx * pbb[c]);
      out.set(y, x, px[0], px[1], px[2]);
    }
  }
  return out;
}

ImageRGB color_jitter(const ImageRGB& img, Rng& rng, double max_delta) {
  double gain[3];
  for (double& g : gain) g = 1.0 + rng.uniform(-max_delta, max_delta);
  ImageRGB out(img.h, img.w);
  for (std::size_t i = 0; i < img.px.size(); ++i)
    out.px[i] = std::clamp(img.px[i] * gain[i % 3], 0.0, 1.0);
  return out;
}

std::vector<ImageRGB> make_global_views(const ImageRGB& img, Rng& rng) {
  std::vector<ImageRGB> views;
  views.reserve(2);
  for (int v = 0; v < 2; ++v) {
    ImageRGB view = rng.uniform() < 0.5 ? hflip(img) : img;
    view = crop_resize(view, rng);
    view = color_jitter(view, rng);
    views.push_back(std::move(view));
  }
  return views;
}

}  // namespace clasp
