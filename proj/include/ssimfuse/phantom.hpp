#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "ssimfuse/image.hpp"
#include "ssimfuse/image_io.hpp"

namespace ssimfuse {

/// Synthetic registered pairs: the anatomical image carries sharp-edged
/// ellipses/polygons over a fine sinusoidal texture, the functional image
/// smooth Gaussian uptake blobs centred on a subset of those shapes.
struct PhantomSpec {
  std::size_t count = 16;
  std::size_t width = 64;
  std::size_t height = 64;
  std::uint64_t seed = 7;
  int shapes = 6;
  int blobs = 3;
  double texture_amplitude = 0.06;
  double blur_sigma = 3.0;
  std::string prefix = "phantom";

  void validate() const {
    if (count == 0) throw ArgumentError("phantom: count must be positive");
    if (width < ImagePair::kMinSide || height < ImagePair::kMinSide)
      throw ArgumentError("phantom: width and height must be at least 32");
    if (shapes < 1 || blobs < 1) throw ArgumentError("phantom: need at least one shape and one blob");
    if (!(blur_sigma > 0)) throw ArgumentError("phantom: blur_sigma must be positive");
  }
};

namespace detail {

/// splitmix64; drives the generator so outputs do not depend on the
/// standard library's distribution implementations.
class PhantomRng {
 public:
  explicit PhantomRng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * double(next() >> 11) * 0x1.0p-53; }
  int index(int n) { return int(next() % std::uint64_t(n)); }

 private:
  std::uint64_t state_;
};

inline void gaussian_blur(Image& img, double sigma) {
  const int r = int(std::ceil(3 * sigma));
  std::vector<double> k(std::size_t(2 * r + 1));
  double s = 0;
  for (int i = -r; i <= r; ++i) s += (k[std::size_t(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& v : k) v /= s;
  const auto h = std::ptrdiff_t(img.height), w = std::ptrdiff_t(img.width);
  Image tmp(img.height, img.width);
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[std::size_t(i + r)] * img(std::size_t(y), std::size_t(std::clamp(x + i, std::ptrdiff_t(0), w - 1)));
      tmp(std::size_t(y), std::size_t(x)) = acc;
    }
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[std::size_t(i + r)] * tmp(std::size_t(std::clamp(y + i, std::ptrdiff_t(0), h - 1)), std::size_t(x));
      img(std::size_t(y), std::size_t(x)) = acc;
    }
}

/// Rounds to the 8-bit grid so in-memory pairs equal their on-disk form.
inline void quantize_in_place(Image& img) {
  for (double& v : img.pixels) v = double(to_byte(v)) / 255.0;
}

}  // namespace detail

inline std::string phantom_id(const PhantomSpec& spec, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return spec.prefix + "_" + buf;
}

inline ImagePair generate_phantom(const PhantomSpec& spec, std::size_t index) {
  using std::numbers::pi;
  detail::PhantomRng rng(spec.seed * 0x100000001b3ULL + index * 0x9e3779b97f4a7c15ULL + 1);
  const double w = double(spec.width), h = double(spec.height);
  ImagePair pair{Image(spec.height, spec.width), Image(spec.height, spec.width), phantom_id(spec, index)};
  Image& anat = pair.anatomical;
  Image& func = pair.functional;

  // Head outline with tissue base level and texture.
  const double cx = w / 2 + rng.uniform(-0.03, 0.03) * w, cy = h / 2 + rng.uniform(-0.03, 0.03) * h;
  const double rx = rng.uniform(0.38, 0.45) * w, ry = rng.uniform(0.40, 0.46) * h;
  const double tissue = rng.uniform(0.22, 0.32);
  const double period = rng.uniform(3.0, 5.0), theta = rng.uniform(0, pi), phase = rng.uniform(0, 2 * pi);
  const double fx = std::cos(theta) / period, fy = std::sin(theta) / period;
  auto in_head = [&](double x, double y) {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  };
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x)
      if (in_head(double(x), double(y))) {
        anat(y, x) = tissue + spec.texture_amplitude * std::sin(2 * pi * (fx * double(x) + fy * double(y)) + phase);
        func(y, x) = 0.12;
      }

  struct Centre {
    double x, y, r;
  };
  std::vector<Centre> centres;
  for (int s = 0; s < spec.shapes; ++s) {
    const double scx = cx + rng.uniform(-0.55, 0.55) * rx, scy = cy + rng.uniform(-0.55, 0.55) * ry;
    const double size = rng.uniform(0.06, 0.16) * std::min(w, h);
    const double level = rng.uniform(0.45, 0.95);
    const bool polygon = rng.index(2) == 1;
    std::vector<std::pair<double, double>> verts;
    double ea = 0, eb = 0, rot = 0;
    if (polygon) {
      const int n = 3 + rng.index(3);
      std::vector<double> angles;
      for (int i = 0; i < n; ++i) angles.push_back(rng.uniform(0, 2 * pi));
      std::sort(angles.begin(), angles.end());
      for (double a : angles) {
        const double rr = size * rng.uniform(0.7, 1.3);
        verts.emplace_back(scx + rr * std::cos(a), scy + rr * std::sin(a));
      }
    } else {
      ea = size * rng.uniform(0.6, 1.4);
      eb = size * rng.uniform(0.6, 1.4);
      rot = rng.uniform(0, pi);
    }
    auto inside = [&](double x, double y) {
      if (!polygon) {
        const double dx = x - scx, dy = y - scy;
        const double u = (dx * std::cos(rot) + dy * std::sin(rot)) / ea;
        const double v = (-dx * std::sin(rot) + dy * std::cos(rot)) / eb;
        return u * u + v * v <= 1.0;
      }
      // Even-odd rule on the star-shaped polygon.
      bool in = false;
      for (std::size_t i = 0, j = verts.size() - 1; i < verts.size(); j = i++) {
        const auto [xi, yi] = verts[i];
        const auto [xj, yj] = verts[j];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
      }
      return in;
    };
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x)
        if (in_head(double(x), double(y)) && inside(double(x), double(y))) anat(y, x) = level;
    centres.push_back({scx, scy, size});
  }

  // Uptake blobs on a random subset of the anatomical shapes.
  for (int b = 0; b < spec.blobs; ++b) {
    const Centre& c = centres[std::size_t(rng.index(int(centres.size())))];
    const double amp = rng.uniform(0.4, 0.8);
    const double sig = std::max(3.0, c.r * rng.uniform(0.5, 0.9));
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double dx = double(x) - c.x, dy = double(y) - c.y;
        func(y, x) += amp * std::exp(-(dx * dx + dy * dy) / (2 * sig * sig));
      }
  }
  detail::gaussian_blur(func, spec.blur_sigma);

  for (Image* img : {&anat, &func}) {
    for (double& v : img->pixels) v = std::clamp(v, 0.0, 1.0);
    detail::quantize_in_place(*img);
  }
  return pair;
}

inline std::vector<ImagePair> generate_phantoms(const PhantomSpec& spec) {
  spec.validate();
  std::vector<ImagePair> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_phantom(spec, i));
  return out;
}

/// Writes `<id>_anat.png` and `<id>_func.png` for every pair; returns the pairs.
inline std::vector<ImagePair> write_phantoms(const PhantomSpec& spec, const fs::path& dir) {
  auto pairs = generate_phantoms(spec);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
  for (const auto& p : pairs) {
    write_png(dir / (p.id + "_anat.png"), p.anatomical);
    write_png(dir / (p.id + "_func.png"), p.functional);
  }
  return pairs;
}

}  // namespace ssimfuse
