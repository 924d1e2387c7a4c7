#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ssimfuse/tensor.hpp"

namespace ssimfuse {

/// Single-channel image, row-major, intensities nominally in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& operator()(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double operator()(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }

  template <class T = double>
  Tensor<T> to_tensor() const {
    return Tensor<T>(Shape{1, 1, height, width}, std::vector<T>(pixels.begin(), pixels.end()));
  }

  template <class T>
  static Image from_tensor(const Tensor<T>& t) {
    const Shape s = t.shape();
    if (s.n != 1 || s.c != 1) throw ShapeError("image from tensor needs shape (1,1,H,W), got " + s.str());
    Image img(s.h, s.w);
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(t[i]);
    return img;
  }
};

/// Registered anatomical/functional pair of equal size.
struct ImagePair {
  Image anatomical;
  Image functional;
  std::string id;

  static constexpr std::size_t kMinSide = 32;

  /// Throws ShapeError or ArgumentError when the pair cannot be fused.
  void validate() const {
    if (anatomical.height != functional.height || anatomical.width != functional.width)
      throw ShapeError("pair '" + id + "': anatomical " + std::to_string(anatomical.height) + "x" +
                       std::to_string(anatomical.width) + " vs functional " + std::to_string(functional.height) +
                       "x" + std::to_string(functional.width));
    if (anatomical.height < kMinSide || anatomical.width < kMinSide)
      throw ShapeError("pair '" + id + "': images must be at least 32x32");
    for (const Image* img : {&anatomical, &functional})
      for (double v : img->pixels)
        if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("pair '" + id + "': intensity outside [0,1]");
  }
};

}  // namespace ssimfuse
