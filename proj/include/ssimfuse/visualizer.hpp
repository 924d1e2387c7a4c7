#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ssimfuse/image_io.hpp"
#include "ssimfuse/network.hpp"

namespace ssimfuse {

/// Sensitivity of sum(F) to every pixel of each input.
struct GradientPair {
  Image grad_anatomical;
  Image grad_functional;
};

/// Builds the fused node from the two input leaves.
template <class T>
using FusionFn = std::function<Var<T>(Graph<T>&, Var<T>, Var<T>)>;

/// One forward, one backward seeded with ones on the fused output.
template <class T = double>
GradientPair input_gradients(const FusionFn<T>& fusion, const ImagePair& pair) {
  pair.validate();
  Graph<T> g;
  auto a = g.leaf(pair.anatomical.to_tensor<T>(), true, "anatomical");
  auto b = g.leaf(pair.functional.to_tensor<T>(), true, "functional");
  Var<T> f = fusion(g, a, b);
  Tensor<T> seed(f.shape(), std::vector<T>(f.shape().numel(), T(1)));
  g.backward(f, &seed);

  auto to_image = [&](Var<T> v) {
    Image img(pair.anatomical.height, pair.anatomical.width);
    const auto gr = v.grad();
    if (!gr.empty())
      for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = double(gr[i]);
    for (double x : img.pixels)
      if (!std::isfinite(x)) throw TrainingError("input_gradients: non-finite gradient");
    return img;
  };
  return {to_image(a), to_image(b)};
}

/// Gradient maps of the trained network, evaluated with running norm statistics.
template <class T = double>
GradientPair input_gradients(const ParamSet<T>& params, const FusionConfig& config, const ImagePair& pair) {
  params.check_against(config);
  if (params.steps == 0) throw ArgumentError("input_gradients: parameters are untrained (0 optimizer steps)");
  return input_gradients<T>(
      [&](Graph<T>& g, Var<T> a, Var<T> b) {
        return build_fusion(g, params, config, a, b, NormMode::Infer, false).fused;
      },
      pair);
}

/// Linear-interpolated percentile of unsorted data, p in [0,100].
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) throw ArgumentError("percentile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * double(v.size() - 1);
  const auto k = std::size_t(std::floor(pos));
  if (k + 1 >= v.size()) return v.back();
  return v[k] + (pos - double(k)) * (v[k + 1] - v[k]);
}

/// Clamps to the [lo_pct, hi_pct] percentile range and rescales to [0,1].
/// A map with no spread becomes 0.5 everywhere. `magnitude` uses |g|.
inline Image normalize_map(const Image& g, double lo_pct = 1, double hi_pct = 99, bool magnitude = false) {
  if (!(lo_pct >= 0 && hi_pct <= 100 && lo_pct < hi_pct))
    throw ArgumentError("normalize_map: need 0 <= lo_pct < hi_pct <= 100");
  Image out = g;
  if (magnitude)
    for (double& v : out.pixels) v = std::abs(v);
  if (out.pixels.empty()) return out;
  const double lo = percentile(out.pixels, lo_pct), hi = percentile(out.pixels, hi_pct);
  if (!(hi > lo)) {
    std::fill(out.pixels.begin(), out.pixels.end(), 0.5);
    return out;
  }
  for (double& v : out.pixels) v = (std::clamp(v, lo, hi) - lo) / (hi - lo);
  return out;
}

struct Rgb {
  double r, g, b;
};

/// Standard sextant HSV to RGB; h in degrees, s and v in [0,1].
inline Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (std::min(int(hp), 5)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

/// HSV planes kept alongside the RGB result so channel-level properties can
/// be checked before conversion.
struct ColorComposite {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> hue;         // degrees
  std::vector<double> saturation;  // [0,1]
  std::vector<double> value;       // [0,1]
  std::vector<double> rgb;         // interleaved, [0,1]
  double lambda = 0;
  double omega = 0;
  std::string source;

  RgbImage to_rgb_image() const {
    RgbImage img{height, width, std::vector<std::uint8_t>(rgb.size())};
    std::transform(rgb.begin(), rgb.end(), img.bytes.begin(), to_byte);
    return img;
  }
};

/// Functional map drives hue (blue for low, red for high), Omega scales the
/// saturation, the anatomical map becomes the value channel.
inline ColorComposite composite(const GradientPair& gp, double omega, bool magnitude = false) {
  if (!(omega >= 0 && omega <= 1)) throw ArgumentError("composite: omega must lie in [0,1]");
  const Image& ga = gp.grad_anatomical;
  const Image& gf = gp.grad_functional;
  if (ga.height != gf.height || ga.width != gf.width) throw ShapeError("composite: gradient maps differ in size");
  const Image va = normalize_map(ga, 1, 99, magnitude);
  const Image tf = normalize_map(gf, 1, 99, magnitude);

  ColorComposite out;
  out.height = ga.height;
  out.width = ga.width;
  out.omega = omega;
  const std::size_t n = ga.size();
  out.hue.resize(n);
  out.saturation.resize(n);
  out.value.resize(n);
  out.rgb.resize(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out.hue[i] = 240.0 * (1.0 - tf.pixels[i]);
    out.saturation[i] = omega * 1.0;
    out.value[i] = va.pixels[i];
    const Rgb c = hsv_to_rgb(out.hue[i], out.saturation[i], out.value[i]);
    out.rgb[3 * i] = c.r;
    out.rgb[3 * i + 1] = c.g;
    out.rgb[3 * i + 2] = c.b;
  }
  return out;
}

}  // namespace ssimfuse
