#include <numeric>

#include "support.hpp"

using namespace ssimfuse;
using namespace testing_support;

namespace {

ImagePair random_pair(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {random_image(h, w, rng), random_image(h, w, rng), "r"};
}

struct Trained {
  FusionConfig config;
  ParamSet<double> params;
  std::vector<ImagePair> data;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    r.config.epochs = 1;
    PhantomSpec spec;
    spec.count = 2;
    spec.width = spec.height = 32;
    r.data = generate_phantoms(spec);
    r.params = train(r.config, r.data, 42).params;
    return r;
  }();
  return t;
}

/// sum(F) straight from the graph, so perturbed inputs may leave [0,1].
double fused_sum(const Trained& t, const Tensor<double>& a, const Tensor<double>& b) {
  Graph<double> g;
  return sum(build_fusion(g, t.params, t.config, g.leaf(a), g.leaf(b), NormMode::Infer, false).fused).tensor().item();
}

}  // namespace

TEST(InputGradients, IdentityAndAverageStubs) {
  const auto pair = random_pair(32, 32, 1);
  const auto id = input_gradients<double>([](Graph<double>&, Var<double> a, Var<double>) { return a; }, pair);
  for (double v : id.grad_anatomical.pixels) EXPECT_EQ(v, 1.0);
  for (double v : id.grad_functional.pixels) EXPECT_EQ(v, 0.0);
  const auto avg = input_gradients<double>(
      [](Graph<double>&, Var<double> a, Var<double> b) { return affine(add(a, b), 0.5, 0.0); }, pair);
  for (double v : avg.grad_anatomical.pixels) EXPECT_EQ(v, 0.5);
  for (double v : avg.grad_functional.pixels) EXPECT_EQ(v, 0.5);
}

TEST(InputGradients, MatchFiniteDifferencesOnTrainedNetwork) {
  const auto& t = trained();
  const ImagePair& pair = t.data[0];
  const auto gp = input_gradients(t.params, t.config, pair);
  const auto ta = pair.anatomical.to_tensor(), tf = pair.functional.to_tensor();
  // The max/sum fusion rule is strongly curved, so the step is kept small.
  const double h = 1e-6;
  const std::pair<std::size_t, std::size_t> pixels[] = {{16, 16}, {0, 0}, {5, 27}, {31, 12}, {20, 3}};
  for (const auto& [y, x] : pixels)
    for (int which = 0; which < 2; ++which) {
      const std::size_t i = y * 32 + x;
      auto pa = ta, pf = tf, ma = ta, mf = tf;
      (which ? pf : pa)[i] += h;
      (which ? mf : ma)[i] -= h;
      const double num = (fused_sum(t, pa, pf) - fused_sum(t, ma, mf)) / (2 * h);
      const double an = (which ? gp.grad_functional : gp.grad_anatomical)(y, x);
      EXPECT_LE(std::abs(an - num), 1e-3 * std::max(std::abs(num), 1e-3))
          << "pixel (" << y << "," << x << ") input " << which << " analytic " << an << " numeric " << num;
    }
}

TEST(InputGradients, DirectionalTaylorCheck) {
  const auto& t = trained();
  const ImagePair& pair = t.data[1];
  const auto gp = input_gradients(t.params, t.config, pair);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  auto a = pair.anatomical.to_tensor(), b = pair.functional.to_tensor();
  std::vector<double> da(a.size()), db(b.size());
  for (double& v : da) v = u(rng);
  for (double& v : db) v = u(rng);
  double predicted = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    predicted += gp.grad_anatomical.pixels[i] * da[i] + gp.grad_functional.pixels[i] * db[i];
  auto along = [&](double s) {
    auto x = a, y = b;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += s * da[i];
      y[i] += s * db[i];
    }
    return fused_sum(t, x, y);
  };
  const double s = 1e-7;
  EXPECT_NEAR(predicted, (along(s) - along(-s)) / (2 * s), 1e-5 * std::abs(predicted));
}

TEST(InputGradients, RejectsUntrainedOrMismatchedParameters) {
  FusionConfig cfg;
  const auto pair = random_pair(32, 32, 2);
  EXPECT_THROW(input_gradients(init_params<double>(cfg, 1), cfg, pair), ArgumentError);
  FusionConfig other = cfg;
  other.lf_channels = 8;
  EXPECT_THROW(input_gradients(trained().params, other, pair), ShapeError);
}

TEST(NormalizeMap, ConstantBecomesHalf) {
  for (double v : normalize_map(Image(8, 8, -3.0)).pixels) EXPECT_EQ(v, 0.5);
}

TEST(NormalizeMap, PercentileClampAndScale) {
  Image g(1, 101);
  for (std::size_t i = 0; i <= 100; ++i) g.pixels[i] = -2.0 + 8.0 * double(i) / 100;  // [-2, 6]
  const auto n = normalize_map(g);
  // 1st and 99th percentiles are -1.92 and 5.92.
  EXPECT_EQ(n.pixels[0], 0.0);
  EXPECT_EQ(n.pixels[100], 1.0);
  EXPECT_NEAR(n.pixels[50], (2.0 + 1.92) / 7.84, 1e-12);
  const auto full = normalize_map(g, 0, 100);
  EXPECT_NEAR(full.pixels[25], 0.25, 1e-12);
  const auto mag = normalize_map(g, 0, 100, true);
  EXPECT_NEAR(mag.pixels[0], 2.0 / 6.0, 1e-12);
  EXPECT_THROW(normalize_map(g, 50, 40), ArgumentError);
}

TEST(NormalizeMap, OutputInUnitInterval) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0, 5);
  Image g(20, 20);
  for (double& v : g.pixels) v = nd(rng);
  for (double v : normalize_map(g).pixels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Percentile, Interpolates) {
  EXPECT_EQ(percentile({3, 1, 2}, 50), 2.0);
  EXPECT_EQ(percentile({0, 10}, 25), 2.5);
  EXPECT_EQ(percentile({4}, 99), 4.0);
  EXPECT_THROW(percentile({}, 50), ArgumentError);
}

TEST(HsvToRgb, PrimaryHues) {
  const auto red = hsv_to_rgb(0, 1, 1), blue = hsv_to_rgb(240, 1, 1), green = hsv_to_rgb(120, 1, 1);
  EXPECT_EQ(red.r, 1.0);
  EXPECT_EQ(red.g, 0.0);
  EXPECT_EQ(blue.b, 1.0);
  EXPECT_EQ(blue.r, 0.0);
  EXPECT_EQ(green.g, 1.0);
  const auto grey = hsv_to_rgb(77, 0, 0.4);
  EXPECT_EQ(grey.r, 0.4);
  EXPECT_EQ(grey.g, 0.4);
  EXPECT_EQ(grey.b, 0.4);
  const auto wrap = hsv_to_rgb(360 + 60, 1, 1);
  EXPECT_NEAR(wrap.r, 1.0, 1e-15);
  EXPECT_NEAR(wrap.g, 1.0, 1e-15);
}

TEST(Composite, OmegaControlsSaturationOnly) {
  const auto& t = trained();
  const auto gp = input_gradients(t.params, t.config, t.data[0]);
  const auto c0 = composite(gp, 0.0), c3 = composite(gp, 0.3), c6 = composite(gp, 0.6);
  for (std::size_t i = 0; i < c0.saturation.size(); ++i) {
    EXPECT_EQ(c0.saturation[i], 0.0);
    EXPECT_EQ(c6.saturation[i], 2 * c3.saturation[i]);
    EXPECT_EQ(c3.hue[i], c6.hue[i]);
    EXPECT_EQ(c3.value[i], c6.value[i]);
    EXPECT_GE(c3.hue[i], 0.0);
    EXPECT_LE(c3.hue[i], 240.0);
    EXPECT_EQ(c0.rgb[3 * i], c0.rgb[3 * i + 1]);
    EXPECT_EQ(c0.rgb[3 * i + 1], c0.rgb[3 * i + 2]);
  }
  for (double v : c6.rgb) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto img = c6.to_rgb_image();
  EXPECT_EQ(img.bytes.size(), 3 * 32 * 32u);
}

TEST(Composite, RejectsBadArguments) {
  GradientPair gp{Image(4, 4), Image(4, 4)};
  EXPECT_THROW(composite(gp, -0.1), ArgumentError);
  EXPECT_THROW(composite(gp, 1.5), ArgumentError);
  gp.grad_functional = Image(4, 5);
  EXPECT_THROW(composite(gp, 0.5), ShapeError);
}
