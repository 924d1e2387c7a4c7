#include "support.hpp"

using namespace ssimfuse;
using namespace testing_support;

namespace {

/// Windowed SSIM written straight from the definition: Gaussian-weighted
/// moments per valid window, three-factor product, mean over windows.
double ssim_oracle(const Image& a, const Image& b, const SSIMParams& p) {
  const int k = p.window_size, r = k / 2;
  std::vector<double> w(std::size_t(k * k));
  double total = 0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x)
      total += (w[std::size_t((y + r) * k + x + r)] = std::exp(-(x * x + y * y) / (2 * p.sigma_g * p.sigma_g)));
  for (double& v : w) v /= total;
  double acc = 0;
  std::size_t windows = 0;
  for (std::size_t y0 = 0; y0 + std::size_t(k) <= a.height; ++y0)
    for (std::size_t x0 = 0; x0 + std::size_t(k) <= a.width; ++x0) {
      double ma = 0, mb = 0;
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          const double wt = w[std::size_t(u * k + v)];
          ma += wt * a(y0 + std::size_t(u), x0 + std::size_t(v));
          mb += wt * b(y0 + std::size_t(u), x0 + std::size_t(v));
        }
      double va = 0, vb = 0, cab = 0;
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          const double wt = w[std::size_t(u * k + v)];
          const double da = a(y0 + std::size_t(u), x0 + std::size_t(v)) - ma;
          const double db = b(y0 + std::size_t(u), x0 + std::size_t(v)) - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cab += wt * da * db;
        }
      const double sa = std::sqrt(va), sb = std::sqrt(vb);
      const double l = (2 * ma * mb + p.c_l) / (ma * ma + mb * mb + p.c_l);
      const double c = (2 * sa * sb + p.c_c) / (va + vb + p.c_c);
      const double s = p.structure == StructureTerm::Reference ? (cab + p.c_s) / (sa * sb + p.c_s)
                                                               : (cab + p.c_s) / (sa + sb + p.c_s);
      acc += l * c * s;
      ++windows;
    }
  return acc / double(windows);
}

double rms(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return std::sqrt(s / double(a.size()));
}

Image checkerboard(std::size_t n, std::size_t cell) {
  Image img(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) img(y, x) = ((y / cell + x / cell) % 2) ? 1.0 : 0.0;
  return img;
}

Image invert(Image img) {
  for (double& v : img.pixels) v = 1 - v;
  return img;
}

}  // namespace

TEST(Ssim, IdentityIsOne) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(24, 20, rng);
    EXPECT_NEAR(ssim_value(img.to_tensor(), img.to_tensor()), 1.0, 1e-9);
  }
  const Image flat(16, 16, 0.3);
  EXPECT_NEAR(ssim_value(flat.to_tensor(), flat.to_tensor()), 1.0, 1e-9);
}

TEST(Ssim, SymmetricAndBounded) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_image(16, 16, rng), b = random_image(16, 16, rng);
    const double ab = ssim_value(a.to_tensor(), b.to_tensor()), ba = ssim_value(b.to_tensor(), a.to_tensor());
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GT(ab, -1.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Ssim, MatchesWindowOracle) {
  std::mt19937_64 rng(3);
  for (StructureTerm st : {StructureTerm::Reference, StructureTerm::Printed}) {
    SSIMParams p = SSIMParams::standard();
    p.structure = st;
    for (int t = 0; t < 10; ++t) {
      const auto a = random_image(20, 23, rng), b = random_image(20, 23, rng);
      EXPECT_NEAR(ssim_value(a.to_tensor(), b.to_tensor(), p), ssim_oracle(a, b, p), 1e-10);
    }
  }
  // General three-factor path with an independent c_s.
  SSIMParams q = SSIMParams::standard(7, 1.0);
  q.c_s = 1e-3;
  ASSERT_FALSE(q.collapses());
  const auto a = random_image(16, 16, rng), b = random_image(16, 16, rng);
  EXPECT_NEAR(ssim_value(a.to_tensor(), b.to_tensor(), q), ssim_oracle(a, b, q), 1e-10);
}

TEST(Ssim, CheckerboardAgainstInverseIsNegative) {
  const Image cb = checkerboard(32, 4);
  const double v = ssim_value(cb.to_tensor(), invert(cb).to_tensor());
  EXPECT_LT(v, 0.0);
  EXPECT_NEAR(v, ssim_oracle(cb, invert(cb), SSIMParams::standard()), 1e-10);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  for (StructureTerm st : {StructureTerm::Reference, StructureTerm::Printed}) {
    SSIMParams p = SSIMParams::standard();
    p.structure = st;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      const auto r = check_gradients([&p](Graph<double>&, const auto& v) { return ssim(v[0], v[1], p); },
                                     {random_image(16, 16, rng).to_tensor(), random_image(16, 16, rng).to_tensor()},
                                     {true, true}, 1e-5);
      EXPECT_LT(r.worst_rel, 1e-4) << "seed " << seed;
    }
  }
}

TEST(Ssim, ImageSmallerThanWindowIsShapeError) {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>(Shape{1, 1, 10, 20}));
  EXPECT_THROW(ssim(a, a), ShapeError);
  EXPECT_THROW(ssim(a, g.leaf(Tensor<double>(Shape{1, 1, 10, 21}))), ShapeError);
}

TEST(L2Term, ConstantsAndOracle) {
  Graph<double> g;
  const Image zero(8, 8, 0.0), one(8, 8, 1.0), half(8, 8, 0.5);
  EXPECT_EQ(l2_term(g.leaf(half.to_tensor()), g.leaf(zero.to_tensor()), g.leaf(one.to_tensor())).tensor().item(), 1.0);
  EXPECT_EQ(l2_term(g.leaf(half.to_tensor()), g.leaf(half.to_tensor()), g.leaf(half.to_tensor())).tensor().item(), 0.0);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto f = random_image(12, 9, rng), a = random_image(12, 9, rng), b = random_image(12, 9, rng);
    EXPECT_NEAR(l2_term(g.leaf(f.to_tensor()), g.leaf(a.to_tensor()), g.leaf(b.to_tensor())).tensor().item(),
                rms(f, a) + rms(f, b), 1e-12);
  }
}

TEST(L2Term, GradientMatchesFiniteDifferencesAndIsZeroAtOptimum) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = check_gradients([](Graph<double>&, const auto& v) { return l2_term(v[0], v[1], v[2]); },
                                   {random_image(8, 8, rng).to_tensor(), random_image(8, 8, rng).to_tensor(),
                                    random_image(8, 8, rng).to_tensor()},
                                   {true, true, true});
    EXPECT_LT(r.worst_rel, 1e-4);
  }
  Graph<double> g;
  const Image img(8, 8, 0.4);
  auto f = g.leaf(img.to_tensor(), true);
  g.backward(l2_term(f, g.constant(img.to_tensor()), g.constant(img.to_tensor())));
  for (double d : f.grad()) EXPECT_EQ(d, 0.0);
}

TEST(TotalLoss, EndpointsAreExact) {
  std::mt19937_64 rng(5);
  const auto f = random_image(16, 16, rng), a = random_image(16, 16, rng), b = random_image(16, 16, rng);
  Graph<double> g;
  auto vf = g.leaf(f.to_tensor()), va = g.constant(a.to_tensor()), vb = g.constant(b.to_tensor());
  const auto t0 = total_loss(vf, va, vb, 0.0);
  EXPECT_EQ(t0.total.tensor().item(), t0.l2.tensor().item());
  const auto t1 = total_loss(vf, va, vb, 1.0);
  EXPECT_EQ(t1.total.tensor().item(), t1.ssim_loss.tensor().item());
  EXPECT_THROW(total_loss(vf, va, vb, 1.01), ArgumentError);
}

TEST(TotalLoss, PerfectFusionIsZero) {
  std::mt19937_64 rng(6);
  const auto img = random_image(16, 16, rng);
  Graph<double> g;
  auto v = g.leaf(img.to_tensor());
  EXPECT_NEAR(total_loss(v, v, v, 1.0).total.tensor().item(), 0.0, 1e-9);
}

TEST(TotalLoss, MatchesTwoTermOracleAndIsAffineInLambda) {
  std::mt19937_64 rng(7);
  const auto f = random_image(16, 16, rng), a = random_image(16, 16, rng), b = random_image(16, 16, rng);
  const SSIMParams p = SSIMParams::standard();
  const double A = (1 - ssim_oracle(f, a, p)) + (1 - ssim_oracle(f, b, p));
  const double B = rms(f, a) + rms(f, b);
  for (double lambda : {0.0, 0.1, 0.37, 0.8, 1.0}) {
    Graph<double> g;
    const double v =
        total_loss(g.leaf(f.to_tensor()), g.constant(a.to_tensor()), g.constant(b.to_tensor()), lambda).total.tensor().item();
    EXPECT_NEAR(v, lambda * A + (1 - lambda) * B, 1e-10) << lambda;
    EXPECT_GE(v, 0.0);
  }
}

TEST(TotalLoss, GradientReachesFusedImageOnly) {
  std::mt19937_64 rng(8);
  Graph<double> g;
  auto f = g.leaf(random_image(16, 16, rng).to_tensor(), true);
  auto a = g.constant(random_image(16, 16, rng).to_tensor());
  auto b = g.constant(random_image(16, 16, rng).to_tensor());
  g.backward(total_loss(f, a, b, 0.8).total);
  EXPECT_FALSE(f.grad().empty());
  EXPECT_TRUE(a.grad().empty());
  EXPECT_TRUE(b.grad().empty());
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto a = random_image(16, 16, rng).to_tensor(), b = random_image(16, 16, rng).to_tensor();
    const auto r = check_gradients(
        [&](Graph<double>& g, const auto& v) { return total_loss(v[0], g.constant(a), g.constant(b), 0.8).total; },
        {random_image(16, 16, rng).to_tensor()}, {true});
    EXPECT_LT(r.worst_rel, 1e-4);
  }
}
