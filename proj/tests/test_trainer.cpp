#include <sstream>

#include "support.hpp"

using namespace ssimfuse;
using namespace testing_support;

namespace {

ParamSet<double> single_param(std::vector<double> values) {
  ParamSet<double> p;
  const Shape shape{1, 1, 1, values.size()};
  p.add("w", Tensor<double>(shape, std::move(values)), ParamKind::Weight);
  return p;
}

std::vector<ImagePair> small_phantoms(std::size_t count, std::size_t side = 32) {
  PhantomSpec spec;
  spec.count = count;
  spec.width = spec.height = side;
  return generate_phantoms(spec);
}

FusionConfig quick_config(int epochs, double lambda = 0.8) {
  FusionConfig c;
  c.epochs = epochs;
  c.lambda = lambda;
  return c;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = single_param({1.0, -2.0, 0.5});
  auto s = AdamState<double>::for_params(p, 0.002);
  adam_step(p, {{3.0, -0.01, 1e3}}, s);
  // Bias correction makes the first update lr * g / |g| up to eps.
  EXPECT_NEAR(p.get("w")[0], 1.0 - 0.002, 1e-9);
  EXPECT_NEAR(p.get("w")[1], -2.0 + 0.002, 1e-8);
  EXPECT_NEAR(p.get("w")[2], 0.5 - 0.002, 1e-9);
  EXPECT_EQ(s.step, 1u);
  EXPECT_EQ(p.steps, 1u);
}

TEST(Adam, ZeroGradientLeavesValueButAdvancesStep) {
  auto p = single_param({0.25});
  auto s = AdamState<double>::for_params(p, 0.01);
  adam_step(p, {{0.0}}, s);
  EXPECT_EQ(p.get("w")[0], 0.25);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, MatchesClosedFormRecurrence) {
  const std::vector<double> grads{0.3, -1.2, 0.7, 0.05, -0.4, 2.0};
  auto p = single_param({0.0});
  auto s = AdamState<double>::for_params(p, 0.05);
  double x = 0, m = 0, v = 0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, double(t)))) / (std::sqrt(v / (1 - std::pow(0.999, double(t)))) + 1e-8);
    adam_step(p, {{g}}, s);
    EXPECT_NEAR(p.get("w")[0], x, 1e-14) << t;
  }
}

TEST(Adam, SkipsRunningStatisticsAndRejectsBadGradients) {
  ParamSet<double> p;
  p.add("w", Tensor<double>(Shape{1, 1, 1, 2}, {1, 2}), ParamKind::Weight);
  p.add("rm", Tensor<double>(Shape{1, 1, 1, 2}, {5, 6}), ParamKind::RunningMean);
  auto s = AdamState<double>::for_params(p, 0.1);
  adam_step(p, {{1, 1}, {}}, s);
  EXPECT_EQ(p.get("rm")[0], 5.0);
  EXPECT_LT(p.get("w")[0], 1.0);
  EXPECT_THROW(adam_step(p, {{1, 1}}, s), ShapeError);
  EXPECT_THROW(adam_step(p, {{1}, {}}, s), ShapeError);
}

TEST(Shuffle, IsAPermutationAndDeterministic) {
  std::vector<std::size_t> a(50);
  std::iota(a.begin(), a.end(), std::size_t(0));
  std::vector<std::size_t> b(a);
  std::mt19937_64 r1(9), r2(9);
  seeded_shuffle(a, r1);
  seeded_shuffle(b, r2);
  EXPECT_EQ(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Train, ZeroLearningRateKeepsLearnableParameters) {
  auto cfg = quick_config(1);
  cfg.lr = 0;
  const auto data = small_phantoms(2);
  const auto r = train(cfg, data, 3);
  const auto init = init_params<double>(cfg, 3);
  for (std::size_t k = 0; k < init.size(); ++k) {
    const auto& e = init.entries()[k];
    if (e.learnable()) {
      EXPECT_EQ(e.value.vec(), r.params.entries()[k].value.vec()) << e.name;
    }
  }
  EXPECT_EQ(r.params.steps, 2u);
}

TEST(Train, SameSeedIsBitwiseReproducible) {
  const auto cfg = quick_config(2);
  const auto data = small_phantoms(3);
  const auto a = train(cfg, data, 11);
  const auto b = train(cfg, data, 11);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_TRUE(a.history == b.history);
  const auto c = train(cfg, data, 12);
  EXPECT_FALSE(a.params == c.params);
}

TEST(Train, ReproducibleAcrossHeapLayouts) {
  const auto cfg = quick_config(1);
  const auto data = small_phantoms(2);
  const auto a = train(cfg, data, 5);
  // Odd-sized live allocations shift where later buffers land.
  std::vector<std::unique_ptr<char[]>> ballast;
  for (std::size_t i = 1; i < 64; ++i) ballast.emplace_back(new char[i * 24 + 8]);
  const auto b = train(cfg, data, 5);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_TRUE(a.history == b.history);
}

TEST(Train, RecordsEveryPairEachEpoch) {
  const auto data = small_phantoms(3);
  int calls = 0;
  const auto r = train(quick_config(2), data, 1, [&](const TrainRecord& rec) { EXPECT_EQ(rec.epoch, ++calls); });
  EXPECT_EQ(calls, 2);
  ASSERT_EQ(r.history.size(), 2u);
  for (const auto& rec : r.history) {
    ASSERT_EQ(rec.per_pair.size(), 3u);
    double total = 0;
    std::set<std::string> ids;
    for (const auto& p : rec.per_pair) {
      total += p.loss.l_total;
      ids.insert(p.pair_id);
    }
    EXPECT_EQ(ids.size(), 3u);
    EXPECT_NEAR(rec.mean.l_total, total / 3, 1e-12);
  }
}

TEST(Train, LambdaZeroStillReportsSsimTerms) {
  const auto r = train(quick_config(1, 0.0), small_phantoms(2), 1);
  const auto& m = r.history[0].mean;
  EXPECT_GT(m.l_ssim_a, 0.0);
  EXPECT_GT(m.l_ssim_b, 0.0);
  EXPECT_NEAR(m.l_total, m.l_l2, 1e-12);
}

TEST(Train, NoNonFiniteLossAcrossLambdaGrid) {
  const auto data = small_phantoms(16);
  for (int k = 0; k <= 10; ++k) {
    const double lambda = k / 10.0;
    TrainResult r;
    ASSERT_NO_THROW(r = train(quick_config(2, lambda), data, 42)) << lambda;
    for (const auto& rec : r.history)
      for (const auto& p : rec.per_pair) EXPECT_TRUE(p.loss.finite()) << lambda;
  }
}

TEST(Train, DivergenceAbortsWithDiagnostics) {
  // Steps of order lr push weights past the double range on the second pair.
  auto cfg = quick_config(3);
  cfg.lr = 1e300;
  try {
    train(cfg, small_phantoms(4), 1);
    FAIL() << "training did not abort";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.tag(), "non-finite-loss");
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("pair"), std::string::npos);
  }
}

TEST(Train, RejectsEmptyOrInvalidData) {
  EXPECT_THROW(train(quick_config(1), {}, 1), ArgumentError);
  auto bad = small_phantoms(1);
  bad[0].functional.pixels[0] = 1.5;
  EXPECT_THROW(train(quick_config(1), bad, 1), ArgumentError);
  auto cfg = quick_config(1);
  cfg.lambda = 2;
  EXPECT_THROW(train(cfg, small_phantoms(1), 1), ConfigError);
}

TEST(LossCsv, HeaderAndRows) {
  const auto r = train(quick_config(2), small_phantoms(2), 1);
  std::ostringstream os;
  write_loss_csv(os, r.history);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "epoch,l_ssim_a,l_ssim_b,l_l2,l_total");
  for (int epoch = 1; epoch <= 2; ++epoch) {
    ASSERT_TRUE(std::getline(is, line));
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 5u);
    EXPECT_EQ(std::stoi(cells[0]), epoch);
    EXPECT_EQ(std::stod(cells[4]), r.history[std::size_t(epoch - 1)].mean.l_total);
  }
  EXPECT_FALSE(std::getline(is, line));
}
