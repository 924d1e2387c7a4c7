#include <fstream>

#include "support.hpp"

using namespace ssimfuse;
using namespace testing_support;

namespace {

/// Mean squared 4-neighbour Laplacian over interior pixels.
double laplacian_energy(const Image& img) {
  double e = 0;
  std::size_t n = 0;
  for (std::size_t y = 1; y + 1 < img.height; ++y)
    for (std::size_t x = 1; x + 1 < img.width; ++x) {
      const double l = img(y - 1, x) + img(y + 1, x) + img(y, x - 1) + img(y, x + 1) - 4 * img(y, x);
      e += l * l;
      ++n;
    }
  return e / double(n);
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Phantom, FilesAreByteIdenticalAcrossRuns) {
  const PhantomSpec spec;
  const auto a = scratch_dir("ph_a"), b = scratch_dir("ph_b");
  write_phantoms(spec, a);
  write_phantoms(spec, b);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 32u);
}

TEST(Phantom, PairsAreValidAndNamed) {
  PhantomSpec spec;
  spec.count = 5;
  spec.width = 48;
  spec.height = 40;
  const auto pairs = generate_phantoms(spec);
  ASSERT_EQ(pairs.size(), 5u);
  EXPECT_EQ(pairs[0].id, "phantom_0000");
  EXPECT_EQ(pairs[4].id, "phantom_0004");
  for (const auto& p : pairs) {
    EXPECT_NO_THROW(p.validate());
    EXPECT_EQ(p.anatomical.height, 40u);
    EXPECT_EQ(p.anatomical.width, 48u);
    for (double v : p.functional.pixels) EXPECT_EQ(v, to_byte(v) / 255.0);
  }
}

TEST(Phantom, GenerationMatchesDisk) {
  PhantomSpec spec;
  spec.count = 3;
  const auto dir = scratch_dir("ph");
  const auto pairs = write_phantoms(spec, dir);
  const auto loaded = load_dataset(dir);
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].id, pairs[i].id);
    EXPECT_EQ(loaded[i].anatomical.pixels, pairs[i].anatomical.pixels);
    EXPECT_EQ(loaded[i].functional.pixels, pairs[i].functional.pixels);
  }
}

TEST(Phantom, FunctionalIsSmootherThanAnatomical) {
  for (std::uint64_t seed : {7u, 1007u, 99u}) {
    PhantomSpec spec;
    spec.seed = seed;
    for (const auto& p : generate_phantoms(spec))
      EXPECT_LT(laplacian_energy(p.functional), laplacian_energy(p.anatomical)) << p.id;
  }
}

TEST(Phantom, SeedAndIndexChangeContent) {
  PhantomSpec a, b;
  b.seed = 8;
  EXPECT_NE(generate_phantom(a, 0).anatomical.pixels, generate_phantom(b, 0).anatomical.pixels);
  EXPECT_NE(generate_phantom(a, 0).anatomical.pixels, generate_phantom(a, 1).anatomical.pixels);
  EXPECT_EQ(generate_phantom(a, 3).functional.pixels, generate_phantoms(a)[3].functional.pixels);
}

TEST(Phantom, RejectsBadSpecs) {
  PhantomSpec s;
  s.count = 0;
  EXPECT_THROW(generate_phantoms(s), ArgumentError);
  s = {};
  s.width = 16;
  EXPECT_THROW(generate_phantoms(s), ArgumentError);
  s = {};
  s.blur_sigma = 0;
  EXPECT_THROW(generate_phantoms(s), ArgumentError);
}
