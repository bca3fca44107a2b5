#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "dpcml/dpcml.hpp"
#include "oracles.hpp"

using namespace dpcml;

namespace {

EmbeddingStore<double> two_vector_user() {
  EmbeddingStore<double> s(1, 2, 2, 2, 100.0, ScoreVariant::euclidean);
  s.user(0, 1)[0] = 3;
  s.user(0, 1)[1] = 4;
  s.item(0)[0] = 3;
  s.item(0)[1] = 4;
  s.item(1)[0] = 1;
  return s;
}

}  // namespace

TEST(Score, ExactMatchPicksSecondVector) {
  const auto s = two_vector_user();
  const auto sc = score(s, 0, 0);
  EXPECT_EQ(sc.value, 0.0);
  EXPECT_EQ(sc.argmin_c, 1u);
}

TEST(Score, HandComputedMinimum) {
  const auto s = two_vector_user();
  const auto sc = score(s, 0, 1);
  EXPECT_EQ(sc.value, 1.0);
  EXPECT_EQ(sc.argmin_c, 0u);
}

TEST(Score, OutOfRangeIsBoundsError) {
  const auto s = two_vector_user();
  EXPECT_THROW(score(s, 1, 0), BoundsError);
  EXPECT_THROW(score(s, 0, 2), BoundsError);
}

TEST(Score, TiesGoToLowestVector) {
  EmbeddingStore<double> s(1, 1, 3, 2, 1.0, ScoreVariant::euclidean);
  EXPECT_EQ(score(s, 0, 0).argmin_c, 0u);
}

TEST(InitStore, DeterministicAndFeasible) {
  ModelConfig cfg;
  cfg.C = 2;
  cfg.d = 4;
  EXPECT_EQ(init_store<float>(2, 3, cfg, 0), init_store<float>(2, 3, cfg, 0));
  EXPECT_NE(init_store<float>(2, 3, cfg, 0), init_store<float>(2, 3, cfg, 1));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.d = 3;  // small d puts many draws outside the unit ball
    const auto e = init_store<double>(20, 20, cfg, seed);
    for (std::size_t u = 0; u < 20; ++u)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_LE(std::sqrt(squared_norm(e.user(u, c))), 1.0 + 1e-12);
    for (std::size_t v = 0; v < 20; ++v) EXPECT_LE(std::sqrt(squared_norm(e.item(v))), 1.0 + 1e-12);

    cfg.variant = ScoreVariant::spherical;
    const auto sph = init_store<double>(20, 20, cfg, seed);
    cfg.variant = ScoreVariant::euclidean;
    for (std::size_t v = 0; v < 20; ++v) EXPECT_NEAR(std::sqrt(squared_norm(sph.item(v))), 1.0, 1e-6);
    for (std::size_t u = 0; u < 20; ++u)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(std::sqrt(squared_norm(sph.user(u, c))), 1.0, 1e-6);
  }
}

TEST(Project, Examples) {
  std::vector<double> a{3, 4};
  project_vector(std::span<double>(a), ScoreVariant::euclidean, 1.0);
  EXPECT_NEAR(a[0], 0.6, 1e-15);
  EXPECT_NEAR(a[1], 0.8, 1e-15);

  std::vector<double> b{0.1, 0.2};
  project_vector(std::span<double>(b), ScoreVariant::euclidean, 1.0);
  EXPECT_EQ(b, (std::vector<double>{0.1, 0.2}));

  std::vector<double> z{0, 0, 0};
  project_vector(std::span<double>(z), ScoreVariant::spherical, 1.0);
  EXPECT_EQ(z, (std::vector<double>{1, 0, 0}));

  std::vector<double> inf_r{30, 40};
  project_vector(std::span<double>(inf_r), ScoreVariant::euclidean, std::numeric_limits<double>::infinity());
  EXPECT_EQ(inf_r, (std::vector<double>{30, 40}));
}

TEST(RankItems, SortedByScore) {
  // Scores 0.5, 0.1, 0.9 for items 0, 1, 2 via squared distances on a line.
  EmbeddingStore<double> s(1, 3, 1, 1, 10.0, ScoreVariant::euclidean);
  s.item(0)[0] = std::sqrt(0.5);
  s.item(1)[0] = std::sqrt(0.1);
  s.item(2)[0] = std::sqrt(0.9);
  auto r = rank_items(s, 0, {}, 2);
  EXPECT_EQ(r.items, (std::vector<ItemIndex>{1, 0}));
  EXPECT_FALSE(r.is_short);

  const std::vector<ItemIndex> ex{1};
  r = rank_items(s, 0, ex, 5);
  EXPECT_EQ(r.items, (std::vector<ItemIndex>{0, 2}));
  EXPECT_TRUE(r.is_short);
}

TEST(RankItems, IdenticalVectorsLowerIndexFirst) {
  EmbeddingStore<double> s(1, 4, 1, 2, 1.0, ScoreVariant::euclidean);
  for (std::size_t v = 0; v < 4; ++v) s.item(v)[0] = 0.5;
  EXPECT_EQ(rank_items(s, 0, {}, 4).items, (std::vector<ItemIndex>{0, 1, 2, 3}));
}

TEST(ScoreProperty, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 1 + rng() % 4, d = 1 + rng() % 6;
    const auto variant = trial % 2 ? ScoreVariant::spherical : ScoreVariant::euclidean;
    const auto s = ref::random_store(3, 5, C, d, variant, trial);
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 5; ++v) {
        std::size_t argmin = 0;
        const double brute = ref::brute_score(s, u, v, &argmin);
        const auto sc = score(s, u, v);
        EXPECT_DOUBLE_EQ(sc.value, brute);
        EXPECT_EQ(sc.argmin_c, argmin);
        if (variant == ScoreVariant::euclidean) {
          EXPECT_GE(sc.value, 0.0);
        } else {
          EXPECT_GE(sc.value, -1e-12);
          EXPECT_LE(sc.value, 2.0 + 1e-12);
        }
      }
  }
}

TEST(ScoreProperty, PermutingUserVectorsKeepsValue) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng() % 3;
    auto s = ref::random_store(1, 6, C, 4, ScoreVariant::euclidean, trial);
    auto p = s;
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t c = 0; c < C; ++c)
      std::copy(s.user(0, perm[c]).begin(), s.user(0, perm[c]).end(), p.user(0, c).begin());
    for (std::size_t v = 0; v < 6; ++v) {
      const auto a = score(s, 0, v), b = score(p, 0, v);
      EXPECT_EQ(a.value, b.value);
      EXPECT_EQ(perm[b.argmin_c], a.argmin_c);
    }
  }
}

TEST(ScoreProperty, UnitEuclideanIsTwiceSpherical) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto sph = ref::random_store(2, 4, 3, 5, ScoreVariant::spherical, seed);
    EmbeddingStore<double> euc(2, 4, 3, 5, 1.0, ScoreVariant::euclidean);
    std::copy(sph.user_table().begin(), sph.user_table().end(), euc.user_table().begin());
    std::copy(sph.item_table().begin(), sph.item_table().end(), euc.item_table().begin());
    for (std::size_t u = 0; u < 2; ++u)
      for (std::size_t v = 0; v < 4; ++v) {
        const auto a = score(euc, u, v), b = score(sph, u, v);
        EXPECT_NEAR(a.value, 2.0 * b.value, 1e-6);
        EXPECT_EQ(a.argmin_c, b.argmin_c);
      }
  }
}

TEST(ScoreProperty, TriangleInequalityOnItems) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = ref::random_store(1, 8, 1, 4, ScoreVariant::euclidean, seed);
    for (std::size_t a = 0; a < 8; ++a)
      for (std::size_t b = 0; b < 8; ++b)
        for (std::size_t c = 0; c < 8; ++c) {
          const double ac = std::sqrt(squared_distance(s.item(a), s.item(c)));
          const double ab = std::sqrt(squared_distance(s.item(a), s.item(b)));
          const double bc = std::sqrt(squared_distance(s.item(b), s.item(c)));
          EXPECT_LE(ac, ab + bc + 1e-12);
        }
  }
}

TEST(Checkpoint, RoundTripAndLayout) {
  ModelConfig cfg;
  cfg.C = 2;
  cfg.d = 3;
  cfg.variant = ScoreVariant::spherical;
  const auto store = init_store<float>(4, 5, cfg, 9);
  std::stringstream buf;
  write_checkpoint(buf, store);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4 + 6 * 4 + 8 + (4 * 2 * 3 + 5 * 3) * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "DPCM");
  auto u32_at = [&](std::size_t off) {
    std::uint32_t x = 0;
    for (int i = 3; i >= 0; --i) x = (x << 8) | std::uint8_t(bytes[off + std::size_t(i)]);
    return x;
  };
  EXPECT_EQ(u32_at(4), 1u);   // version
  EXPECT_EQ(u32_at(8), 4u);   // |U|
  EXPECT_EQ(u32_at(12), 5u);  // |I|
  EXPECT_EQ(u32_at(16), 2u);  // C
  EXPECT_EQ(u32_at(20), 3u);  // d
  EXPECT_EQ(u32_at(24), 1u);  // spherical
  // User vector c of user u starts at (u*C + c)*d in the user table.
  const std::size_t tables = 4 + 6 * 4 + 8;
  EXPECT_EQ(std::bit_cast<float>(u32_at(tables + ((1 * 2 + 1) * 3 + 2) * 4)), store.user(1, 1)[2]);

  buf.seekg(0);
  EXPECT_EQ(read_checkpoint(buf), store);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("NOPE0000");
  EXPECT_THROW(read_checkpoint(bad), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}
