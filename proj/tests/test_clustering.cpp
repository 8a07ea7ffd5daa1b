#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "refinery/clustering.hpp"
#include "refinery/common.hpp"

using namespace refinery;

namespace {

using Clusters = std::vector<std::vector<std::size_t>>;

// Four loose groups plus two outliers, laid out so the merge order is easy
// to follow by hand.
const std::vector<Embedding>& hand_fixture() {
  static const std::vector<Embedding> pts = {
      {0, 0}, {0, 1}, {1, 0},        // 0..2 corner group
      {5, 5}, {5, 6},                // 3..4 middle pair
      {10, 0}, {10, 0.5}, {11, 0},   // 5..7 right group
      {0, 10},                       // 8 outlier
      {3, 3},                        // 9 bridge
  };
  return pts;
}

std::vector<Embedding> blobs(std::size_t n, std::uint64_t seed, std::size_t dim = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> centre(0, 5);
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = centre(rng);
    Embedding e(dim);
    for (std::size_t d = 0; d < dim; ++d) e[d] = 6.0 * ((c >> (d % 3)) & 1) + noise(rng);
    out.push_back(e);
  }
  return out;
}

oracle::Link to_oracle(Linkage l) {
  switch (l) {
    case Linkage::kWard: return oracle::Link::kWard;
    case Linkage::kComplete: return oracle::Link::kComplete;
    case Linkage::kAverage: return oracle::Link::kAverage;
  }
  return oracle::Link::kWard;
}

}  // namespace

TEST(Agglomerate, Trivial) {
  const std::vector<Embedding> one{{1.0, 2.0}};
  EXPECT_EQ(agglomerate(one, 0.5), (Clusters{{0}}));
  const std::vector<Embedding> two{{0.0}, {3.0}};
  EXPECT_EQ(agglomerate(two, 2.0).size(), 2u);
  EXPECT_EQ(agglomerate(two, 4.0).size(), 1u);
  // Stop rule is >= delta: a gap of exactly delta stays split.
  EXPECT_EQ(agglomerate(two, 3.0).size(), 2u);
}

TEST(Agglomerate, Preconditions) {
  const std::vector<Embedding> mismatch{{1.0, 2.0}, {1.0}};
  EXPECT_THROW(agglomerate(mismatch, 1.0), ContractViolation);
  const std::vector<Embedding> ok{{1.0}};
  EXPECT_THROW(agglomerate(ok, 0.0), ContractViolation);
}

TEST(Agglomerate, HandFixtureMatchesOracle) {
  const auto& x = hand_fixture();
  for (double delta : {1.0, 2.5, 5.0}) {
    EXPECT_EQ(agglomerate(x, delta), oracle::agglomerate(x, delta)) << "delta " << delta;
  }
  // Hand-derived: at 1.0 only the 0.5-apart pair merges (unit gaps stay split).
  Clusters at1;
  for (std::size_t i = 0; i < 10; ++i) {
    if (i == 6) continue;
    at1.push_back(i == 5 ? std::vector<std::size_t>{5, 6} : std::vector<std::size_t>{i});
  }
  EXPECT_EQ(agglomerate(x, 1.0), at1);
  // At 2.5 the three groups form; 8 and 9 stay alone.
  EXPECT_EQ(agglomerate(x, 2.5), (Clusters{{0, 1, 2}, {3, 4}, {5, 6, 7}, {8}, {9}}));
}

TEST(Agglomerate, RandomSetsMatchOracleForAllLinkages) {
  for (auto link : {Linkage::kWard, Linkage::kComplete, Linkage::kAverage}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto x = blobs(30, seed);
      for (double delta : {1.0, 3.0, 6.0, 12.0}) {
        ASSERT_EQ(agglomerate(x, delta, link), oracle::agglomerate(x, delta, to_oracle(link)))
            << linkage_name(link) << " seed " << seed << " delta " << delta;
      }
    }
  }
}

TEST(Agglomerate, DuplicatePointsMatchOracle) {
  auto x = blobs(20, 3);
  x.push_back(x[4]);
  x.push_back(x[4]);
  x.push_back(x[11]);
  for (double delta : {0.5, 2.0, 5.0}) {
    EXPECT_EQ(agglomerate(x, delta), oracle::agglomerate(x, delta));
  }
  const std::vector<Embedding> same(5, Embedding{1.0, 1.0});
  EXPECT_EQ(agglomerate(same, 1e-9), (Clusters{{0, 1, 2, 3, 4}}));
}

TEST(Agglomerate, EqualDistanceTieBreak) {
  // Square with unit sides: four equal candidate pairs; (0,1) must go first.
  const std::vector<Embedding> sq{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  const auto cl = agglomerate(sq, 1.05);
  EXPECT_EQ(cl, oracle::agglomerate(sq, 1.05));
  EXPECT_EQ(cl, (Clusters{{0, 1}, {2, 3}}));
}

TEST(Agglomerate, DeterministicAcrossRuns) {
  const auto x = blobs(200, 42);
  const auto first = dump_compact(Json(agglomerate(x, 4.0)));
  for (int run = 0; run < 10; ++run) {
    EXPECT_EQ(dump_compact(Json(agglomerate(x, 4.0))), first);
  }
}

TEST(Agglomerate, ClusterCountNonincreasingInDelta) {
  const auto x = blobs(200, 7);
  std::size_t prev = x.size() + 1;
  for (int d = 1; d <= 10; ++d) {
    const auto n = agglomerate(x, d).size();
    EXPECT_LE(n, prev) << "delta " << d;
    prev = n;
  }
}

TEST(Agglomerate, PartitionCoversAllPoints) {
  const auto x = blobs(200, 9);
  const auto cl = agglomerate(x, 5.0);
  std::vector<int> seen(x.size(), 0);
  for (const auto& c : cl) {
    ASSERT_FALSE(c.empty());
    for (auto i : c) ++seen[i];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Medoid, HandCases) {
  const std::vector<Embedding> line{{0.0}, {1.0}, {10.0}};
  const std::vector<std::size_t> all{0, 1, 2};
  EXPECT_EQ(medoid(all, line), 1u);
  const std::vector<std::size_t> single{2};
  EXPECT_EQ(medoid(single, line), 2u);
  const std::vector<Embedding> pair{{0.0}, {2.0}};
  const std::vector<std::size_t> both{0, 1};
  EXPECT_EQ(medoid(both, pair), 0u);
}

TEST(Medoid, MatchesOracleOnEveryCluster) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto x = blobs(200, seed);
    for (const auto& c : agglomerate(x, 6.0)) {
      if (c.size() > 50) continue;
      const auto m = medoid(c, x);
      ASSERT_EQ(m, oracle::medoid(c, x));
      ASSERT_TRUE(std::find(c.begin(), c.end(), m) != c.end());
    }
  }
  const auto x = blobs(50, 11, 8);
  std::vector<std::size_t> all(50);
  for (std::size_t i = 0; i < 50; ++i) all[i] = i;
  EXPECT_EQ(medoid(all, x), oracle::medoid(all, x));
}

TEST(Cosine, ZeroNormConvention) {
  const std::vector<double> z{0.0, 0.0}, a{1.0, 0.0}, b{0.0, 2.0};
  EXPECT_EQ(cosine_similarity(z, a), 0.0);
  EXPECT_NEAR(cosine_similarity(a, b), 0.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_NEAR(euclidean_distance(a, b), std::sqrt(5.0), 1e-15);
}
