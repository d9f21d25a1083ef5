// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "leafnet/parallel.hpp"
#include "leafnet/random.hpp"

namespace leafnet {
namespace {

TEST(Rng, EngineMatchesStandardReference) {
  // The standard fixes the 10000th output of a default-seeded mt19937_64.
  std::mt19937_64 ref;
  ref.discard(9999);
  EXPECT_EQ(ref(), 9981545732273789042ULL);
  Rng rng(5489);
  for (int i = 0; i < 9999; ++i) rng.next_u64();
  EXPECT_EQ(rng.next_u64(), 9981545732273789042ULL);
}

TEST(Rng, UniformRangeAndMoments) {
  Rng rng(1);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
  Rng rng(2);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, BelowIsUnbiasedAndInRange) {
  Rng rng(3);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, SerializeRestoresStream) {
  Rng a(4);
  a.normal();  // leaves a cached spare
  const auto state = a.serialize();
  Rng b;
  b.deserialize(state);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
}

TEST(Rng, DerivedSeedsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t e = 0; e < 20; ++e)
    for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(7, {e, i}));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
  EXPECT_NE(derive_seed(7, "head"), derive_seed(7, "backbone"));
}

TEST(Parallel, CoversRangeOnceForAnyWorkerCount) {
  const std::size_t saved = num_threads();
  for (std::size_t workers : {1u, 2u, 3u, 8u}) {
    set_num_threads(workers);
    std::vector<int> hits(1003, 0);
    parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) ++hits[i];
    });
    for (int h : hits) ASSERT_EQ(h, 1);
  }
  set_num_threads(saved);
}

TEST(Parallel, NestedCallsRunInline) {
  const std::size_t saved = num_threads();
  set_num_threads(4);
  std::vector<int> hits(64, 0);
  parallel_for(8, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      parallel_for(8, [&](std::size_t b2, std::size_t e2) {
        for (std::size_t j = b2; j < e2; ++j) ++hits[i * 8 + j];
      });
    }
  });
  for (int h : hits) EXPECT_EQ(h, 1);
  set_num_threads(saved);
}

}  // namespace
}  // namespace leafnet
