#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <random>

#include "oracles.hpp"
#include "sunet/metrics.hpp"

using namespace sunet;

namespace {

bool bit_equal(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

ContourPointSet points(std::initializer_list<ContourPoint> p) { return ContourPointSet{std::vector<ContourPoint>(p)}; }

void expect_oracle(const ContourPointSet& x, const ContourPointSet& y) {
  const auto got = distance_metrics(x, y), want = oracle::distance_metrics(x, y);
  EXPECT_TRUE(bit_equal(got.hausdorff, want.hausdorff)) << got.hausdorff << " vs " << want.hausdorff;
  EXPECT_TRUE(bit_equal(got.mad_ab, want.mad_ab));
  EXPECT_TRUE(bit_equal(got.mad_ba, want.mad_ba));
  EXPECT_TRUE(bit_equal(got.smad, want.smad));
}

}  // namespace

TEST(RegionMetrics, Fixtures) {
  BinaryMask a(4, 4), b(4, 4);
  a.at(1, 1) = a.at(1, 2) = 1;
  auto same = region_metrics(a, a);
  EXPECT_EQ(same.dice, 1.0);
  EXPECT_EQ(same.jaccard, 1.0);
  EXPECT_EQ(same.fpd, 0.0);
  EXPECT_EQ(same.fnd, 0.0);

  b.at(3, 3) = 1;
  auto disjoint = region_metrics(a, b);
  EXPECT_EQ(disjoint.dice, 0.0);
  EXPECT_EQ(disjoint.jaccard, 0.0);

  b.at(3, 3) = 0;
  b.at(1, 1) = 1;
  auto m = region_metrics(a, b);
  EXPECT_NEAR(m.dice, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.jaccard, 0.5, 1e-15);
  EXPECT_NEAR(m.fpd, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(m.fnd, 0.0);
}

TEST(RegionMetrics, BothEmptyIsAnError) {
  BinaryMask a(3, 3), b(3, 3);
  EXPECT_THROW(region_metrics(a, b), std::domain_error);
  EXPECT_THROW(region_metrics(a, BinaryMask(3, 4)), std::invalid_argument);
}

TEST(RegionMetrics, IdentitiesAndSymmetryOnRandomPairs) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> size(16, 128);
  for (int i = 0; i < 300; ++i) {
    const std::size_t r = size(rng), c = size(rng);
    auto a = oracle::random_blob_mask(r, c, rng, 0.02), b = oracle::random_blob_mask(r, c, rng, 0.02);
    auto m = region_metrics(a, b), n = region_metrics(b, a);
    ASSERT_NEAR(m.dice + (m.fpd + m.fnd) / 2.0, 1.0, 1e-12);
    ASSERT_NEAR(m.jaccard, m.dice / (2.0 - m.dice), 1e-12);
    ASSERT_EQ(m.dice, n.dice);
    ASSERT_EQ(m.fpd, n.fnd);
  }
}

TEST(RegionMetrics, DilatingTowardSupersetNeverLowersDice) {
  BinaryMask b(32, 32);
  for (std::size_t r = 4; r < 28; ++r)
    for (std::size_t c = 6; c < 26; ++c) b.at(r, c) = 1;
  BinaryMask a(32, 32);
  a.at(16, 16) = 1;
  double last = region_metrics(a, b).dice;
  for (int step = 0; step < 30; ++step) {
    BinaryMask grown = a;
    for (std::size_t r = 1; r + 1 < 32; ++r) {
      for (std::size_t c = 1; c + 1 < 32; ++c) {
        const bool near = a.at(r - 1, c) || a.at(r + 1, c) || a.at(r, c - 1) || a.at(r, c + 1);
        if (near && b.at(r, c)) grown.at(r, c) = 1;
      }
    }
    a = grown;
    const double d = region_metrics(a, b).dice;
    ASSERT_GE(d, last);
    last = d;
  }
  EXPECT_EQ(last, 1.0);
}

TEST(Contour, Fixtures) {
  BinaryMask single(8, 8);
  single.at(3, 4) = 1;
  auto c = extract_contour(single);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.points[0], (ContourPoint{3.0, 4.0}));

  BinaryMask square(7, 7);
  for (std::size_t r = 2; r < 5; ++r)
    for (std::size_t q = 2; q < 5; ++q) square.at(r, q) = 1;
  auto sq = extract_contour(square);
  EXPECT_EQ(sq.size(), 8u);
  for (const auto& p : sq.points) EXPECT_FALSE(p.row == 3.0 && p.col == 3.0);

  BinaryMask half = square;
  half.spacing_row = half.spacing_col = 0.5;
  auto hs = extract_contour(half);
  ASSERT_EQ(hs.size(), sq.size());
  for (std::size_t i = 0; i < hs.size(); ++i) {
    EXPECT_EQ(hs.points[i].row, sq.points[i].row * 0.5);
    EXPECT_EQ(hs.points[i].col, sq.points[i].col * 0.5);
  }
}

TEST(Contour, BorderPixelsAreBoundary) {
  BinaryMask full(3, 3, 1.0, 1.0, 1);
  EXPECT_EQ(extract_contour(full).size(), 8u);
  EXPECT_THROW(extract_contour(BinaryMask(3, 3)), std::domain_error);
}

TEST(Distance, Fixtures) {
  auto x = points({{0, 0}, {1, 2}, {5, -3}});
  auto same = distance_metrics(x, x);
  EXPECT_EQ(same.hausdorff, 0.0);
  EXPECT_EQ(same.smad, 0.0);

  auto m = distance_metrics(points({{0, 0}}), points({{3, 4}}));
  EXPECT_EQ(m.hausdorff, 5.0);
  EXPECT_EQ(m.mad_ab, 5.0);
  EXPECT_EQ(m.mad_ba, 5.0);
  EXPECT_EQ(m.smad, 5.0);

  auto a = distance_metrics(points({{0, 0}}), points({{0, 0}, {0, 10}}));
  EXPECT_EQ(a.mad_ab, 0.0);
  EXPECT_EQ(a.mad_ba, 5.0);
  EXPECT_EQ(a.hausdorff, 10.0);
  EXPECT_DOUBLE_EQ(a.smad, 10.0 / 3.0);

  EXPECT_THROW(distance_metrics(ContourPointSet{}, x), std::domain_error);
}

TEST(Distance, MatchesBruteForceBitwise) {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> size(16, 96);
  std::uniform_real_distribution<double> sp(0.3, 1.2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t r = size(rng), c = size(rng);
    auto a = oracle::random_blob_mask(r, c, rng), b = oracle::random_blob_mask(r, c, rng);
    a.spacing_row = b.spacing_row = sp(rng);
    a.spacing_col = b.spacing_col = sp(rng);
    if (foreground_count(a) == 0 || foreground_count(b) == 0) continue;
    expect_oracle(extract_contour(a), extract_contour(b));
  }
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  for (int i = 0; i < 50; ++i) {
    ContourPointSet x, y;
    for (int k = 0; k < 1 + i * 3; ++k) x.points.push_back({coord(rng), coord(rng)});
    for (int k = 0; k < 1 + (i * 7) % 60; ++k) y.points.push_back({coord(rng), coord(rng)});
    expect_oracle(x, y);
  }
}

TEST(Distance, InvariantsOnRandomContours) {
  std::mt19937_64 rng(303);
  for (int i = 0; i < 50; ++i) {
    auto a = oracle::random_blob_mask(40, 50, rng), b = oracle::random_blob_mask(40, 50, rng);
    if (foreground_count(a) == 0 || foreground_count(b) == 0) continue;
    auto x = extract_contour(a), y = extract_contour(b);
    auto m = distance_metrics(x, y), n = distance_metrics(y, x);
    ASSERT_GE(m.hausdorff, std::max(m.mad_ab, m.mad_ba));
    ASSERT_GE(m.smad, 0.0);
    ASSERT_EQ(m.hausdorff, n.hausdorff);
    ASSERT_EQ(m.smad, n.smad);
    ASSERT_EQ(m.mad_ab, n.mad_ba);
  }
}

TEST(Area, Fixtures) {
  EXPECT_EQ(area_cm2(BinaryMask(10, 10)), 0.0);
  BinaryMask m(10, 10, 1.0, 1.0, 1);
  EXPECT_DOUBLE_EQ(area_cm2(m), 1.0);
  m.spacing_row = m.spacing_col = 0.5;
  EXPECT_DOUBLE_EQ(area_cm2(m), 0.25);
}

TEST(PairMetrics, EmptyPredictionHasUndefinedDistances) {
  BinaryMask a(6, 6), b(6, 6);
  b.at(2, 2) = 1;
  auto p = pair_metrics(a, b);
  EXPECT_EQ(p.region.dice, 0.0);
  EXPECT_TRUE(std::isnan(p.distance.hausdorff));
  EXPECT_TRUE(std::isnan(p.distance.smad));
  EXPECT_EQ(p.area_a, 0.0);
}
