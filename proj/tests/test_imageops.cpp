#include <gtest/gtest.h>

#include <random>

#include "sunet/imageops.hpp"

using namespace sunet;

namespace {

GrayImage ramp(std::size_t rows, std::size_t cols) {
  GrayImage img(rows, cols, 0.5, 0.6);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) img.at(r, c) = static_cast<double>(r * cols + c + 1);
  }
  return img;
}

BinaryMask disk(std::size_t rows, std::size_t cols, double cr, double cc, double radius) {
  BinaryMask m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
      m.at(r, c) = dr * dr + dc * dc <= radius * radius ? 1 : 0;
    }
  }
  return m;
}

BinaryMask random_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64& rng) {
  BinaryMask m(rows, cols);
  std::bernoulli_distribution coin(p);
  for (auto& v : m.data) v = coin(rng) ? 1 : 0;
  return m;
}

std::pair<double, double> centroid(const BinaryMask& m) {
  double sr = 0, sc = 0, n = 0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (m.at(r, c)) {
        sr += static_cast<double>(r);
        sc += static_cast<double>(c);
        n += 1;
      }
    }
  }
  return {sr / n, sc / n};
}

}  // namespace

TEST(CropOrPad, SameSizeIsIdentity) {
  auto img = ramp(214, 262);
  EXPECT_EQ(crop_or_pad(img, 214, 262), img);
}

TEST(CropOrPad, CropTakesCentralWindow) {
  auto img = ramp(300, 300);
  auto out = crop_or_pad(img, 214, 262);
  ASSERT_EQ(out.rows, 214u);
  ASSERT_EQ(out.cols, 262u);
  EXPECT_DOUBLE_EQ(out.spacing_row, 0.5);
  EXPECT_DOUBLE_EQ(out.spacing_col, 0.6);
  for (std::size_t r = 0; r < 214; ++r) {
    for (std::size_t c = 0; c < 262; ++c) ASSERT_EQ(out.at(r, c), img.at(r + 43, c + 19));
  }
}

TEST(CropOrPad, OddDifferencePutsExtraBottomRight) {
  auto img = ramp(5, 6);
  auto out = crop_or_pad(img, 2, 3);
  // margins: rows 1 top / 2 bottom, cols 1 left / 2 right
  EXPECT_EQ(out.at(0, 0), img.at(1, 1));
  auto padded = crop_or_pad(img, 8, 9);
  EXPECT_EQ(padded.at(1, 1), img.at(0, 0));
  EXPECT_EQ(padded.at(5, 6), img.at(4, 5));
  EXPECT_EQ(padded.at(6, 7), 0.0);
  EXPECT_EQ(padded.at(0, 0), 0.0);
}

TEST(CropOrPad, PadsWithZerosAroundCentre) {
  auto img = ramp(100, 100);
  auto out = crop_or_pad(img, 214, 262);
  const std::size_t r0 = 57, c0 = 81;
  for (std::size_t r = 0; r < 214; ++r) {
    for (std::size_t c = 0; c < 262; ++c) {
      const bool inside = r >= r0 && r < r0 + 100 && c >= c0 && c < c0 + 100;
      ASSERT_EQ(out.at(r, c), inside ? img.at(r - r0, c - c0) : 0.0);
    }
  }
}

TEST(CropOrPad, RoundTripRecoversInterior) {
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{100, 120}, {53, 77}, {214, 262}}) {
    auto img = ramp(r, c);
    EXPECT_EQ(crop_or_pad(crop_or_pad(img, 214, 262), r, c), img);
  }
  auto big = ramp(301, 280);
  auto back = crop_or_pad(crop_or_pad(big, 214, 262), 301, 280);
  for (std::size_t r = 43; r < 43 + 214; ++r) {
    for (std::size_t c = 9; c < 9 + 262; ++c) ASSERT_EQ(back.at(r, c), big.at(r, c));
  }
}

TEST(Resize, IdentityAndConstant) {
  auto img = ramp(7, 9);
  EXPECT_EQ(resize_bilinear(img, 7, 9), img);
  GrayImage flat(10, 12, 1.0, 1.0, 0.37);
  auto out = resize_bilinear(flat, 5, 31);
  for (double v : out.data) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Resize, CheckerboardMidpoint) {
  GrayImage cb(2, 2);
  cb.data = {0.0, 1.0, 1.0, 0.0};
  auto out = resize_bilinear(cb, 3, 3);
  EXPECT_NEAR(out.at(1, 1), 0.5, 1e-12);
  EXPECT_EQ(out.at(0, 0), 0.0);
  EXPECT_EQ(out.at(0, 2), 1.0);
}

TEST(Resize, SpacingTracksSizeRatio) {
  GrayImage img(214, 262, 0.54, 0.54);
  auto out = resize_bilinear(img, 107, 131);
  EXPECT_DOUBLE_EQ(out.spacing_row, 1.08);
  EXPECT_DOUBLE_EQ(out.spacing_col, 1.08);
}

TEST(Resize, PreservesValueRange) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    GrayImage img(13 + trial, 17, 1.0, 1.0);
    for (auto& v : img.data) v = u(rng);
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    auto out = resize_bilinear(img, 7 + 3 * trial, 5 + trial);
    for (double v : out.data) {
      ASSERT_GE(v, *lo);
      ASSERT_LE(v, *hi);
    }
  }
}

TEST(Resize, RejectsEmptyTarget) {
  GrayImage img(4, 4);
  EXPECT_THROW(resize_bilinear(img, 0, 3), std::invalid_argument);
}

TEST(Resize, MaskIsRethresholded) {
  auto m = disk(40, 40, 19.5, 19.5, 12);
  auto small = resize_mask(m, 20, 20);
  for (auto v : small.data) ASSERT_TRUE(v == 0 || v == 1);
  EXPECT_GT(foreground_count(small), 0u);
}

TEST(Affine, IdentityLeavesPairUnchanged) {
  auto img = ramp(21, 17);
  BinaryMask m = disk(21, 17, 10, 8, 5);
  m.spacing_row = img.spacing_row;
  m.spacing_col = img.spacing_col;
  auto out = apply_affine(img, m, AffineParams{});
  EXPECT_EQ(out.image, img);
  EXPECT_EQ(out.mask, m);
}

TEST(Affine, TranslationShiftsCentroid) {
  auto m = disk(64, 64, 30, 32, 9);
  GrayImage img(64, 64);
  AffineParams p;
  p.translate_row = 5;
  auto out = apply_affine(img, m, p);
  const auto before = centroid(m), after = centroid(out.mask);
  EXPECT_NEAR(after.first - before.first, 5.0, 0.5);
  EXPECT_NEAR(after.second - before.second, 0.0, 0.5);
}

TEST(Affine, SampledTransformsKeepMaskBinary) {
  std::mt19937_64 rng(11);
  auto m = disk(48, 56, 24, 28, 14);
  GrayImage img(48, 56);
  for (int i = 0; i < 50; ++i) {
    auto out = random_affine(img, m, AffineRanges{}, rng);
    for (auto v : out.mask.data) ASSERT_TRUE(v == 0 || v == 1);
  }
}

TEST(Affine, SampledParametersRespectRanges) {
  std::mt19937_64 rng(12);
  AffineRanges r;
  for (int i = 0; i < 1000; ++i) {
    auto p = sample_affine(r, rng);
    ASSERT_LE(std::abs(p.rotation), r.max_rotation);
    ASSERT_LE(std::abs(p.translate_row), r.max_translation);
    ASSERT_GE(p.scale_row, r.min_scale);
    ASSERT_LE(p.scale_col, r.max_scale);
    ASSERT_LE(std::abs(p.shear), r.max_shear);
  }
}

TEST(Affine, RejectsMismatchedGrids) {
  EXPECT_THROW(apply_affine(GrayImage(4, 4), BinaryMask(4, 5), AffineParams{}), std::invalid_argument);
}

TEST(FillHoles, Fixtures) {
  auto solid = disk(30, 30, 15, 15, 8);
  EXPECT_EQ(fill_holes(solid), solid);

  auto ring = disk(30, 30, 15, 15, 8);
  auto inner = disk(30, 30, 15, 15, 7);
  for (std::size_t i = 0; i < ring.size(); ++i) ring.data[i] = ring.data[i] && !inner.data[i];
  EXPECT_EQ(fill_holes(ring), solid);

  BinaryMask zero(9, 9);
  EXPECT_EQ(fill_holes(zero), zero);
}

TEST(FillHoles, DiagonalGapDoesNotLeak) {
  // Background enclosed by an 8-connected (diagonal) wall is not 4-reachable.
  BinaryMask m(5, 5);
  for (auto [r, c] : {std::pair{1, 2}, {2, 1}, {2, 3}, {3, 2}}) m.at(r, c) = 1;
  auto f = fill_holes(m);
  EXPECT_EQ(f.at(2, 2), 1);
  EXPECT_EQ(f.at(1, 1), 0);
}

TEST(LargestComponent, Fixtures) {
  auto blob = disk(20, 20, 10, 10, 4);
  EXPECT_EQ(largest_component(blob), blob);

  BinaryMask m(20, 20);
  for (std::size_t r = 2; r < 6; ++r)
    for (std::size_t c = 10; c < 15; ++c) m.at(r, c) = 1;  // 20
  for (std::size_t c = 0; c < 5; ++c) m.at(12, c) = 1;      // 5
  auto out = largest_component(m);
  EXPECT_EQ(foreground_count(out), 20u);
  EXPECT_EQ(out.at(12, 0), 0);
  EXPECT_EQ(out.at(2, 10), 1);

  BinaryMask empty(6, 6);
  EXPECT_EQ(largest_component(empty), empty);
}

TEST(LargestComponent, TieKeepsSmallestRowMajorIndex) {
  BinaryMask m(10, 10);
  // Blob A starts at row 1 col 7; blob B starts at row 3 col 0.
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t c = 7; c < 9; ++c) m.at(r, c) = 1;
  for (std::size_t r = 3; r < 5; ++r)
    for (std::size_t c = 0; c < 2; ++c) m.at(r, c) = 1;
  auto out = largest_component(m);
  EXPECT_EQ(out.at(1, 7), 1);
  EXPECT_EQ(out.at(3, 0), 0);
}

TEST(LargestComponent, DiagonalNeighboursConnect) {
  BinaryMask m(5, 5);
  m.at(0, 0) = m.at(1, 1) = m.at(2, 2) = 1;
  m.at(4, 0) = m.at(4, 1) = 1;
  auto out = largest_component(m);
  EXPECT_EQ(foreground_count(out), 3u);
}

TEST(PostProcess, IdempotentOnRandomMasks) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const double p = 0.2 + 0.6 * static_cast<double>(trial) / 200.0;
    auto m = random_mask(17 + trial % 7, 19 + trial % 5, p, rng);
    auto f = fill_holes(m);
    ASSERT_EQ(fill_holes(f), f);
    auto l = largest_component(m);
    ASSERT_EQ(largest_component(l), l);
    auto pp = post_process(m);
    ASSERT_EQ(post_process(pp), pp);
  }
}

TEST(Upsample, NearestDoublesGrid) {
  BinaryMask m(2, 3, 1.08, 1.08);
  m.data = {1, 0, 1, 0, 1, 0};
  auto up = upsample_nearest(m, 2);
  ASSERT_EQ(up.rows, 4u);
  ASSERT_EQ(up.cols, 6u);
  EXPECT_DOUBLE_EQ(up.spacing_row, 0.54);
  EXPECT_EQ(up.at(1, 1), 1);
  EXPECT_EQ(up.at(3, 3), 1);
  EXPECT_EQ(up.at(2, 0), 0);
}
