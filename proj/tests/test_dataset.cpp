#include <gtest/gtest.h>

#include <map>
#include <set>

#include "sunet/dataset.hpp"
#include "tmpdir.hpp"

using namespace sunet;

TEST(Synth, SameSeedSameCases) {
  const auto a = synth_cases(3, 3, 11);
  const auto b = synth_cases(3, 3, 11);
  ASSERT_EQ(a.size(), 9u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].labeled.image_id, b[i].labeled.image_id);
    EXPECT_EQ(a[i].labeled.image, b[i].labeled.image);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(a[i].labeled.masks[k], b[i].labeled.masks[k]);
  }
  const auto c = synth_cases(3, 3, 12);
  EXPECT_FALSE(a[0].labeled.image == c[0].labeled.image);
}

TEST(Synth, OperatorsAgreeButDiffer) {
  const auto cases = synth_cases(4, 3, 5);
  for (const auto& sc : cases) {
    const auto& m = sc.labeled.masks;
    for (int i = 0; i < 3; ++i) {
      const double d = region_metrics(m[i], sc.truth).dice;
      EXPECT_GE(d, 0.88);
      EXPECT_LE(d, 0.99);
      for (int j = i + 1; j < 3; ++j) {
        EXPECT_GE(region_metrics(m[i], m[j]).dice, 0.8);
        EXPECT_FALSE(m[i] == m[j]);
      }
    }
  }
}

TEST(Synth, StageAreasOrdered) {
  std::map<Stage, double> area;
  std::map<Stage, int> n;
  for (const auto& sc : synth_cases(8, 3, 7)) {
    area[sc.labeled.stage] += static_cast<double>(foreground_count(sc.truth));
    ++n[sc.labeled.stage];
  }
  for (auto& [s, a] : area) a /= n[s];
  EXPECT_LT(area[Stage::contraction], area[Stage::rest]);
  EXPECT_LT(area[Stage::rest], area[Stage::valsalva]);
}

TEST(Synth, IdsAndSpacing) {
  const auto cases = synth_cases(2, 2, 1);
  EXPECT_EQ(cases[0].labeled.patient, "P01");
  EXPECT_EQ(cases[3].labeled.image_id, "P02_02");
  EXPECT_EQ(cases[0].labeled.image.spacing_row, cases[1].labeled.image.spacing_row);
  EXPECT_GT(cases[0].labeled.image.spacing_row, 0.0);
  EXPECT_THROW(synth_cases(1, 2, 1), std::invalid_argument);
}

TEST(Synth, DeriveSeedSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s) {
    for (std::uint64_t a = 0; a < 8; ++a) {
      for (std::uint64_t b = 0; b < 8; ++b) seen.insert(derive_seed(s, a, b));
    }
  }
  EXPECT_EQ(seen.size(), 4u * 8 * 8);
}

TEST(Manifest, RoundTripThroughDisk) {
  const auto dir = scratch_dir();
  const auto cases = synth_cases(2, 2, 9);
  std::vector<LabeledCase> labeled;
  for (const auto& sc : cases) labeled.push_back(sc.labeled);
  write_dataset(dir, labeled);
  const auto back = load_dataset((dir / "manifest.json").string());
  ASSERT_EQ(back.size(), labeled.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].patient, labeled[i].patient);
    EXPECT_EQ(back[i].stage, labeled[i].stage);
    EXPECT_DOUBLE_EQ(back[i].image.spacing_row, labeled[i].image.spacing_row);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(back[i].masks[k], labeled[i].masks[k]);
    // 8-bit storage
    for (std::size_t p = 0; p < back[i].image.size(); ++p) {
      EXPECT_NEAR(back[i].image.data[p], labeled[i].image.data[p], 0.5 / 255 + 1e-12);
    }
  }
}

TEST(Manifest, RejectsBadInput) {
  const auto dir = scratch_dir();
  EXPECT_THROW(read_manifest((dir / "none.json").string()), std::runtime_error);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(read_manifest((dir / "bad.json").string()), std::runtime_error);
  std::ofstream(dir / "stage.json")
      << R"({"cases":[{"patient":"A","image_id":"a","stage":"sitting","image":"x","masks":["1","2","3"],)"
      << R"("spacing_row_mm":1,"spacing_col_mm":1}]})";
  EXPECT_THROW(read_manifest((dir / "stage.json").string()), std::invalid_argument);
}
