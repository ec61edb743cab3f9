#include <gtest/gtest.h>

#include <random>

#include "sunet/stats.hpp"

using namespace sunet;

namespace {

// Direct plug-in of the rater-pair formula: D(r,s) averaged over images,
// then [2/(n(n-1)) sum_{j<j'} D(j,j')] / [(1/n) sum_j D(0,j)], n = 3.
double brute_force_wi(const AgreementTable& t) {
  auto d = [&](double v) { return t.agreement_type ? 1.0 - v : v; };
  double D0[3] = {0, 0, 0}, Dj[3] = {0, 0, 0};
  for (std::size_t i = 0; i < t.n_images(); ++i) {
    for (int k = 0; k < 3; ++k) {
      D0[k] += d(t.computer[i][k]) / static_cast<double>(t.n_images());
      Dj[k] += d(t.inter[i][k]) / static_cast<double>(t.n_images());
    }
  }
  const double num = 2.0 / (3.0 * 2.0) * (Dj[0] + Dj[1] + Dj[2]);
  const double den = (D0[0] + D0[1] + D0[2]) / 3.0;
  return num / den;
}

AgreementTable constant_table(std::size_t n, double computer, double inter, bool agreement = false) {
  AgreementTable t;
  t.agreement_type = agreement;
  for (std::size_t i = 0; i < n; ++i) {
    t.computer.push_back({computer, computer, computer});
    t.inter.push_back({inter, inter, inter});
  }
  return t;
}

AgreementTable random_table(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 3.0);
  AgreementTable t;
  for (std::size_t i = 0; i < n; ++i) {
    t.computer.push_back({u(rng), u(rng), u(rng)});
    t.inter.push_back({u(rng), u(rng), u(rng)});
  }
  return t;
}

MetricRow row(const std::string& image, Stage stage, const std::string& a, const std::string& b, double area_a,
              double area_b) {
  MetricRow r;
  r.patient = "p";
  r.image = image;
  r.stage = stage;
  r.rater_a = a;
  r.rater_b = b;
  r.m.area_a = area_a;
  r.m.area_b = area_b;
  return r;
}

}  // namespace

TEST(Williams, SymmetricFixture) {
  auto t = constant_table(5, 2.0, 2.0);
  auto r = williams_index(t);
  EXPECT_EQ(r.index, 1.0);
  EXPECT_EQ(r.ci_low, 1.0);
  EXPECT_EQ(r.ci_high, 1.0);
  EXPECT_NEAR(r.index, brute_force_wi(t), 1e-12);
}

TEST(Williams, TwoToOneFixture) {
  auto t = constant_table(4, 4.0, 2.0);
  auto r = williams_index(t);
  EXPECT_NEAR(r.index, 0.5, 1e-12);
  EXPECT_NEAR(r.index, brute_force_wi(t), 1e-12);
}

TEST(Williams, AllZeroIsPerfectAgreement) {
  auto r = williams_index(constant_table(3, 0.0, 0.0));
  EXPECT_EQ(r.index, 1.0);
  EXPECT_EQ(r.ci_low, 1.0);
  EXPECT_EQ(r.ci_high, 1.0);
  auto dice = williams_index(constant_table(3, 1.0, 1.0, true));
  EXPECT_EQ(dice.index, 1.0);
}

TEST(Williams, Errors) {
  EXPECT_THROW(williams_index(constant_table(1, 1.0, 1.0)), std::invalid_argument);
  EXPECT_THROW(williams_index(constant_table(3, 0.0, 1.0)), std::domain_error);
}

TEST(Williams, AgreementMetricsAreConverted) {
  auto t = constant_table(4, 0.8, 0.9, true);
  EXPECT_NEAR(williams_index(t).index, 0.1 / 0.2, 1e-12);
}

TEST(Williams, MatchesBruteForceOnRandomTables) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    auto t = random_table(2 + i % 20, rng);
    t.agreement_type = i % 2;
    auto r = williams_index(t);
    ASSERT_NEAR(r.index, brute_force_wi(t), 1e-12);
    ASSERT_LE(r.ci_low, r.index);
    ASSERT_GE(r.ci_high, r.index);
  }
}

TEST(Williams, ComputerCopyOfOperatorOne) {
  // If the computer equals operator 1, D(0,1) = 0, D(0,2) = D(1,2) and
  // D(0,3) = D(1,3).
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  AgreementTable t;
  for (int i = 0; i < 12; ++i) {
    const double d12 = u(rng), d13 = u(rng), d23 = u(rng);
    t.computer.push_back({0.0, d12, d13});
    t.inter.push_back({d12, d13, d23});
  }
  EXPECT_NEAR(williams_index(t).index, brute_force_wi(t), 1e-12);
}

TEST(Williams, ScaleInvariant) {
  std::mt19937_64 rng(9);
  auto t = random_table(10, rng);
  const auto base = williams_index(t);
  for (double c : {2.0, 0.25, 3.7, 1e3}) {
    auto s = t;
    for (auto& a : s.computer)
      for (auto& v : a) v *= c;
    for (auto& a : s.inter)
      for (auto& v : a) v *= c;
    const auto r = williams_index(s);
    if (c == 2.0 || c == 0.25) {
      EXPECT_EQ(r.index, base.index);
    } else {
      EXPECT_NEAR(r.index, base.index, 1e-12);
    }
  }
}

TEST(Williams, JackknifeWidthFollowsRootN) {
  std::mt19937_64 rng(10);
  auto base = random_table(4, rng);
  auto replicate = [&](std::size_t copies) {
    AgreementTable t;
    for (std::size_t c = 0; c < copies; ++c) {
      t.computer.insert(t.computer.end(), base.computer.begin(), base.computer.end());
      t.inter.insert(t.inter.end(), base.inter.begin(), base.inter.end());
    }
    const auto r = williams_index(t);
    return r.ci_high - r.ci_low;
  };
  const double w4 = replicate(1), w16 = replicate(4), w64 = replicate(16);
  EXPECT_NEAR(w16 / w4, 0.5, 0.5 * 0.3);
  EXPECT_NEAR(w64 / w16, 0.5, 0.5 * 0.3);
}

TEST(TTest, Fixtures) {
  std::vector<double> a{1.0, 2.0, 3.0};
  auto same = paired_t_test(a, a);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_EQ(same.t, 0.0);

  auto zero_mean = paired_t_test({1.0, -1.0}, {0.0, 0.0});
  EXPECT_EQ(zero_mean.t, 0.0);
  EXPECT_NEAR(zero_mean.p, 1.0, 1e-12);

  auto r = paired_t_test({1.0, 2.0, 3.0}, {0.0, 0.0, 0.0});
  EXPECT_NEAR(r.t, 2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_EQ(r.df, 2u);
  const double closed = 2.0 * (1.0 - (0.5 + r.t / (2.0 * std::sqrt(2.0 + r.t * r.t))));
  EXPECT_NEAR(r.p, closed, 1e-12);
  EXPECT_NEAR(r.p, 0.0742, 5e-4);
}

TEST(TTest, Errors) {
  EXPECT_THROW(paired_t_test({1.0, 2.0}, {0.0, 1.0}), std::domain_error);
  EXPECT_THROW(paired_t_test({1.0}, {0.0}), std::invalid_argument);
  EXPECT_THROW(paired_t_test({1.0, 2.0}, {0.0}), std::invalid_argument);
}

TEST(TTest, Antisymmetric) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> a(8), b(8);
    for (auto& v : a) v = z(rng);
    for (auto& v : b) v = z(rng);
    auto ab = paired_t_test(a, b), ba = paired_t_test(b, a);
    EXPECT_EQ(ab.t, -ba.t);
    EXPECT_EQ(ab.p, ba.p);
  }
}

TEST(Quantiles, Fixtures) {
  auto m = median_iqr({5, 1, 4, 2, 3});
  EXPECT_EQ(m.median, 3.0);
  EXPECT_EQ(m.iqr, 2.0);
  EXPECT_EQ(m.format(), "3 [2]");
  auto one = median_iqr({0.9});
  EXPECT_EQ(one.median, 0.9);
  EXPECT_EQ(one.iqr, 0.0);
  auto flat = median_iqr({2.5, 2.5, 2.5, 2.5});
  EXPECT_EQ(flat.median, 2.5);
  EXPECT_EQ(flat.iqr, 0.0);
  auto with_nan = median_iqr({1.0, std::nan(""), 3.0});
  EXPECT_EQ(with_nan.n, 2u);
  EXPECT_EQ(with_nan.median, 2.0);
  EXPECT_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
}

TEST(AgreementTableBuild, GroupsByImageAndDropsUndefined) {
  std::vector<MetricRow> comp, inter;
  for (std::string img : {"a", "b", "c"}) {
    for (int j = 1; j <= 3; ++j) comp.push_back(row(img, Stage::rest, "computer", "op" + std::to_string(j), j, 0));
    for (const auto& [x, y] : operator_pairs()) inter.push_back(row(img, Stage::rest, x, y, 10, 0));
  }
  comp[4].m.area_a = std::nan("");
  auto t = build_agreement_table(comp, inter, "area", false, [](const MetricRow& r) { return r.m.area_a; });
  ASSERT_EQ(t.n_images(), 2u);
  EXPECT_EQ(t.computer[0][2], 3.0);
  EXPECT_EQ(t.inter[1][0], 10.0);
  comp.pop_back();
  EXPECT_THROW(build_agreement_table(comp, inter, "area", false, [](const MetricRow& r) { return r.m.area_a; }),
               std::invalid_argument);
}

TEST(StageAreas, Fixtures) {
  std::vector<MetricRow> comp, inter;
  // Perfect agreement at rest.
  for (std::string img : {"r1", "r2"}) {
    for (int j = 1; j <= 3; ++j) comp.push_back(row(img, Stage::rest, "computer", "op" + std::to_string(j), 2, 2));
    for (const auto& [x, y] : operator_pairs()) inter.push_back(row(img, Stage::rest, x, y, 2, 2));
  }
  // Valsalva: computer differences 0.5 on one image and 1.5 on the other.
  for (auto [img, diff] : {std::pair<std::string, double>{"v1", 0.5}, {"v2", 1.5}}) {
    for (int j = 1; j <= 3; ++j)
      comp.push_back(row(img, Stage::valsalva, "computer", "op" + std::to_string(j), 3.0 + diff, 3.0));
    for (const auto& [x, y] : operator_pairs()) inter.push_back(row(img, Stage::valsalva, x, y, 3.2, 3.0));
  }
  comp.push_back(row("c1", Stage::contraction, "computer", "op1", 1, 1));
  comp.push_back(row("c1", Stage::contraction, "computer", "op2", 1, 1));
  comp.push_back(row("c1", Stage::contraction, "computer", "op3", 1, 1));
  for (const auto& [x, y] : operator_pairs()) inter.push_back(row("c1", Stage::contraction, x, y, 1, 1));

  auto res = stage_area_analysis(comp, inter);
  ASSERT_EQ(res.size(), 3u);
  std::size_t total = 0;
  for (const auto& r : res) total += r.computer_diffs.size();
  EXPECT_EQ(total, comp.size());

  const auto& contraction = res[0];
  EXPECT_EQ(contraction.n_images, 1u);
  EXPECT_FALSE(contraction.williams.has_value());

  const auto& rest = res[1];
  EXPECT_EQ(rest.computer_mean, 0.0);
  ASSERT_TRUE(rest.williams.has_value());
  EXPECT_EQ(rest.williams->index, 1.0);

  const auto& val = res[2];
  EXPECT_NEAR(val.computer_mean, 1.0, 1e-12);
  // Three copies of each image-level difference.
  std::vector<double> per_image{0.5, 1.5};
  EXPECT_NEAR(detail::sample_sd(per_image), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(val.inter_mean, 0.2, 1e-12);
  ASSERT_TRUE(val.williams.has_value());
  EXPECT_NEAR(val.williams->index, 0.2, 1e-12);
}
