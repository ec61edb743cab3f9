#pragma once

// Agreement statistics: Williams' index with a jackknife CI, the paired
// t-test, median [IQR] summaries and the per-stage area analysis.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/csv.hpp"
#include "sunet/records.hpp"

namespace sunet {

// Per image: computer-vs-operator values (0,1),(0,2),(0,3) and operator
// pairs (1,2),(1,3),(2,3).
struct AgreementTable {
  std::string metric;
  bool agreement_type = false;
  std::vector<std::array<double, 3>> computer;
  std::vector<std::array<double, 3>> inter;

  std::size_t n_images() const { return computer.size(); }
};

struct WilliamsResult {
  double index = 1.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  std::size_t n_images = 0;

  bool ci_contains(double v) const { return ci_low <= v && v <= ci_high; }
};

namespace detail {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); NaN below two values.
inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return std::nan("");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double wi_ratio(double inter, double computer) {
  if (computer == 0.0) {
    if (inter == 0.0) return 1.0;
    throw std::domain_error("williams_index: computer-observer disagreement is zero");
  }
  return inter / computer;
}

// Index over the images not equal to `skip`.
inline double williams_point(const AgreementTable& t, std::size_t skip) {
  auto d = [&](double v) { return t.agreement_type ? 1.0 - v : v; };
  double io = 0.0, co = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.n_images(); ++i) {
    if (i == skip) continue;
    for (int k = 0; k < 3; ++k) {
      io += d(t.inter[i][k]);
      co += d(t.computer[i][k]);
    }
    ++n;
  }
  const double denom = 3.0 * static_cast<double>(n);
  return wi_ratio(io / denom, co / denom);
}

}  // namespace detail

// Mean interobserver disagreement over mean computer-observer disagreement
// (agreement-type values enter as 1 - v). The CI is index +- 1.96 SE of the
// leave-one-image-out pseudo-values.
inline WilliamsResult williams_index(const AgreementTable& t) {
  const std::size_t n = t.n_images();
  if (t.inter.size() != n) throw std::invalid_argument("williams_index: table rows are inconsistent");
  if (n < 2) throw std::invalid_argument("williams_index: need at least 2 images");
  WilliamsResult r;
  r.n_images = n;
  r.index = detail::williams_point(t, n);
  std::vector<double> pseudo(n);
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) pseudo[i] = nn * r.index - (nn - 1.0) * detail::williams_point(t, i);
  const double se = detail::sample_sd(pseudo) / std::sqrt(nn);
  r.ci_low = r.index - 1.96 * se;
  r.ci_high = r.index + 1.96 * se;
  return r;
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};

// Two-sided paired Student's t-test on a - b.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double m = detail::mean(d), sd = detail::sample_sd(d);
  TTestResult r;
  r.df = n - 1;
  if (sd == 0.0) {
    if (m != 0.0) throw std::domain_error("degenerate: identical offset");
    return r;
  }
  r.t = m * std::sqrt(static_cast<double>(n)) / sd;
  boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

// Linear-interpolation (type 7) quantile of unsorted values.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("quantile: no values");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

struct MedianIqr {
  double median = std::nan("");
  double iqr = std::nan("");
  std::size_t n = 0;  // finite values used

  std::string format() const { return csv::num(median) + " [" + csv::num(iqr) + "]"; }
};

// NaN entries (undefined distances) are left out.
inline MedianIqr median_iqr(const std::vector<double>& values) {
  std::vector<double> v;
  for (double x : values) {
    if (!std::isnan(x)) v.push_back(x);
  }
  MedianIqr r;
  r.n = v.size();
  if (v.empty()) return r;
  r.median = quantile(v, 0.5);
  r.iqr = quantile(v, 0.75) - quantile(v, 0.25);
  return r;
}

using RowValue = std::function<double(const MetricRow&)>;

inline const std::array<std::pair<const char*, const char*>, 3>& operator_pairs() {
  static const std::array<std::pair<const char*, const char*>, 3> p{
      {{"op1", "op2"}, {"op1", "op3"}, {"op2", "op3"}}};
  return p;
}

// Groups computer rows (rater_a "computer", rater_b op1..op3) and operator
// rows by image. Images with any NaN value for this metric are dropped.
inline AgreementTable build_agreement_table(const std::vector<MetricRow>& computer_rows,
                                            const std::vector<MetricRow>& inter_rows, const std::string& metric,
                                            bool agreement_type, const RowValue& value,
                                            std::optional<Stage> stage = std::nullopt) {
  struct Slot {
    std::array<double, 3> c{std::nan(""), std::nan(""), std::nan("")};
    std::array<double, 3> o{std::nan(""), std::nan(""), std::nan("")};
    std::array<int, 3> nc{0, 0, 0}, no{0, 0, 0};
  };
  std::vector<std::string> order;
  std::map<std::string, Slot> slots;
  auto key = [](const MetricRow& r) { return r.patient + '/' + r.image; };
  for (const auto& r : computer_rows) {
    if (stage && r.stage != *stage) continue;
    int j = -1;
    for (int k = 0; k < 3; ++k) {
      if (r.rater_b == "op" + std::to_string(k + 1)) j = k;
    }
    if (j < 0) throw std::invalid_argument("unexpected operator '" + r.rater_b + "'");
    auto [it, fresh] = slots.try_emplace(key(r));
    if (fresh) order.push_back(key(r));
    it->second.c[j] = value(r);
    ++it->second.nc[j];
  }
  for (const auto& r : inter_rows) {
    if (stage && r.stage != *stage) continue;
    int j = -1;
    for (int k = 0; k < 3; ++k) {
      if (r.rater_a == operator_pairs()[k].first && r.rater_b == operator_pairs()[k].second) j = k;
    }
    if (j < 0) throw std::invalid_argument("unexpected operator pair " + r.rater_a + "/" + r.rater_b);
    auto it = slots.find(key(r));
    if (it == slots.end()) continue;
    it->second.o[j] = value(r);
    ++it->second.no[j];
  }
  AgreementTable t;
  t.metric = metric;
  t.agreement_type = agreement_type;
  for (const auto& k : order) {
    const Slot& s = slots.at(k);
    for (int j = 0; j < 3; ++j) {
      if (s.nc[j] != 1 || s.no[j] != 1) {
        throw std::invalid_argument("image " + k + " needs exactly 3 computer and 3 operator pairs");
      }
    }
    bool finite = true;
    for (int j = 0; j < 3; ++j) finite = finite && !std::isnan(s.c[j]) && !std::isnan(s.o[j]);
    if (!finite) continue;
    t.computer.push_back(s.c);
    t.inter.push_back(s.o);
  }
  return t;
}

struct StageAreaResult {
  Stage stage = Stage::rest;
  std::size_t n_images = 0;
  std::vector<double> computer_diffs;
  std::vector<double> inter_diffs;
  double computer_mean = std::nan("");
  double computer_sd = std::nan("");
  double inter_mean = std::nan("");
  double inter_sd = std::nan("");
  std::optional<WilliamsResult> williams;  // empty below 2 images or when undefined
};

inline double abs_area_difference(const MetricRow& r) { return std::abs(r.m.area_a - r.m.area_b); }

inline std::vector<StageAreaResult> stage_area_analysis(const std::vector<MetricRow>& computer_rows,
                                                        const std::vector<MetricRow>& inter_rows) {
  std::vector<StageAreaResult> out;
  for (Stage s : {Stage::contraction, Stage::rest, Stage::valsalva}) {
    StageAreaResult r;
    r.stage = s;
    for (const auto& row : computer_rows) {
      if (row.stage == s) r.computer_diffs.push_back(abs_area_difference(row));
    }
    for (const auto& row : inter_rows) {
      if (row.stage == s) r.inter_diffs.push_back(abs_area_difference(row));
    }
    const auto table = build_agreement_table(computer_rows, inter_rows, "area_diff_cm2", false, abs_area_difference, s);
    r.n_images = table.n_images();
    if (!r.computer_diffs.empty()) {
      r.computer_mean = detail::mean(r.computer_diffs);
      r.computer_sd = detail::sample_sd(r.computer_diffs);
    }
    if (!r.inter_diffs.empty()) {
      r.inter_mean = detail::mean(r.inter_diffs);
      r.inter_sd = detail::sample_sd(r.inter_diffs);
    }
    if (r.n_images >= 2) {
      try {
        r.williams = williams_index(table);
      } catch (const std::domain_error&) {
        // computer agrees perfectly while operators do not; index undefined
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sunet
