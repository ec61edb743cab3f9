#pragma once

// One row per compared mask pair, and its CSV form.

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/csv.hpp"
#include "sunet/metrics.hpp"

namespace sunet {

enum class Stage { rest, valsalva, contraction };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::rest: return "rest";
    case Stage::valsalva: return "valsalva";
    case Stage::contraction: return "contraction";
  }
  return "rest";
}

inline Stage stage_from_string(const std::string& s) {
  if (s == "rest") return Stage::rest;
  if (s == "valsalva") return Stage::valsalva;
  if (s == "contraction") return Stage::contraction;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

// rater_a is "computer" or an operator name; rater_b is always an operator.
struct MetricRow {
  std::string patient;
  std::string image;
  Stage stage = Stage::rest;
  std::string rater_a;
  std::string rater_b;
  PairMetrics m;
};

inline const std::vector<std::string>& metric_csv_header() {
  static const std::vector<std::string> h{"patient",  "image",   "stage", "rater_a", "rater_b",
                                          "dice",     "jaccard", "hausdorff_mm", "mad_mm", "smad_mm",
                                          "fpd",      "fnd",     "area_a_cm2",   "area_b_cm2"};
  return h;
}

inline void write_metric_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << csv::join(metric_csv_header()) << '\n';
  for (const auto& r : rows) {
    const auto& m = r.m;
    os << csv::join({r.patient, r.image, to_string(r.stage), r.rater_a, r.rater_b, csv::num(m.region.dice),
                     csv::num(m.region.jaccard), csv::num(m.distance.hausdorff), csv::num(m.distance.mad_ab),
                     csv::num(m.distance.smad), csv::num(m.region.fpd), csv::num(m.region.fnd),
                     csv::num(m.area_a), csv::num(m.area_b)})
       << '\n';
  }
}

// mad_ba is not part of the file and reads back as NaN.
inline std::vector<MetricRow> read_metric_csv(const std::string& path) {
  const auto t = csv::read_file(path);
  std::vector<std::size_t> col;
  for (const auto& name : metric_csv_header()) col.push_back(t.column(name));
  std::vector<MetricRow> rows;
  for (const auto& f : t.rows) {
    MetricRow r;
    r.patient = f[col[0]];
    r.image = f[col[1]];
    r.stage = stage_from_string(f[col[2]]);
    r.rater_a = f[col[3]];
    r.rater_b = f[col[4]];
    auto n = [&](std::size_t k) { return csv::parse_number(f[col[k]]); };
    r.m.region = {n(5), n(6), n(10), n(11)};
    r.m.distance = {n(7), n(8), std::nan(""), n(9)};
    r.m.area_a = n(12);
    r.m.area_b = n(13);
    rows.push_back(std::move(r));
  }
  return rows;
}

// The seven reported metrics, in table order.
struct MetricSpec {
  const char* name;
  bool agreement;  // higher is better
  double (*get)(const PairMetrics&);
};

inline const std::vector<MetricSpec>& reported_metrics() {
  static const std::vector<MetricSpec> specs{
      {"dice", true, [](const PairMetrics& m) { return m.region.dice; }},
      {"jaccard", true, [](const PairMetrics& m) { return m.region.jaccard; }},
      {"hausdorff_mm", false, [](const PairMetrics& m) { return m.distance.hausdorff; }},
      {"mad_mm", false, [](const PairMetrics& m) { return m.distance.mad_ab; }},
      {"smad_mm", false, [](const PairMetrics& m) { return m.distance.smad; }},
      {"fpd", false, [](const PairMetrics& m) { return m.region.fpd; }},
      {"fnd", false, [](const PairMetrics& m) { return m.region.fnd; }},
  };
  return specs;
}

}  // namespace sunet
