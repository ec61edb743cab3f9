#pragma once

// Table files built from one or more cross-validation output directories.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/csv.hpp"
#include "sunet/records.hpp"
#include "sunet/stats.hpp"

namespace sunet {

struct RunRows {
  std::string method;
  std::vector<MetricRow> computer;
  std::vector<MetricRow> inter;
};

// Reads metrics.csv and interobserver.csv; the method name comes from
// run.json when present, otherwise from the directory name.
inline RunRows read_run(const std::filesystem::path& dir) {
  RunRows r;
  r.method = dir.filename().string();
  const auto meta = dir / "run.json";
  if (std::filesystem::exists(meta)) {
    std::ifstream in(meta);
    const auto j = nlohmann::json::parse(in);
    r.method = j.value("arch", r.method);
  }
  r.computer = read_metric_csv((dir / "metrics.csv").string());
  r.inter = read_metric_csv((dir / "interobserver.csv").string());
  if (r.computer.empty()) throw std::runtime_error((dir / "metrics.csv").string() + ": no rows");
  return r;
}

namespace detail {

inline std::vector<std::string> metric_header(const std::string& first) {
  std::vector<std::string> h{first, "n_pairs"};
  for (const auto& m : reported_metrics()) h.emplace_back(m.name);
  return h;
}

inline std::vector<std::string> median_row(const std::string& label, const std::vector<MetricRow>& rows) {
  std::vector<std::string> f{label, std::to_string(rows.size())};
  for (const auto& spec : reported_metrics()) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(spec.get(r.m));
    f.push_back(median_iqr(v).format());
  }
  return f;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::vector<std::string>>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << csv::join(l) << '\n';
}

inline std::string note(const std::exception& e) {
  std::string s = e.what();
  std::replace(s.begin(), s.end(), ',', ';');
  return s;
}

inline std::string opt_num(const std::optional<double>& v) { return v ? csv::num(*v) : ""; }

// Per-image mean over the three operators, keyed by patient/image.
inline std::map<std::string, double> per_image_means(const std::vector<MetricRow>& rows, const MetricSpec& spec) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    auto& a = acc[r.patient + '/' + r.image];
    a.first += spec.get(r.m);
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [k, a] : acc) out[k] = a.first / a.second;
  return out;
}

}  // namespace detail

// Writes table1..table4.csv and ttest.csv into `out_dir`. Interobserver
// rows (table 2) are taken from the first run. The t-test compares the
// first run against each further run.
inline void write_report(const std::vector<RunRows>& runs, const std::filesystem::path& out_dir) {
  if (runs.empty()) throw std::invalid_argument("report: no runs given");
  std::filesystem::create_directories(out_dir);

  std::vector<std::vector<std::string>> t1{detail::metric_header("method")};
  for (const auto& run : runs) t1.push_back(detail::median_row(run.method, run.computer));
  detail::write_lines(out_dir / "table1.csv", t1);

  std::vector<std::vector<std::string>> t2{detail::metric_header("pair")};
  const auto& inter = runs.front().inter;
  for (const auto& [a, b] : operator_pairs()) {
    std::vector<MetricRow> sel;
    for (const auto& r : inter) {
      if (r.rater_a == a && r.rater_b == b) sel.push_back(r);
    }
    t2.push_back(detail::median_row(std::string(a) + "-" + b, sel));
  }
  t2.push_back(detail::median_row("all", inter));
  detail::write_lines(out_dir / "table2.csv", t2);

  std::vector<std::vector<std::string>> t3{
      {"method", "metric", "williams_index", "ci_low", "ci_high", "n_images", "ci_contains_1", "note"}};
  for (const auto& run : runs) {
    for (const auto& spec : reported_metrics()) {
      const auto table = build_agreement_table(run.computer, run.inter, spec.name, spec.agreement,
                                               [&spec](const MetricRow& r) { return spec.get(r.m); });
      try {
        const auto w = williams_index(table);
        t3.push_back({run.method, spec.name, csv::num(w.index), csv::num(w.ci_low), csv::num(w.ci_high),
                      std::to_string(w.n_images), w.ci_contains(1.0) ? "yes" : "no", ""});
      } catch (const std::exception& e) {
        t3.push_back({run.method, spec.name, "", "", "", std::to_string(table.n_images()), "", detail::note(e)});
      }
    }
  }
  detail::write_lines(out_dir / "table3.csv", t3);

  std::vector<std::vector<std::string>> t4{{"method", "stage", "n_images", "computer_diff_mean_cm2",
                                            "computer_diff_sd_cm2", "inter_diff_mean_cm2", "inter_diff_sd_cm2",
                                            "williams_index", "ci_low", "ci_high"}};
  for (const auto& run : runs) {
    for (const auto& s : stage_area_analysis(run.computer, run.inter)) {
      std::optional<double> wi, lo, hi;
      if (s.williams) {
        wi = s.williams->index;
        lo = s.williams->ci_low;
        hi = s.williams->ci_high;
      }
      t4.push_back({run.method, to_string(s.stage), std::to_string(s.n_images), csv::num(s.computer_mean),
                    csv::num(s.computer_sd), csv::num(s.inter_mean), csv::num(s.inter_sd), detail::opt_num(wi),
                    detail::opt_num(lo), detail::opt_num(hi)});
    }
  }
  detail::write_lines(out_dir / "table4.csv", t4);

  std::vector<std::vector<std::string>> tt{
      {"method_a", "method_b", "metric", "n_images", "mean_a", "mean_b", "t", "df", "p", "note"}};
  for (std::size_t k = 1; k < runs.size(); ++k) {
    for (const auto& spec : reported_metrics()) {
      const auto ma = detail::per_image_means(runs[0].computer, spec);
      const auto mb = detail::per_image_means(runs[k].computer, spec);
      std::vector<double> a, b;
      for (const auto& [key, va] : ma) {
        const auto it = mb.find(key);
        if (it == mb.end() || std::isnan(va) || std::isnan(it->second)) continue;
        a.push_back(va);
        b.push_back(it->second);
      }
      std::vector<std::string> line{runs[0].method, runs[k].method, spec.name, std::to_string(a.size())};
      if (a.empty()) {
        line.insert(line.end(), {"", "", "", "", "", "no paired images"});
      } else {
        line.push_back(csv::num(detail::mean(a)));
        line.push_back(csv::num(detail::mean(b)));
        try {
          const auto r = paired_t_test(a, b);
          line.insert(line.end(), {csv::num(r.t), std::to_string(r.df), csv::num(r.p), ""});
        } catch (const std::exception& e) {
          line.insert(line.end(), {"", "", "", detail::note(e)});
        }
      }
      tt.push_back(std::move(line));
    }
  }
  detail::write_lines(out_dir / "ttest.csv", tt);
}

}  // namespace sunet
