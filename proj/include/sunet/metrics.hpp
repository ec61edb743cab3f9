#pragma once

// Region-overlap and contour-distance agreement metrics in physical units.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sunet/image.hpp"

namespace sunet {

// `a` is the automatic mask, `b` the manual one.
struct RegionMetrics {
  double dice = 0.0;
  double jaccard = 0.0;
  double fpd = 0.0;  // 2|A ∩ ~B| / (|A| + |B|)
  double fnd = 0.0;  // 2|~A ∩ B| / (|A| + |B|)
};

inline RegionMetrics region_metrics(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_grid(b)) throw std::invalid_argument("region_metrics: masks are on different grids");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  const double total = static_cast<double>(na + nb);
  if (total == 0.0) throw std::domain_error("region_metrics: both masks are empty");
  RegionMetrics m;
  m.dice = 2.0 * static_cast<double>(both) / total;
  m.jaccard = static_cast<double>(both) / static_cast<double>(na + nb - both);
  m.fpd = 2.0 * static_cast<double>(na - both) / total;
  m.fnd = 2.0 * static_cast<double>(nb - both) / total;
  return m;
}

struct ContourPoint {
  double row = 0.0;  // mm
  double col = 0.0;  // mm
  bool operator==(const ContourPoint&) const = default;
};

struct ContourPointSet {
  std::vector<ContourPoint> points;
  std::size_t size() const { return points.size(); }
};

// Foreground pixels touching the image border or a 4-neighbour background
// pixel, in row-major order, at pixel centres scaled by spacing.
inline ContourPointSet extract_contour(const BinaryMask& mask) {
  ContourPointSet out;
  auto fg = [&](std::size_t r, std::size_t c) { return mask.at(r, c) != 0; };
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (!fg(r, c)) continue;
      const bool boundary = r == 0 || c == 0 || r + 1 == mask.rows || c + 1 == mask.cols || !fg(r - 1, c) ||
                            !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1);
      if (boundary) {
        out.points.push_back(
            {static_cast<double>(r) * mask.spacing_row, static_cast<double>(c) * mask.spacing_col});
      }
    }
  }
  if (out.points.empty()) throw std::domain_error("extract_contour: mask has no foreground");
  return out;
}

struct DistanceMetrics {
  double hausdorff = 0.0;
  double mad_ab = 0.0;  // mean over x of d(x, Y)
  double mad_ba = 0.0;  // mean over y of d(y, X)
  double smad = 0.0;
};

namespace detail {

// d(x, Y) for every x. `ys` must be sorted by row; the scan walks outward
// from x's row and stops once the row gap alone exceeds the best distance.
// The squared distance uses the same expression as a direct pairwise loop
// and sqrt is correctly rounded, so results match it bit for bit.
inline std::vector<double> nearest_distances(const std::vector<ContourPoint>& xs, const std::vector<ContourPoint>& ys) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const ContourPoint& x = xs[i];
    double best = std::numeric_limits<double>::infinity();
    auto visit = [&](const ContourPoint& y) {
      const double dr = x.row - y.row, dc = x.col - y.col;
      const double rr = dr * dr;
      if (rr > best) return false;
      best = std::min(best, rr + dc * dc);
      return true;
    };
    const auto mid = std::lower_bound(ys.begin(), ys.end(), x.row,
                                      [](const ContourPoint& p, double r) { return p.row < r; });
    for (auto it = mid; it != ys.end() && visit(*it); ++it) {
    }
    for (auto it = mid; it != ys.begin() && visit(*std::prev(it)); --it) {
    }
    out[i] = std::sqrt(best);
  }
  return out;
}

}  // namespace detail

inline DistanceMetrics distance_metrics(const ContourPointSet& x, const ContourPointSet& y) {
  if (x.points.empty() || y.points.empty()) throw std::domain_error("distance_metrics: empty contour");
  auto by_row = [](const ContourPoint& p, const ContourPoint& q) { return p.row < q.row; };
  auto xs = x.points, ys = y.points;
  std::stable_sort(xs.begin(), xs.end(), by_row);
  std::stable_sort(ys.begin(), ys.end(), by_row);
  const auto dx = detail::nearest_distances(x.points, ys);
  const auto dy = detail::nearest_distances(y.points, xs);
  double sx = 0.0, sy = 0.0, hx = 0.0, hy = 0.0;
  for (double d : dx) {
    sx += d;
    hx = std::max(hx, d);
  }
  for (double d : dy) {
    sy += d;
    hy = std::max(hy, d);
  }
  DistanceMetrics m;
  m.hausdorff = std::max(hx, hy);
  m.mad_ab = sx / static_cast<double>(dx.size());
  m.mad_ba = sy / static_cast<double>(dy.size());
  m.smad = (sx + sy) / static_cast<double>(dx.size() + dy.size());
  return m;
}

inline double area_cm2(const BinaryMask& m) {
  return static_cast<double>(foreground_count(m)) * m.spacing_row * m.spacing_col / 100.0;
}

// Everything computed for one (automatic or rater, rater) pair. Distances
// are NaN when the first mask is empty.
struct PairMetrics {
  RegionMetrics region;
  DistanceMetrics distance;
  double area_a = 0.0;
  double area_b = 0.0;
};

inline PairMetrics pair_metrics(const BinaryMask& a, const BinaryMask& b) {
  PairMetrics p;
  p.region = region_metrics(a, b);
  if (foreground_count(a) > 0 && foreground_count(b) > 0) {
    p.distance = distance_metrics(extract_contour(a), extract_contour(b));
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    p.distance = {nan, nan, nan, nan};
  }
  p.area_a = area_cm2(a);
  p.area_b = area_cm2(b);
  return p;
}

}  // namespace sunet
