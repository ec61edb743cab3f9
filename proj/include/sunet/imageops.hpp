#pragma once

// Geometric pre-processing, augmentation and morphological post-processing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "sunet/image.hpp"

namespace sunet {

// Centre-aligned crop and/or zero pad to (rows, cols). When the size
// difference is odd the extra pixel goes to the bottom/right.
template <typename T>
Grid<T> crop_or_pad(const Grid<T>& src, std::size_t rows, std::size_t cols) {
  Grid<T> dst(rows, cols, src.spacing_row, src.spacing_col, T{});
  auto offsets = [](std::size_t from, std::size_t to) {
    // (first source index, first destination index)
    if (from >= to) return std::pair<std::size_t, std::size_t>{(from - to) / 2, 0};
    return std::pair<std::size_t, std::size_t>{0, (to - from) / 2};
  };
  const auto [sr, dr] = offsets(src.rows, rows);
  const auto [sc, dc] = offsets(src.cols, cols);
  const std::size_t nr = std::min(src.rows, rows), nc = std::min(src.cols, cols);
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t j = 0; j < nc; ++j) dst.at(dr + i, dc + j) = src.at(sr + i, sc + j);
  }
  return dst;
}

namespace detail {

inline double corner_aligned(std::size_t i, std::size_t from, std::size_t to) {
  if (to == 1) return (static_cast<double>(from) - 1.0) / 2.0;
  return static_cast<double>(i) * (static_cast<double>(from) - 1.0) / (static_cast<double>(to) - 1.0);
}

// Bilinear sample with coordinates clamped into the grid.
inline double bilinear(const GrayImage& img, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(img.rows - 1));
  c = std::clamp(c, 0.0, static_cast<double>(img.cols - 1));
  const auto r0 = static_cast<std::size_t>(std::floor(r)), c0 = static_cast<std::size_t>(std::floor(c));
  const std::size_t r1 = std::min(r0 + 1, img.rows - 1), c1 = std::min(c0 + 1, img.cols - 1);
  const double fr = r - static_cast<double>(r0), fc = c - static_cast<double>(c0);
  const double top = img.at(r0, c0) * (1.0 - fc) + img.at(r0, c1) * fc;
  const double bottom = img.at(r1, c0) * (1.0 - fc) + img.at(r1, c1) * fc;
  return top * (1.0 - fr) + bottom * fr;
}

}  // namespace detail

// Corner-aligned bilinear resize; spacing scales with the size ratio so the
// physical field of view is unchanged.
inline GrayImage resize_bilinear(const GrayImage& src, std::size_t rows, std::size_t cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("resize_bilinear: target extent must be >= 1");
  if (src.rows == rows && src.cols == cols) return src;
  GrayImage dst(rows, cols, src.spacing_row * static_cast<double>(src.rows) / static_cast<double>(rows),
                src.spacing_col * static_cast<double>(src.cols) / static_cast<double>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    const double r = detail::corner_aligned(i, src.rows, rows);
    for (std::size_t j = 0; j < cols; ++j) dst.at(i, j) = detail::bilinear(src, r, detail::corner_aligned(j, src.cols, cols));
  }
  return dst;
}

inline GrayImage mask_to_image(const BinaryMask& m) {
  GrayImage img(m.rows, m.cols, m.spacing_row, m.spacing_col);
  for (std::size_t i = 0; i < m.size(); ++i) img.data[i] = m.data[i];
  return img;
}

inline BinaryMask threshold(const GrayImage& img, double level = 0.5) {
  BinaryMask m(img.rows, img.cols, img.spacing_row, img.spacing_col);
  for (std::size_t i = 0; i < img.size(); ++i) m.data[i] = img.data[i] >= level ? 1 : 0;
  return m;
}

// Resizes the mask's 0/1 probability map bilinearly and re-thresholds at 0.5.
inline BinaryMask resize_mask(const BinaryMask& src, std::size_t rows, std::size_t cols) {
  return threshold(resize_bilinear(mask_to_image(src), rows, cols));
}

inline BinaryMask upsample_nearest(const BinaryMask& src, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  BinaryMask dst(src.rows * factor, src.cols * factor, src.spacing_row / static_cast<double>(factor),
                 src.spacing_col / static_cast<double>(factor));
  for (std::size_t i = 0; i < dst.rows; ++i) {
    for (std::size_t j = 0; j < dst.cols; ++j) dst.at(i, j) = src.at(i / factor, j / factor);
  }
  return dst;
}

// Six degrees of freedom: rotation, 2 translations, 2 scales, 1 shear.
struct AffineParams {
  double rotation = 0.0;       // radians
  double translate_row = 0.0;  // pixels
  double translate_col = 0.0;
  double scale_row = 1.0;
  double scale_col = 1.0;
  double shear = 0.0;

  // Maps a centred (row, col) offset; forward = rotation * shear * scale.
  std::array<double, 4> matrix() const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    // shear * scale = [[sr, shear*sc], [0, sc]]
    const double a00 = scale_row, a01 = shear * scale_col, a10 = 0.0, a11 = scale_col;
    return {c * a00 - s * a10, c * a01 - s * a11, s * a00 + c * a10, s * a01 + c * a11};
  }
};

struct AffineRanges {
  double max_rotation = 10.0 * std::numbers::pi / 180.0;
  double max_translation = 8.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_shear = 0.1;
};

inline AffineParams sample_affine(const AffineRanges& r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), s(r.min_scale, r.max_scale);
  AffineParams p;
  p.rotation = r.max_rotation * u(rng);
  p.translate_row = r.max_translation * u(rng);
  p.translate_col = r.max_translation * u(rng);
  p.scale_row = s(rng);
  p.scale_col = s(rng);
  p.shear = r.max_shear * u(rng);
  return p;
}

struct ImageMaskPair {
  GrayImage image;
  BinaryMask mask;
};

// Applies the same transform about the grid centre to both; the image is
// sampled bilinearly, the mask by nearest neighbour, outside pixels are 0.
inline ImageMaskPair apply_affine(const GrayImage& img, const BinaryMask& mask, const AffineParams& p) {
  if (!img.same_grid(mask)) throw std::invalid_argument("apply_affine: image and mask grids differ");
  const auto m = p.matrix();
  const double det = m[0] * m[3] - m[1] * m[2];
  if (std::abs(det) < 1e-12) throw std::invalid_argument("apply_affine: singular transform");
  const std::array<double, 4> inv{m[3] / det, -m[1] / det, -m[2] / det, m[0] / det};
  const double cr = (static_cast<double>(img.rows) - 1.0) / 2.0, cc = (static_cast<double>(img.cols) - 1.0) / 2.0;
  ImageMaskPair out{GrayImage(img.rows, img.cols, img.spacing_row, img.spacing_col),
                    BinaryMask(mask.rows, mask.cols, mask.spacing_row, mask.spacing_col)};
  const double rmax = static_cast<double>(img.rows) - 1.0, cmax = static_cast<double>(img.cols) - 1.0;
  for (std::size_t i = 0; i < img.rows; ++i) {
    for (std::size_t j = 0; j < img.cols; ++j) {
      const double dr = static_cast<double>(i) - cr - p.translate_row;
      const double dc = static_cast<double>(j) - cc - p.translate_col;
      const double sr = inv[0] * dr + inv[1] * dc + cr;
      const double sc = inv[2] * dr + inv[3] * dc + cc;
      if (sr >= 0.0 && sr <= rmax && sc >= 0.0 && sc <= cmax) out.image.at(i, j) = detail::bilinear(img, sr, sc);
      const double nr = std::round(sr), nc = std::round(sc);
      if (nr >= 0.0 && nr <= rmax && nc >= 0.0 && nc <= cmax) {
        out.mask.at(i, j) = mask.at(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc));
      }
    }
  }
  return out;
}

inline ImageMaskPair random_affine(const GrayImage& img, const BinaryMask& mask, const AffineRanges& ranges,
                                   std::mt19937_64& rng) {
  return apply_affine(img, mask, sample_affine(ranges, rng));
}

// Background pixels not 4-connected to the image border become foreground.
inline BinaryMask fill_holes(const BinaryMask& mask) {
  const std::size_t rows = mask.rows, cols = mask.cols;
  std::vector<std::uint8_t> outside(mask.size(), 0);
  std::deque<std::size_t> queue;
  auto seed = [&](std::size_t r, std::size_t c) {
    const std::size_t i = r * cols + c;
    if (!mask.data[i] && !outside[i]) {
      outside[i] = 1;
      queue.push_back(i);
    }
  };
  for (std::size_t c = 0; c < cols; ++c) {
    seed(0, c);
    seed(rows - 1, c);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    seed(r, 0);
    seed(r, cols - 1);
  }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const std::size_t r = i / cols, c = i % cols;
    if (r > 0) seed(r - 1, c);
    if (r + 1 < rows) seed(r + 1, c);
    if (c > 0) seed(r, c - 1);
    if (c + 1 < cols) seed(r, c + 1);
  }
  BinaryMask out = mask;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = outside[i] ? 0 : 1;
  return out;
}

// Keeps the largest 8-connected foreground component. Components are found
// in row-major scan order, so on equal areas the one containing the smallest
// row-major index wins.
inline BinaryMask largest_component(const BinaryMask& mask) {
  const std::size_t rows = mask.rows, cols = mask.cols;
  std::vector<int> label(mask.size(), -1);
  std::vector<std::size_t> areas;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.data[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(areas.size());
    std::size_t area = 0;
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++area;
      const long r = static_cast<long>(i / cols), c = static_cast<long>(i % cols);
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          const long nr = r + dr, nc = c + dc;
          if (nr < 0 || nc < 0 || nr >= static_cast<long>(rows) || nc >= static_cast<long>(cols)) continue;
          const std::size_t n = static_cast<std::size_t>(nr) * cols + static_cast<std::size_t>(nc);
          if (mask.data[n] && label[n] < 0) {
            label[n] = id;
            stack.push_back(n);
          }
        }
      }
    }
    areas.push_back(area);
  }
  BinaryMask out = mask;
  std::fill(out.data.begin(), out.data.end(), std::uint8_t{0});
  if (areas.empty()) return out;
  int best = 0;
  for (std::size_t k = 1; k < areas.size(); ++k) {
    if (areas[k] > areas[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = label[i] == best ? 1 : 0;
  return out;
}

inline BinaryMask post_process(const BinaryMask& mask) { return largest_component(fill_holes(mask)); }

}  // namespace sunet
