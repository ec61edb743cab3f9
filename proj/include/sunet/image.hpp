#pragma once

// 2-D pixel grids with physical spacing, and binary PGM (P5) I/O.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sunet {

template <typename T>
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double spacing_row = 1.0;  // mm per pixel along rows
  double spacing_col = 1.0;  // mm per pixel along columns
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double sr = 1.0, double sc = 1.0, T fill = T{})
      : rows(r), cols(c), spacing_row(sr), spacing_col(sc), data(r * c, fill) {
    if (!(sr > 0.0) || !(sc > 0.0)) throw std::invalid_argument("grid spacing must be positive");
  }

  std::size_t size() const { return data.size(); }
  T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool same_grid(const auto& other) const { return rows == other.rows && cols == other.cols; }
  bool operator==(const Grid&) const = default;
};

// Intensities in [0, 1].
using GrayImage = Grid<double>;
// Values in {0, 1}.
using BinaryMask = Grid<std::uint8_t>;

inline std::size_t foreground_count(const BinaryMask& m) {
  return static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), std::uint8_t{1}));
}

namespace pgm {

struct Raw {
  std::size_t rows = 0;
  std::size_t cols = 0;
  unsigned maxval = 255;
  std::vector<std::uint8_t> pixels;
};

inline Raw read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t += ch;
    }
    return t;
  };
  if (token() != "P5") throw std::runtime_error(path + ": not a binary PGM (P5)");
  Raw raw;
  try {
    raw.cols = std::stoul(token());
    raw.rows = std::stoul(token());
    raw.maxval = static_cast<unsigned>(std::stoul(token()));
  } catch (const std::exception&) {
    throw std::runtime_error(path + ": malformed PGM header");
  }
  if (raw.maxval == 0 || raw.maxval > 255) throw std::runtime_error(path + ": only 8-bit PGM is supported");
  raw.pixels.resize(raw.rows * raw.cols);
  in.read(reinterpret_cast<char*>(raw.pixels.data()), static_cast<std::streamsize>(raw.pixels.size()));
  if (!in) throw std::runtime_error(path + ": truncated PGM data");
  return raw;
}

inline void write(const std::string& path, std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& px) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace pgm

inline GrayImage read_image_pgm(const std::string& path, double spacing_row, double spacing_col) {
  auto raw = pgm::read(path);
  GrayImage img(raw.rows, raw.cols, spacing_row, spacing_col);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = raw.pixels[i] / static_cast<double>(raw.maxval);
  return img;
}

inline void write_image_pgm(const std::string& path, const GrayImage& img) {
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  pgm::write(path, img.rows, img.cols, px);
}

// Any value >= half the maximum is foreground.
inline BinaryMask read_mask_pgm(const std::string& path, double spacing_row, double spacing_col) {
  auto raw = pgm::read(path);
  BinaryMask m(raw.rows, raw.cols, spacing_row, spacing_col);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = 2u * raw.pixels[i] >= raw.maxval ? 1 : 0;
  return m;
}

inline void write_mask_pgm(const std::string& path, const BinaryMask& m) {
  std::vector<std::uint8_t> px(m.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.data[i] ? 255 : 0;
  pgm::write(path, m.rows, m.cols, px);
}

}  // namespace sunet
