#pragma once

// Labelled cases, the on-disk manifest, and a synthetic hiatus-like phantom
// generator with three simulated operators.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/image.hpp"
#include "sunet/metrics.hpp"
#include "sunet/records.hpp"

namespace sunet {

struct LabeledCase {
  std::string patient;
  std::string image_id;
  Stage stage = Stage::rest;
  GrayImage image;
  std::array<BinaryMask, 3> masks;
};

namespace detail {

// splitmix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return detail::mix64(detail::mix64(detail::mix64(seed) ^ a) ^ b);
}

// Closed star-shaped contour r(t) = radius * (1 + sum_k a_k cos(k t + phi_k)).
struct StarShape {
  double centre_row = 0.0;
  double centre_col = 0.0;
  double radius = 1.0;
  std::vector<double> amp;    // harmonics 1..K
  std::vector<double> phase;

  double radius_at(double theta) const {
    double f = 1.0;
    for (std::size_t k = 0; k < amp.size(); ++k) f += amp[k] * std::cos(static_cast<double>(k + 1) * theta + phase[k]);
    return radius * f;
  }
};

struct SynthOptions {
  std::size_t rows = 64;
  std::size_t cols = 64;
  double radius_fraction = 0.24;  // base radius / min(rows, cols), rest stage
  double inside = 0.2;
  double outside = 0.6;
  double speckle = 0.3;
  double blur_sigma = 1.0;
  double min_operator_dice = 0.88;
  double max_operator_dice = 0.99;
};

// Area scale relative to rest.
inline double stage_area_scale(Stage s) {
  switch (s) {
    case Stage::contraction: return 0.8;
    case Stage::rest: return 1.0;
    case Stage::valsalva: return 1.3;
  }
  return 1.0;
}

// Pixel (r, c) is inside when its offset, mapped through the inverse of an
// optional 2x2 operator transform, lies within the star.
inline BinaryMask rasterize(const StarShape& s, std::size_t rows, std::size_t cols,
                            const std::array<double, 4>& inv = {1, 0, 0, 1}, double shift_r = 0.0,
                            double shift_c = 0.0) {
  BinaryMask m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double dr0 = static_cast<double>(r) - s.centre_row - shift_r;
      const double dc0 = static_cast<double>(c) - s.centre_col - shift_c;
      const double dr = inv[0] * dr0 + inv[1] * dc0, dc = inv[2] * dr0 + inv[3] * dc0;
      const double rho = std::sqrt(dr * dr + dc * dc);
      m.at(r, c) = rho <= s.radius_at(std::atan2(dr, dc)) ? 1 : 0;
    }
  }
  return m;
}

namespace detail {

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * half + 1);
  double total = 0.0;
  for (int i = -half; i <= half; ++i) total += k[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  auto pass = [&](const GrayImage& src, bool along_rows) {
    GrayImage dst = src;
    const long R = static_cast<long>(src.rows), C = static_cast<long>(src.cols);
    for (long r = 0; r < R; ++r) {
      for (long c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i) {
          const long rr = along_rows ? std::clamp(r + i, 0L, R - 1) : r;
          const long cc = along_rows ? c : std::clamp(c + i, 0L, C - 1);
          acc += k[i + half] * src.data[static_cast<std::size_t>(rr * C + cc)];
        }
        dst.data[static_cast<std::size_t>(r * C + c)] = acc;
      }
    }
    return dst;
  };
  return pass(pass(img, true), false);
}

struct OperatorDraw {
  std::array<double, 4> inv;
  double shift_r, shift_c;
  StarShape shape;
};

// A rater: the true contour under a small affine plus low-frequency jitter.
inline OperatorDraw draw_operator(const StarShape& truth, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double rot = 0.04 * u(rng), sr = 1.0 + 0.03 * u(rng), sc = 1.0 + 0.03 * u(rng);
  const double shear = 0.03 * u(rng);
  const double c = std::cos(rot), s = std::sin(rot);
  const std::array<double, 4> fwd{c * sr, c * shear * sc - s * sc, s * sr, s * shear * sc + c * sc};
  const double det = fwd[0] * fwd[3] - fwd[1] * fwd[2];
  OperatorDraw d;
  d.inv = {fwd[3] / det, -fwd[1] / det, -fwd[2] / det, fwd[0] / det};
  d.shift_r = 0.8 * u(rng);
  d.shift_c = 0.8 * u(rng);
  d.shape = truth;
  d.shape.amp.resize(std::max<std::size_t>(truth.amp.size(), 6), 0.0);
  d.shape.phase.resize(d.shape.amp.size(), 0.0);
  for (std::size_t k = 0; k < d.shape.amp.size(); ++k) {
    // Jitter as a small perturbation added to harmonic k.
    const double ja = 0.025 * u(rng) / static_cast<double>(k + 1), jp = std::numbers::pi * u(rng);
    const double re = d.shape.amp[k] * std::cos(d.shape.phase[k]) + ja * std::cos(jp);
    const double im = d.shape.amp[k] * std::sin(d.shape.phase[k]) + ja * std::sin(jp);
    d.shape.amp[k] = std::hypot(re, im);
    d.shape.phase[k] = std::atan2(im, re);
  }
  return d;
}

}  // namespace detail

// One operator mask whose Dice against `truth_mask` lies inside the
// configured band; resampled until it does.
inline BinaryMask sample_operator_mask(const StarShape& truth, const BinaryMask& truth_mask,
                                       const SynthOptions& opt, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto d = detail::draw_operator(truth, rng);
    auto m = rasterize(d.shape, opt.rows, opt.cols, d.inv, d.shift_r, d.shift_c);
    if (foreground_count(m) == 0) continue;
    const double dice = region_metrics(m, truth_mask).dice;
    if (dice >= opt.min_operator_dice && dice <= opt.max_operator_dice) {
      m.spacing_row = truth_mask.spacing_row;
      m.spacing_col = truth_mask.spacing_col;
      return m;
    }
  }
  throw std::runtime_error("synth: could not draw an operator mask inside the Dice band");
}

struct SynthCase {
  LabeledCase labeled;
  BinaryMask truth;
  StarShape shape;
};

inline std::vector<SynthCase> synth_cases(std::size_t n_patients, std::size_t images_per_patient,
                                          std::uint64_t seed, const SynthOptions& opt = {}) {
  if (n_patients < 2) throw std::invalid_argument("synth: need at least 2 patients");
  if (images_per_patient < 1) throw std::invalid_argument("synth: need at least 1 image per patient");
  static constexpr Stage stage_cycle[3] = {Stage::contraction, Stage::rest, Stage::valsalva};
  std::vector<SynthCase> out;
  const double base = opt.radius_fraction * static_cast<double>(std::min(opt.rows, opt.cols));
  for (std::size_t p = 0; p < n_patients; ++p) {
    std::mt19937_64 rng(derive_seed(seed, 0x5917, p));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> spacing_dist(0.54, 0.07);
    const double spacing = std::max(0.05, spacing_dist(rng));
    StarShape patient;
    patient.radius = base * (1.0 + 0.08 * u(rng));
    patient.amp = {0.0, 0.12 + 0.06 * u(rng), 0.04 * u(rng), 0.03 * u(rng), 0.02 * u(rng)};
    patient.phase.resize(patient.amp.size());
    for (auto& ph : patient.phase) ph = std::numbers::pi * u(rng);
    char pid[32];
    std::snprintf(pid, sizeof pid, "P%02u", static_cast<unsigned>(p + 1));
    for (std::size_t i = 0; i < images_per_patient; ++i) {
      const Stage stage = stage_cycle[i % 3];
      StarShape shape = patient;
      shape.radius *= std::sqrt(stage_area_scale(stage));
      shape.centre_row = (static_cast<double>(opt.rows) - 1.0) / 2.0 + 1.5 * u(rng);
      shape.centre_col = (static_cast<double>(opt.cols) - 1.0) / 2.0 + 1.5 * u(rng);
      for (std::size_t k = 1; k < shape.amp.size(); ++k) shape.amp[k] *= 1.0 + 0.1 * u(rng);

      BinaryMask truth = rasterize(shape, opt.rows, opt.cols);
      truth.spacing_row = truth.spacing_col = spacing;

      GrayImage img(opt.rows, opt.cols, spacing, spacing);
      std::normal_distribution<double> z;
      for (std::size_t k = 0; k < img.size(); ++k) {
        const double v = truth.data[k] ? opt.inside : opt.outside;
        img.data[k] = v * std::max(0.0, 1.0 + opt.speckle * z(rng));
      }
      img = detail::gaussian_blur(img, opt.blur_sigma);
      for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);

      SynthCase sc;
      sc.shape = shape;
      sc.labeled.patient = pid;
      char iid[64];
      std::snprintf(iid, sizeof iid, "%s_%02u", pid, static_cast<unsigned>(i + 1));
      sc.labeled.image_id = iid;
      sc.labeled.stage = stage;
      sc.labeled.image = std::move(img);
      // Raters are redrawn together until every pair agrees with Dice >= 0.8.
      for (int attempt = 0;; ++attempt) {
        for (auto& m : sc.labeled.masks) m = sample_operator_mask(shape, truth, opt, rng);
        const auto& ms = sc.labeled.masks;
        if (region_metrics(ms[0], ms[1]).dice >= 0.8 && region_metrics(ms[0], ms[2]).dice >= 0.8 &&
            region_metrics(ms[1], ms[2]).dice >= 0.8) {
          break;
        }
        if (attempt > 100) throw std::runtime_error("synth: operator masks disagree too much");
      }
      sc.truth = std::move(truth);
      out.push_back(std::move(sc));
    }
  }
  return out;
}

struct ManifestEntry {
  std::string patient;
  std::string image_id;
  Stage stage = Stage::rest;
  std::string image_path;  // relative to the manifest directory
  std::array<std::string, 3> mask_paths;
  double spacing_row = 1.0;
  double spacing_col = 1.0;
};

inline nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& entries) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& e : entries) {
    cases.push_back({{"patient", e.patient},
                     {"image_id", e.image_id},
                     {"stage", to_string(e.stage)},
                     {"image", e.image_path},
                     {"masks", {e.mask_paths[0], e.mask_paths[1], e.mask_paths[2]}},
                     {"spacing_row_mm", e.spacing_row},
                     {"spacing_col_mm", e.spacing_col}});
  }
  return {{"cases", cases}};
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  std::vector<ManifestEntry> out;
  for (const auto& c : j.at("cases")) {
    ManifestEntry e;
    e.patient = c.at("patient").get<std::string>();
    if (e.patient.empty()) throw std::runtime_error(path + ": empty patient id");
    e.image_id = c.at("image_id").get<std::string>();
    e.stage = stage_from_string(c.at("stage").get<std::string>());
    e.image_path = c.at("image").get<std::string>();
    const auto& masks = c.at("masks");
    if (masks.size() != 3) throw std::runtime_error(path + ": " + e.image_id + " needs exactly 3 masks");
    for (int k = 0; k < 3; ++k) e.mask_paths[k] = masks[k].get<std::string>();
    e.spacing_row = c.at("spacing_row_mm").get<double>();
    e.spacing_col = c.at("spacing_col_mm").get<double>();
    out.push_back(std::move(e));
  }
  return out;
}

inline LabeledCase load_case(const std::filesystem::path& root, const ManifestEntry& e) {
  LabeledCase c;
  c.patient = e.patient;
  c.image_id = e.image_id;
  c.stage = e.stage;
  c.image = read_image_pgm((root / e.image_path).string(), e.spacing_row, e.spacing_col);
  for (int k = 0; k < 3; ++k) {
    c.masks[k] = read_mask_pgm((root / e.mask_paths[k]).string(), e.spacing_row, e.spacing_col);
    if (!c.masks[k].same_grid(c.image)) throw std::runtime_error(e.image_id + ": mask grid differs from image");
    if (foreground_count(c.masks[k]) == 0) throw std::runtime_error(e.image_id + ": empty operator mask");
  }
  return c;
}

inline std::vector<LabeledCase> load_dataset(const std::string& manifest_path) {
  const auto root = std::filesystem::path(manifest_path).parent_path();
  std::vector<LabeledCase> out;
  for (const auto& e : read_manifest(manifest_path)) out.push_back(load_case(root, e));
  return out;
}

// Writes <root>/manifest.json, images/*.pgm and masks/op{1,2,3}/*.pgm.
inline std::vector<ManifestEntry> write_dataset(const std::filesystem::path& root,
                                                const std::vector<LabeledCase>& cases) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  for (int k = 1; k <= 3; ++k) fs::create_directories(root / "masks" / ("op" + std::to_string(k)));
  std::vector<ManifestEntry> entries;
  for (const auto& c : cases) {
    ManifestEntry e;
    e.patient = c.patient;
    e.image_id = c.image_id;
    e.stage = c.stage;
    e.image_path = "images/" + c.image_id + ".pgm";
    write_image_pgm((root / e.image_path).string(), c.image);
    for (int k = 0; k < 3; ++k) {
      e.mask_paths[k] = "masks/op" + std::to_string(k + 1) + "/" + c.image_id + ".pgm";
      write_mask_pgm((root / e.mask_paths[k]).string(), c.masks[k]);
    }
    e.spacing_row = c.image.spacing_row;
    e.spacing_col = c.image.spacing_col;
    entries.push_back(std::move(e));
  }
  std::ofstream out(root / "manifest.json");
  out << manifest_to_json(entries).dump(2) << '\n';
  return entries;
}

inline std::vector<ManifestEntry> synth_dataset(const std::filesystem::path& root, std::size_t n_patients,
                                                std::size_t images_per_patient, std::uint64_t seed,
                                                const SynthOptions& opt = {}) {
  std::vector<LabeledCase> cases;
  for (auto& sc : synth_cases(n_patients, images_per_patient, seed, opt)) cases.push_back(std::move(sc.labeled));
  return write_dataset(root, cases);
}

}  // namespace sunet
