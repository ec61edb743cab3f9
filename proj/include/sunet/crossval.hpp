#pragma once

// Leave-one-patient-out training and evaluation.

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sunet/csv.hpp"
#include "sunet/dataset.hpp"
#include "sunet/imageops.hpp"
#include "sunet/metrics.hpp"
#include "sunet/network.hpp"
#include "sunet/records.hpp"
#include "sunet/stats.hpp"

namespace sunet {

struct Fold {
  std::string patient;  // held out
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// One fold per distinct patient, in order of first appearance.
inline std::vector<Fold> plan_lopo(const std::vector<std::string>& patient_of_case) {
  std::vector<std::string> patients;
  for (const auto& p : patient_of_case) {
    if (std::find(patients.begin(), patients.end(), p) == patients.end()) patients.push_back(p);
  }
  if (patients.size() < 2) throw std::invalid_argument("plan_lopo: need at least 2 patients");
  std::vector<Fold> folds;
  for (const auto& p : patients) {
    Fold f;
    f.patient = p;
    for (std::size_t i = 0; i < patient_of_case.size(); ++i) (patient_of_case[i] == p ? f.test : f.train).push_back(i);
    folds.push_back(std::move(f));
  }
  return folds;
}

inline std::vector<Fold> plan_lopo(const std::vector<LabeledCase>& cases) {
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.patient);
  return plan_lopo(ids);
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t iterations = 600;
  double learning_rate = 1e-4;
  std::size_t canvas_rows = 64;
  std::size_t canvas_cols = 64;
  std::size_t input_rows = 32;
  std::size_t input_cols = 32;
  bool augment = true;
  AffineRanges augment_ranges;
  std::size_t eval_every = 25;             // fold-1 test Dice cadence
  std::vector<std::size_t> checkpoint_at;  // fold-1 iterations to checkpoint
  std::size_t jobs = 1;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"iterations", c.iterations},
       {"learning_rate", c.learning_rate},
       {"canvas", {c.canvas_rows, c.canvas_cols}},
       {"input", {c.input_rows, c.input_cols}},
       {"augment", c.augment},
       {"augment_ranges",
        {{"max_rotation", c.augment_ranges.max_rotation},
         {"max_translation", c.augment_ranges.max_translation},
         {"min_scale", c.augment_ranges.min_scale},
         {"max_scale", c.augment_ranges.max_scale},
         {"max_shear", c.augment_ranges.max_shear}}},
       {"eval_every", c.eval_every},
       {"checkpoint_at", c.checkpoint_at}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("canvas")) {
    c.canvas_rows = j.at("canvas").at(0).get<std::size_t>();
    c.canvas_cols = j.at("canvas").at(1).get<std::size_t>();
  }
  if (j.contains("input")) {
    c.input_rows = j.at("input").at(0).get<std::size_t>();
    c.input_cols = j.at("input").at(1).get<std::size_t>();
  }
  c.augment = j.value("augment", c.augment);
  if (j.contains("augment_ranges")) {
    const auto& a = j.at("augment_ranges");
    auto& r = c.augment_ranges;
    r.max_rotation = a.value("max_rotation", r.max_rotation);
    r.max_translation = a.value("max_translation", r.max_translation);
    r.min_scale = a.value("min_scale", r.min_scale);
    r.max_scale = a.value("max_scale", r.max_scale);
    r.max_shear = a.value("max_shear", r.max_shear);
  }
  c.eval_every = j.value("eval_every", c.eval_every);
  c.checkpoint_at = j.value("checkpoint_at", c.checkpoint_at);
}

struct ExperimentConfig {
  NetworkConfig network;
  LossConfig loss;
  TrainConfig train;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"network", c.network}, {"loss", c.loss}, {"train", c.train}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("network")) c.network = j.at("network").get<NetworkConfig>();
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
}

enum class Arch { sunet, sunet_dropout, unet };

inline Arch arch_from_string(const std::string& s) {
  if (s == "sunet") return Arch::sunet;
  if (s == "sunet-dropout") return Arch::sunet_dropout;
  if (s == "unet") return Arch::unet;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::sunet: return "sunet";
    case Arch::sunet_dropout: return "sunet-dropout";
    case Arch::unet: return "unet";
  }
  return "sunet";
}

// Only the activation and dropout differ between architectures.
inline void apply_arch(NetworkConfig& n, Arch a) {
  n.activation = a == Arch::unet ? Activation::batchnorm_relu : Activation::selu;
  n.dropout_rate = a == Arch::sunet_dropout ? 0.5 : 0.0;
}

// desk: 64x64 canvas, 32x32 network input, 16 channels, 600 iterations.
// full: 214x262 canvas, 107x131 network input, 64 channels, 3000 iterations.
inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk") {
    c.network.channels = 16;
    c.train.iterations = 600;
    c.train.canvas_rows = c.train.canvas_cols = 64;
    c.train.input_rows = c.train.input_cols = 32;
  } else if (name == "full") {
    c.network.channels = 64;
    c.train.iterations = 3000;
    c.train.canvas_rows = 214;
    c.train.canvas_cols = 262;
    c.train.input_rows = 107;
    c.train.input_cols = 131;
    c.train.eval_every = 100;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  return c;
}

struct PreparedCase {
  const LabeledCase* source = nullptr;
  GrayImage canvas;  // standardised, canvas grid
  std::array<BinaryMask, 3> masks;  // canvas grid
  GrayImage input;   // network grid
};

// Zero mean, unit variance over the image (flat images only get centred).
inline GrayImage standardize(const GrayImage& img) {
  double mean = 0.0;
  for (double v : img.data) mean += v;
  mean /= static_cast<double>(img.size());
  double var = 0.0;
  for (double v : img.data) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(img.size()));
  GrayImage out = img;
  for (auto& v : out.data) v = sd > 0.0 ? (v - mean) / sd : v - mean;
  return out;
}

inline PreparedCase prepare_case(const LabeledCase& c, const TrainConfig& t) {
  PreparedCase p;
  p.source = &c;
  p.canvas = standardize(crop_or_pad(c.image, t.canvas_rows, t.canvas_cols));
  for (int k = 0; k < 3; ++k) p.masks[k] = crop_or_pad(c.masks[k], t.canvas_rows, t.canvas_cols);
  p.input = resize_bilinear(p.canvas, t.input_rows, t.input_cols);
  return p;
}

inline Tensor image_tensor(const std::vector<const GrayImage*>& imgs) {
  const std::size_t h = imgs.front()->rows, w = imgs.front()->cols;
  std::vector<double> v;
  v.reserve(imgs.size() * h * w);
  for (const auto* im : imgs) v.insert(v.end(), im->data.begin(), im->data.end());
  return Tensor({imgs.size(), 1, h, w}, std::move(v));
}

// Network prediction on the canvas grid: threshold, nearest upsampling and
// post-processing (fill holes, then largest component).
inline BinaryMask predict_mask(Network& net, const PreparedCase& p) {
  const auto out = net.forward(nullptr, image_tensor({&p.input}), false, nullptr);
  const std::size_t h = p.input.rows, w = p.input.cols;
  BinaryMask low(h, w, p.input.spacing_row, p.input.spacing_col);
  const auto probs = out.probs.values();
  for (std::size_t i = 0; i < h * w; ++i) low.data[i] = probs[h * w + i] >= 0.5 ? 1 : 0;
  BinaryMask up = upsample_nearest(low, p.canvas.rows / h);
  up.spacing_row = p.canvas.spacing_row;
  up.spacing_col = p.canvas.spacing_col;
  return post_process(up);
}

struct CurvePoint {
  std::size_t fold;
  std::size_t iteration;
  double loss;
};

struct DicePoint {
  std::size_t iteration;
  double mean_dice;
  double median_dice;
};

struct FoldResult {
  std::vector<MetricRow> computer;
  std::vector<CurvePoint> curve;
  std::vector<DicePoint> test_dice;  // first fold only
};

struct CrossvalResult {
  std::vector<MetricRow> computer;
  std::vector<MetricRow> inter;
  std::vector<CurvePoint> curves;
  std::vector<DicePoint> test_dice;
};

inline MetricRow make_row(const LabeledCase& c, const std::string& a, const std::string& b, const PairMetrics& m) {
  return MetricRow{c.patient, c.image_id, c.stage, a, b, m};
}

inline std::vector<MetricRow> interobserver_rows(const std::vector<PreparedCase>& prepared) {
  std::vector<MetricRow> rows;
  for (const auto& p : prepared) {
    for (const auto& [a, b] : operator_pairs()) {
      const int i = a[2] - '1', j = b[2] - '1';
      rows.push_back(make_row(*p.source, a, b, pair_metrics(p.masks[i], p.masks[j])));
    }
  }
  return rows;
}

struct FoldOptions {
  std::size_t fold_index = 0;
  bool track_test_dice = false;
  std::optional<std::filesystem::path> checkpoint_dir;
};

namespace detail {

inline double mean_test_dice(Network& net, const std::vector<PreparedCase>& prepared, const Fold& fold,
                             double* median) {
  std::vector<double> d;
  for (std::size_t i : fold.test) {
    const auto pred = predict_mask(net, prepared[i]);
    for (int k = 0; k < 3; ++k) d.push_back(region_metrics(pred, prepared[i].masks[k]).dice);
  }
  if (median) *median = median_iqr(d).median;
  return detail::mean(d);
}

}  // namespace detail

inline FoldResult run_fold(const std::vector<PreparedCase>& prepared, const Fold& fold, const ExperimentConfig& cfg,
                           std::uint64_t seed, const FoldOptions& opt) {
  const auto& t = cfg.train;
  if (t.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (t.canvas_rows % t.input_rows || t.canvas_cols % t.input_cols ||
      t.canvas_rows / t.input_rows != t.canvas_cols / t.input_cols) {
    throw std::invalid_argument("canvas must be an integer multiple of the network input in both axes");
  }
  const std::uint64_t f = opt.fold_index;
  Network net(cfg.network, derive_seed(seed, 1, f));
  net.check_input(t.input_rows, t.input_cols);
  std::mt19937_64 aug_rng(derive_seed(seed, 2, f)), drop_rng(derive_seed(seed, 3, f)),
      order_rng(derive_seed(seed, 4, f));
  AdamState adam;
  adam.lr = t.learning_rate;

  std::vector<std::pair<std::size_t, int>> samples;
  for (std::size_t i : fold.train) {
    for (int k = 0; k < 3; ++k) samples.emplace_back(i, k);
  }
  std::size_t cursor = samples.size();

  FoldResult out;
  auto track = [&](std::size_t it) {
    if (!opt.track_test_dice) return;
    double med = 0.0;
    const double mean = detail::mean_test_dice(net, prepared, fold, &med);
    out.test_dice.push_back({it, mean, med});
  };
  auto checkpoint = [&](std::size_t it) {
    if (!opt.checkpoint_dir) return;
    if (std::find(t.checkpoint_at.begin(), t.checkpoint_at.end(), it) == t.checkpoint_at.end()) return;
    std::filesystem::create_directories(*opt.checkpoint_dir);
    save_checkpoint((*opt.checkpoint_dir / ("iter_" + std::to_string(it) + ".ckpt")).string(), net, it);
  };
  track(0);
  checkpoint(0);
  for (std::size_t it = 1; it <= t.iterations; ++it) {
    std::vector<GrayImage> imgs;
    std::vector<double> targets;
    for (std::size_t b = 0; b < t.batch_size; ++b) {
      if (cursor == samples.size()) {
        std::shuffle(samples.begin(), samples.end(), order_rng);
        cursor = 0;
      }
      const auto [ci, k] = samples[cursor++];
      const PreparedCase& p = prepared[ci];
      GrayImage img = p.canvas;
      BinaryMask mask = p.masks[k];
      if (t.augment) {
        auto pair = random_affine(img, mask, t.augment_ranges, aug_rng);
        img = std::move(pair.image);
        mask = std::move(pair.mask);
      }
      imgs.push_back(resize_bilinear(img, t.input_rows, t.input_cols));
      const auto m = resize_mask(mask, t.input_rows, t.input_cols);
      for (auto v : m.data) targets.push_back(v);
    }
    std::vector<const GrayImage*> ptrs;
    for (const auto& im : imgs) ptrs.push_back(&im);
    Batch batch{image_tensor(ptrs), Tensor({t.batch_size, t.input_rows, t.input_cols}, std::move(targets))};
    double loss;
    try {
      loss = train_step(net, batch, cfg.loss, adam, drop_rng);
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + fold.patient + ", iteration " + std::to_string(it) + ": " + e.what());
    }
    out.curve.push_back({opt.fold_index + 1, it, loss});
    if (t.eval_every > 0 && (it % t.eval_every == 0 || it == t.iterations)) track(it);
    checkpoint(it);
  }
  for (std::size_t i : fold.test) {
    const auto pred = predict_mask(net, prepared[i]);
    for (int k = 0; k < 3; ++k) {
      out.computer.push_back(make_row(*prepared[i].source, "computer", "op" + std::to_string(k + 1),
                                      pair_metrics(pred, prepared[i].masks[k])));
    }
  }
  return out;
}

// Runs the selected folds (all when `only` is empty). Folds may run on
// `jobs` threads; results are merged in fold order.
inline CrossvalResult run_crossval(const std::vector<LabeledCase>& cases, const ExperimentConfig& cfg,
                                   std::uint64_t seed, const std::vector<std::size_t>& only = {},
                                   std::optional<std::filesystem::path> checkpoint_dir = std::nullopt) {
  const auto folds = plan_lopo(cases);
  std::vector<PreparedCase> prepared;
  for (const auto& c : cases) prepared.push_back(prepare_case(c, cfg.train));
  std::vector<std::size_t> selected = only;
  if (selected.empty()) {
    for (std::size_t i = 0; i < folds.size(); ++i) selected.push_back(i);
  }
  for (std::size_t f : selected) {
    if (f >= folds.size()) throw std::invalid_argument("fold index out of range");
  }

  std::vector<FoldResult> results(selected.size());
  std::vector<std::exception_ptr> errors(selected.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t s; (s = next++) < selected.size();) {
      try {
        FoldOptions o;
        o.fold_index = selected[s];
        o.track_test_dice = s == 0;
        if (s == 0) o.checkpoint_dir = checkpoint_dir;
        results[s] = run_fold(prepared, folds[selected[s]], cfg, seed, o);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.train.jobs, selected.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  CrossvalResult r;
  std::vector<PreparedCase> tested;
  for (std::size_t s = 0; s < selected.size(); ++s) {
    auto& fr = results[s];
    r.computer.insert(r.computer.end(), fr.computer.begin(), fr.computer.end());
    r.curves.insert(r.curves.end(), fr.curve.begin(), fr.curve.end());
    if (s == 0) r.test_dice = fr.test_dice;
    for (std::size_t i : folds[selected[s]].test) tested.push_back(prepared[i]);
  }
  r.inter = interobserver_rows(tested);
  return r;
}

inline void write_curves_csv(std::ostream& os, const std::vector<CurvePoint>& curves) {
  os << "fold,iteration,loss\n";
  for (const auto& c : curves) os << c.fold << ',' << c.iteration << ',' << csv::num(c.loss) << '\n';
}

inline void write_test_dice_csv(std::ostream& os, const std::vector<DicePoint>& pts) {
  os << "iteration,mean_dice,median_dice\n";
  for (const auto& p : pts) os << p.iteration << ',' << csv::num(p.mean_dice) << ',' << csv::num(p.median_dice) << '\n';
}

// Writes metrics.csv, interobserver.csv, curves.csv and test_dice.csv.
inline void write_crossval_outputs(const std::filesystem::path& dir, const CrossvalResult& r) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("metrics.csv");
    write_metric_csv(f, r.computer);
  }
  {
    auto f = open("interobserver.csv");
    write_metric_csv(f, r.inter);
  }
  {
    auto f = open("curves.csv");
    write_curves_csv(f, r.curves);
  }
  {
    auto f = open("test_dice.csv");
    write_test_dice_csv(f, r.test_dice);
  }
}

// Histogram of the last activation block on `probe`, 64 bins over [-2, 4];
// values outside the range are counted in the end bins so counts always sum
// to the number of activations.
struct Histogram {
  double low = -2.0;
  double high = 4.0;
  std::vector<std::size_t> counts = std::vector<std::size_t>(64, 0);
};

inline Histogram activation_histogram(Network& net, const Tensor& probe) {
  const auto out = net.forward(nullptr, probe, false, nullptr);
  Histogram h;
  const double width = (h.high - h.low) / static_cast<double>(h.counts.size());
  for (double v : out.last_activation.values()) {
    const double pos = std::floor((v - h.low) / width);
    const auto bin = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(h.counts.size() - 1)));
    ++h.counts[bin];
  }
  return h;
}

// One histogram per requested checkpoint `iter_<n>.ckpt` in `dir`.
inline std::vector<std::pair<std::size_t, Histogram>> emit_activation_histogram(
    const std::filesystem::path& dir, const Tensor& probe, const std::vector<std::size_t>& iterations) {
  std::vector<std::pair<std::size_t, Histogram>> out;
  for (std::size_t it : iterations) {
    const auto path = dir / ("iter_" + std::to_string(it) + ".ckpt");
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
    auto ck = load_checkpoint(path.string());
    out.emplace_back(it, activation_histogram(ck.net, probe));
  }
  return out;
}

inline void write_histogram_csv(std::ostream& os, const std::vector<std::pair<std::size_t, Histogram>>& hs) {
  os << "iteration,bin_low,bin_high,count\n";
  for (const auto& [it, h] : hs) {
    const double width = (h.high - h.low) / static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      os << it << ',' << csv::num(h.low + width * static_cast<double>(b)) << ','
         << csv::num(h.low + width * static_cast<double>(b + 1)) << ',' << h.counts[b] << '\n';
    }
  }
}

}  // namespace sunet
