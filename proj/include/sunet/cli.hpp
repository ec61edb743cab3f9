#pragma once

// Command-line front end: synth, train, crossval, report, selfnorm-check,
// grad-check and histogram subcommands.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "sunet/crossval.hpp"
#include "sunet/dataset.hpp"
#include "sunet/report.hpp"
#include "sunet/snn.hpp"
#include "sunet/stats.hpp"
#include "sunet/validation.hpp"

namespace sunet {

namespace detail {

// Training allocates and frees many multi-megabyte buffers per step; keeping
// them on the heap instead of fresh mmap pages avoids repeated page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

struct ExperimentFlags {
  std::string preset = "desk";
  std::string config;
  std::string arch = "sunet";
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> batch_size;
  std::size_t jobs = 1;
  std::vector<std::size_t> checkpoint_at;
};

inline void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--preset", f.preset, "Base configuration")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--config", f.config, "JSON file with network/loss/train sections overriding the preset")
      ->check(CLI::ExistingFile);
  cmd->add_option("--arch", f.arch, "Architecture")->check(CLI::IsMember({"sunet", "sunet-dropout", "unet"}));
  cmd->add_option("--iterations", f.iterations, "Training iterations per fold");
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size");
  cmd->add_option("--jobs", f.jobs, "Folds trained concurrently")->check(CLI::PositiveNumber);
  cmd->add_option("--checkpoint-at", f.checkpoint_at, "First-fold iterations to checkpoint")->delimiter(',');
}

// preset, then the config file, then the architecture, then explicit flags.
inline ExperimentConfig resolve(const ExperimentFlags& f) {
  ExperimentConfig cfg = preset(f.preset);
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(f.config + ": " + e.what());
    }
    if (j.contains("network")) from_json(j.at("network"), cfg.network);
    if (j.contains("loss")) from_json(j.at("loss"), cfg.loss);
    if (j.contains("train")) from_json(j.at("train"), cfg.train);
  }
  apply_arch(cfg.network, arch_from_string(f.arch));
  if (f.iterations) cfg.train.iterations = *f.iterations;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  cfg.train.jobs = f.jobs;
  if (!f.checkpoint_at.empty()) cfg.train.checkpoint_at = f.checkpoint_at;
  return cfg;
}

inline void write_run_json(const std::filesystem::path& dir, const std::string& command, const ExperimentFlags& f,
                           const ExperimentConfig& cfg, std::uint64_t seed, std::size_t n_cases,
                           const std::vector<std::string>& held_out) {
  nlohmann::json j;
  j["command"] = command;
  j["arch"] = f.arch;
  j["preset"] = f.preset;
  j["seed"] = seed;
  j["config"] = cfg;
  j["config"]["train"].erase("jobs");
  j["n_cases"] = n_cases;
  j["held_out"] = held_out;
  std::ofstream out(dir / "run.json");
  out << j.dump(2) << '\n';
}

inline void print_summary(const std::string& what, const CrossvalResult& r, const std::filesystem::path& dir) {
  std::vector<double> dice, smad;
  for (const auto& row : r.computer) {
    dice.push_back(row.m.region.dice);
    smad.push_back(row.m.distance.smad);
  }
  std::cout << what << ": " << r.computer.size() << " computer-operator pairs, Dice " << median_iqr(dice).format()
            << ", SMAD " << median_iqr(smad).format() << " mm -> " << (dir / "metrics.csv").string() << '\n';
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
  detail::tune_allocator();
  CLI::App app{"SU-Net segmentation toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out_dir, manifest;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled dataset");
  std::size_t patients = 8, per_patient = 3, rows = 64, cols = 64;
  synth->add_option("--out-dir", out_dir, "Dataset root")->required();
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--patients", patients, "Number of patients")->check(CLI::Range(2, 10000));
  synth->add_option("--images-per-patient", per_patient, "Images per patient")->check(CLI::PositiveNumber);
  synth->add_option("--rows", rows, "Image rows")->check(CLI::Range(8, 4096));
  synth->add_option("--cols", cols, "Image columns")->check(CLI::Range(8, 4096));

  detail::ExperimentFlags train_flags, cv_flags;
  std::string holdout;
  auto* train = app.add_subcommand("train", "Train and evaluate on a single held-out patient");
  train->add_option("--manifest", manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", out_dir, "Output directory")->required();
  train->add_option("--seed", seed, "Random seed");
  train->add_option("--holdout", holdout, "Held-out patient id (default: last patient)");
  detail::add_experiment_flags(train, train_flags);

  auto* cv = app.add_subcommand("crossval", "Leave-one-patient-out cross-validation");
  cv->add_option("--manifest", manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
  cv->add_option("--out-dir", out_dir, "Output directory")->required();
  cv->add_option("--seed", seed, "Random seed");
  detail::add_experiment_flags(cv, cv_flags);

  auto* report = app.add_subcommand("report", "Tables from crossval outputs");
  std::vector<std::string> in_dirs;
  report->add_option("--in-dir", in_dirs, "Crossval output directory (repeatable; first is the reference)")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--out-dir", out_dir, "Where table files are written")->required();

  auto* selfnorm = app.add_subcommand("selfnorm-check", "Layer moments of a deep fully connected chain");
  std::size_t depth = 20, width = 128, samples = 100000;
  std::string activation = "selu";
  selfnorm->add_option("--out-dir", out_dir, "Output directory")->required();
  selfnorm->add_option("--seed", seed, "Random seed");
  selfnorm->add_option("--depth", depth, "Layers")->check(CLI::PositiveNumber);
  selfnorm->add_option("--width", width, "Units per layer")->check(CLI::PositiveNumber);
  selfnorm->add_option("--samples", samples, "Standard-normal input samples")->check(CLI::PositiveNumber);
  selfnorm->add_option("--activation", activation, "Activation")->check(CLI::IsMember({"selu", "relu"}));

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient validation");
  grad->add_option("--seed", seed, "Random seed");
  grad->add_option("--out-dir", out_dir, "Optional output directory for gradcheck.csv");

  auto* hist = app.add_subcommand("histogram", "Last-block activation histograms from checkpoints");
  std::string ckpt_dir;
  std::vector<std::size_t> hist_iters;
  detail::ExperimentFlags hist_flags;
  hist->add_option("--checkpoint-dir", ckpt_dir, "Directory with iter_<n>.ckpt files")->required();
  hist->add_option("--manifest", manifest, "Dataset manifest.json (first case is the probe)")
      ->required()
      ->check(CLI::ExistingFile);
  hist->add_option("--iterations", hist_iters, "Checkpoint iterations")->required()->delimiter(',');
  hist->add_option("--out-dir", out_dir, "Output directory")->required();
  hist->add_option("--preset", hist_flags.preset, "Base configuration")->check(CLI::IsMember({"desk", "full"}));
  hist->add_option("--config", hist_flags.config, "JSON configuration")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "sunet: " << e.what() << '\n';
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return 2;
  }

  namespace fs = std::filesystem;
  try {
    if (*synth) {
      SynthOptions opt;
      opt.rows = rows;
      opt.cols = cols;
      const auto entries = synth_dataset(out_dir, patients, per_patient, seed, opt);
      std::cout << "synth: " << entries.size() << " images from " << patients << " patients -> "
                << (fs::path(out_dir) / "manifest.json").string() << '\n';
    } else if (*train || *cv) {
      const bool is_cv = cv->parsed();
      const auto& flags = is_cv ? cv_flags : train_flags;
      const auto cfg = detail::resolve(flags);
      const auto cases = load_dataset(manifest);
      const auto folds = plan_lopo(cases);
      std::vector<std::size_t> only;
      if (!is_cv) {
        std::size_t pick = folds.size() - 1;
        if (!holdout.empty()) {
          pick = folds.size();
          for (std::size_t i = 0; i < folds.size(); ++i) {
            if (folds[i].patient == holdout) pick = i;
          }
          if (pick == folds.size()) throw std::invalid_argument("unknown patient '" + holdout + "'");
        }
        only.push_back(pick);
      }
      fs::create_directories(out_dir);
      std::optional<fs::path> ckpt;
      if (!cfg.train.checkpoint_at.empty()) ckpt = fs::path(out_dir) / "checkpoints";
      const auto result = run_crossval(cases, cfg, seed, only, ckpt);
      write_crossval_outputs(out_dir, result);
      std::vector<std::string> held;
      if (only.empty()) {
        for (const auto& f : folds) held.push_back(f.patient);
      } else {
        held.push_back(folds[only.front()].patient);
      }
      detail::write_run_json(out_dir, is_cv ? "crossval" : "train", flags, cfg, seed, cases.size(), held);
      detail::print_summary(is_cv ? "crossval" : "train", result, out_dir);
    } else if (*report) {
      std::vector<RunRows> runs;
      for (const auto& d : in_dirs) runs.push_back(read_run(d));
      write_report(runs, out_dir);
      std::cout << "report: " << runs.size() << " run(s) -> " << out_dir << "/table1.csv .. table4.csv, ttest.csv\n";
    } else if (*selfnorm) {
      const auto act = activation == "selu" ? ProbeActivation::selu : ProbeActivation::relu;
      const auto probe = selfnorm_probe(depth, width, samples, seed, act);
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "selfnorm.csv");
      write_probe_csv(out, probe);
      bool in_band = true;
      for (const auto& l : probe) in_band = in_band && std::abs(l.mean) < 0.2 && l.variance >= 0.5 && l.variance <= 2.0;
      const auto& last = probe.back();
      std::cout << "selfnorm-check: " << activation << " depth " << depth << ", last layer mean "
                << csv::num(last.mean) << " variance " << csv::num(last.variance) << ", all layers in band: "
                << (in_band ? "yes" : "no") << '\n';
    } else if (*grad) {
      const auto cases = run_gradcheck_suite(seed);
      bool ok = true;
      std::ostringstream table;
      table << "case,max_rel_error,kink_margin,seed\n";
      for (const auto& c : cases) {
        ok = ok && c.max_rel_error < 1e-5;
        table << c.name << ',' << csv::num(c.max_rel_error) << ',' << csv::num(c.margin) << ',' << c.seed << '\n';
        std::cout << "grad-check: " << c.name << " max relative error " << csv::num(c.max_rel_error) << '\n';
      }
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "gradcheck.csv") << table.str();
      }
      if (!ok) {
        std::cerr << "sunet: grad-check: relative error above 1e-5\n";
        return 1;
      }
    } else if (*hist) {
      hist_flags.arch = "sunet";
      const auto cfg = detail::resolve(hist_flags);
      const auto entries = read_manifest(manifest);
      if (entries.empty()) throw std::runtime_error(manifest + ": no cases");
      const auto first = load_case(fs::path(manifest).parent_path(), entries.front());
      const auto prepared = prepare_case(first, cfg.train);
      const auto hs = emit_activation_histogram(ckpt_dir, image_tensor({&prepared.input}), hist_iters);
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "histogram.csv");
      write_histogram_csv(out, hs);
      std::cout << "histogram: " << hs.size() << " checkpoint(s) -> " << out_dir << "/histogram.csv\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "sunet: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"sunet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sunet
