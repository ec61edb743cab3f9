#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "sunet/crossval.hpp"
#include "sunet/dataset.hpp"
#include "tmpdir.hpp"

using namespace sunet;

namespace {

ExperimentConfig tiny_config() {
  auto cfg = preset("desk");
  cfg.network.levels = 2;
  cfg.network.channels = 4;
  cfg.train.canvas_rows = cfg.train.canvas_cols = 24;
  cfg.train.input_rows = cfg.train.input_cols = 12;
  cfg.train.iterations = 6;
  cfg.train.batch_size = 3;
  cfg.train.eval_every = 3;
  return cfg;
}

std::vector<LabeledCase> tiny_cases(std::size_t patients, std::size_t per) {
  SynthOptions opt;
  opt.rows = opt.cols = 24;
  std::vector<LabeledCase> out;
  for (auto& sc : synth_cases(patients, per, 4, opt)) out.push_back(std::move(sc.labeled));
  return out;
}

}  // namespace

TEST(Lopo, PartitionsWithoutLeakage) {
  const std::vector<std::string> ids{"A", "A", "B", "C", "B", "C", "C"};
  const auto folds = plan_lopo(ids);
  ASSERT_EQ(folds.size(), 3u);
  std::vector<int> tested(ids.size(), 0);
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.test.size(), ids.size());
    for (auto i : f.test) {
      EXPECT_EQ(ids[i], f.patient);
      ++tested[i];
    }
    for (auto i : f.train) EXPECT_NE(ids[i], f.patient);
  }
  for (int t : tested) EXPECT_EQ(t, 1);
  EXPECT_EQ(folds[0].patient, "A");
  EXPECT_THROW(plan_lopo(std::vector<std::string>{"A", "A"}), std::invalid_argument);
}

TEST(Presets, DeskAndFull) {
  const auto d = preset("desk");
  const auto p = preset("full");
  EXPECT_EQ(p.network.channels, 64u);
  EXPECT_EQ(p.network.levels, 3u);
  EXPECT_EQ(p.train.input_rows, 107u);
  EXPECT_EQ(p.train.input_cols, 131u);
  EXPECT_EQ(p.train.canvas_rows % p.train.input_rows, 0u);
  EXPECT_LT(d.network.channels, p.network.channels);
  EXPECT_THROW(preset("huge"), std::invalid_argument);
}

TEST(Arch, Variants) {
  NetworkConfig n;
  apply_arch(n, Arch::unet);
  EXPECT_EQ(n.activation, Activation::batchnorm_relu);
  EXPECT_EQ(n.dropout_rate, 0.0);
  apply_arch(n, arch_from_string("sunet-dropout"));
  EXPECT_EQ(n.activation, Activation::selu);
  EXPECT_EQ(n.dropout_rate, 0.5);
  EXPECT_EQ(to_string(Arch::sunet_dropout), "sunet-dropout");
  EXPECT_THROW(arch_from_string("resnet"), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = tiny_config();
  cfg.train.checkpoint_at = {0, 5};
  const nlohmann::json j = cfg;
  const auto back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Prepare, StandardisedCanvasAndInput) {
  const auto cases = tiny_cases(2, 1);
  const auto p = prepare_case(cases[0], tiny_config().train);
  double m = std::accumulate(p.canvas.data.begin(), p.canvas.data.end(), 0.0) / p.canvas.size();
  EXPECT_NEAR(m, 0.0, 1e-9);
  EXPECT_EQ(p.input.rows, 12u);
  EXPECT_EQ(p.masks[0].rows, 24u);
}

TEST(Crossval, RowCountsAndIds) {
  const auto cases = tiny_cases(3, 2);
  const auto r = run_crossval(cases, tiny_config(), 1);
  EXPECT_EQ(r.computer.size(), cases.size() * 3);
  EXPECT_EQ(r.inter.size(), cases.size() * 3);
  std::set<std::string> images;
  for (const auto& row : r.computer) {
    EXPECT_EQ(row.rater_a, "computer");
    images.insert(row.image);
  }
  EXPECT_EQ(images.size(), cases.size());
  EXPECT_EQ(r.curves.size(), 3u * 6);
  ASSERT_EQ(r.test_dice.size(), 3u);  // 0, 3, 6
  EXPECT_EQ(r.test_dice.back().iteration, 6u);
}

TEST(Crossval, RerunIsIdenticalAndThreadsDoNotMatter) {
  const auto cases = tiny_cases(3, 1);
  auto cfg = tiny_config();
  const auto a = run_crossval(cases, cfg, 2);
  cfg.train.jobs = 3;
  const auto b = run_crossval(cases, cfg, 2);
  std::ostringstream sa, sb;
  write_metric_csv(sa, a.computer);
  write_curves_csv(sa, a.curves);
  write_metric_csv(sb, b.computer);
  write_curves_csv(sb, b.curves);
  EXPECT_EQ(sa.str(), sb.str());
  const auto c = run_crossval(cases, tiny_config(), 3);
  std::ostringstream sc;
  write_curves_csv(sc, c.curves);
  std::ostringstream sa2;
  write_curves_csv(sa2, a.curves);
  EXPECT_NE(sc.str(), sa2.str());
}

TEST(Crossval, SingleFoldSelection) {
  const auto cases = tiny_cases(3, 2);
  const auto r = run_crossval(cases, tiny_config(), 1, {2});
  ASSERT_EQ(r.computer.size(), 6u);
  for (const auto& row : r.computer) EXPECT_EQ(row.patient, "P03");
  EXPECT_THROW(run_crossval(cases, tiny_config(), 1, {7}), std::invalid_argument);
}

TEST(Crossval, BadGeometryIsReported) {
  const auto cases = tiny_cases(2, 1);
  auto cfg = tiny_config();
  cfg.train.input_rows = 7;
  EXPECT_THROW(run_crossval(cases, cfg, 1), std::exception);
}

TEST(Histogram, CountsSumAndMissingCheckpoint) {
  const auto dir = scratch_dir();
  const auto cases = tiny_cases(2, 1);
  auto cfg = tiny_config();
  cfg.train.checkpoint_at = {0, 6};
  run_crossval(cases, cfg, 1, {}, dir);
  const auto p = prepare_case(cases[0], cfg.train);
  const auto probe = image_tensor({&p.input});
  const auto hs = emit_activation_histogram(dir, probe, {0, 6});
  ASSERT_EQ(hs.size(), 2u);
  auto ck = load_checkpoint((dir / "iter_0.ckpt").string());
  const auto out = ck.net.forward(nullptr, probe, false, nullptr);
  for (const auto& [it, h] : hs) {
    EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), out.last_activation.size());
  }
  EXPECT_FALSE(hs[0].second.counts == hs[1].second.counts);
  try {
    emit_activation_histogram(dir, probe, {3});
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("missing checkpoint"), std::string::npos);
  }
}

TEST(Outputs, FilesAndHeaders) {
  const auto dir = scratch_dir();
  const auto cases = tiny_cases(2, 1);
  write_crossval_outputs(dir, run_crossval(cases, tiny_config(), 1));
  EXPECT_EQ(slurp(dir / "curves.csv").substr(0, 20), "fold,iteration,loss\n");
  EXPECT_EQ(slurp(dir / "test_dice.csv").substr(0, 31), "iteration,mean_dice,median_dice");
  const auto rows = read_metric_csv((dir / "metrics.csv").string());
  EXPECT_EQ(rows.size(), 6u);
}
