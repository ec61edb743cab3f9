#pragma once

// Numerical gradient validation suite shared by the CLI and the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sunet/gradcheck.hpp"
#include "sunet/network.hpp"

namespace sunet {

// Distance of the recorded forward pass from the non-differentiable set:
// the smallest |input| fed to selu/relu and the smallest gap between the
// winner and runner-up of any 2x2 pooling window. Exact ties are skipped:
// they only arise between identical dropout saturation constants, which no
// parameter perturbation can separate.
inline double kink_margin(const Tape& tape) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& e : tape.entries()) {
    if (e.op == "selu" || e.op == "relu") {
      for (double v : e.inputs[0].values()) margin = std::min(margin, std::abs(v));
    } else if (e.op == "max_pool2") {
      const Tensor& x = e.inputs[0];
      const std::size_t n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t i = 0; i + 1 < h; i += 2) {
          for (std::size_t j = 0; j + 1 < w; j += 2) {
            double v[4] = {x[(p * h + i) * w + j], x[(p * h + i) * w + j + 1], x[(p * h + i + 1) * w + j],
                           x[(p * h + i + 1) * w + j + 1]};
            std::sort(v, v + 4);
            if (v[3] != v[2]) margin = std::min(margin, v[3] - v[2]);
          }
        }
      }
    }
  }
  return margin;
}

struct GradCheckCase {
  std::string name;
  double max_rel_error;
  double margin;
  std::uint64_t seed;
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& e : v) e = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Builds a problem from a seed, retrying seeds until its forward pass keeps
// at least `min_margin` away from every kink and pooling tie.
inline GradCheckCase check_with_margin(
    const std::string& name,
    const std::function<std::pair<std::function<Tensor(Tape*)>, std::vector<Tensor>>(std::mt19937_64&)>& make,
    double min_margin, std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 500; ++attempt) {
    std::mt19937_64 rng(seed + attempt);
    auto [f, inputs] = make(rng);
    Tape tape;
    f(&tape);
    const double margin = kink_margin(tape);
    if (margin < min_margin) continue;
    return {name, grad_check(f, inputs), margin, seed + attempt};
  }
  throw std::runtime_error("grad-check: no non-degenerate point found for " + name);
}

inline Tensor weighted_sum(Tape* t, const Tensor& y, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(y.size());
  for (auto& e : w) e = u(rng);
  return sum(t, mul(t, y, Tensor(y.shape(), std::move(w))));
}

}  // namespace detail

// Runs every differentiable operation of the network plus a full 1-level
// 8x8 network through central finite differences.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 1, double min_margin = 1e-3) {
  using detail::uniform_tensor;
  using Problem = std::pair<std::function<Tensor(Tape*)>, std::vector<Tensor>>;
  std::vector<GradCheckCase> out;

  out.push_back(detail::check_with_margin("conv2d", [](std::mt19937_64& rng) -> Problem {
    Tensor x = uniform_tensor({2, 2, 5, 4}, rng), k = uniform_tensor({3, 2, 2, 2}, rng), b = uniform_tensor({3}, rng);
    std::uint64_t ws = rng();
    return {[=](Tape* t) {
              std::mt19937_64 r(ws);
              return detail::weighted_sum(t, conv2d(t, x, k, b, Padding::same(2)), r);
            },
            {x, k, b}};
  }, min_margin, seed));

  out.push_back(detail::check_with_margin("conv2d_transpose", [](std::mt19937_64& rng) -> Problem {
    Tensor x = uniform_tensor({2, 2, 3, 4}, rng), k = uniform_tensor({2, 3, 2, 2}, rng);
    std::uint64_t ws = rng();
    return {[=](Tape* t) {
              std::mt19937_64 r(ws);
              return detail::weighted_sum(t, conv2d_transpose(t, x, k, 2), r);
            },
            {x, k}};
  }, min_margin, seed));

  out.push_back(detail::check_with_margin("max_pool2", [](std::mt19937_64& rng) -> Problem {
    Tensor x = uniform_tensor({2, 2, 5, 6}, rng);
    std::uint64_t ws = rng();
    return {[=](Tape* t) {
              std::mt19937_64 r(ws);
              return detail::weighted_sum(t, max_pool2(t, x), r);
            },
            {x}};
  }, min_margin, seed));

  out.push_back(detail::check_with_margin("selu", [](std::mt19937_64& rng) -> Problem {
    Tensor x = uniform_tensor({64}, rng, -3.0, 3.0);
    std::uint64_t ws = rng();
    return {[=](Tape* t) {
              std::mt19937_64 r(ws);
              return detail::weighted_sum(t, selu(t, x), r);
            },
            {x}};
  }, min_margin, seed));

  out.push_back(detail::check_with_margin("batch_norm_relu", [](std::mt19937_64& rng) -> Problem {
    Tensor x = uniform_tensor({3, 2, 3, 3}, rng), g = uniform_tensor({2}, rng, 0.5, 1.5), b = uniform_tensor({2}, rng);
    std::uint64_t ws = rng();
    return {[=](Tape* t) {
              BatchNormState st(2);
              std::mt19937_64 r(ws);
              return detail::weighted_sum(t, batch_norm_relu(t, x, g, b, st, true), r);
            },
            {x, g, b}};
  }, min_margin, seed));

  out.push_back(detail::check_with_margin("dice_smooth_loss", [](std::mt19937_64& rng) -> Problem {
    Tensor logits = uniform_tensor({2, 2, 4, 4}, rng);
    Tensor theta = uniform_tensor({5}, rng);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> mask(32);
    for (auto& m : mask) m = coin(rng) ? 1.0 : 0.0;
    Tensor target({2, 4, 4}, mask);
    LossConfig cfg;
    cfg.l2_weight = 0.1;
    return {[=](Tape* t) { return dice_smooth_loss(t, softmax_channels(t, logits), target, cfg, {theta}); },
            {logits, theta}};
  }, min_margin, seed));

  struct NetCase {
    const char* name;
    Activation act;
    double dropout;
  };
  for (const NetCase nc : {NetCase{"sunet_1level_8x8", Activation::selu, 0.0},
                           NetCase{"sunet_dropout_1level_8x8", Activation::selu, 0.5},
                           NetCase{"unet_1level_8x8", Activation::batchnorm_relu, 0.0}}) {
    out.push_back(detail::check_with_margin(nc.name, [nc](std::mt19937_64& rng) -> Problem {
      NetworkConfig cfg;
      cfg.levels = 1;
      cfg.channels = 2;
      cfg.activation = nc.act;
      cfg.dropout_rate = nc.dropout;
      auto net = std::make_shared<Network>(cfg, rng());
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> img(2 * 64), mask(2 * 64);
      for (std::size_t i = 0; i < img.size(); ++i) {
        const std::size_t r = (i % 64) / 8, c = i % 8;
        const bool in = (r >= 2 && r <= 5 && c >= 2 && c <= 5);
        mask[i] = in ? 1.0 : 0.0;
        img[i] = (in ? 0.2 : 0.8) + 0.2 * (u(rng) - 0.5);
      }
      Tensor images({2, 1, 8, 8}, img), targets({2, 8, 8}, mask);
      std::uint64_t drop_seed = rng();
      LossConfig lc;
      lc.l2_weight = 1e-2;
      auto params = net->parameters();
      return {[=](Tape* t) {
                std::mt19937_64 drop(drop_seed);
                auto o = net->forward(t, images, true, &drop);
                return dice_smooth_loss(t, o.probs, targets, lc, params);
              },
              params};
    }, min_margin, seed));
  }
  return out;
}

}  // namespace sunet
