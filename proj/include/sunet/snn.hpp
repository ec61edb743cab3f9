#pragma once

// Self-normalising building blocks: SELU, alpha-dropout, LeCun-normal init,
// the batch-norm + ReLU pair they replace, and a moment-propagation probe.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/csv.hpp"
#include "sunet/ops.hpp"
#include "sunet/tensor.hpp"

namespace sunet {

struct SeluParams {
  double lambda = 1.0507;
  double alpha = 1.6733;

  // Negative saturation value, the limit of selu(x) as x -> -inf.
  double saturation() const { return -lambda * alpha; }
};

inline constexpr SeluParams kSelu{};

inline double selu_value(double x, const SeluParams& p = kSelu) {
  return x > 0.0 ? p.lambda * x : p.lambda * (p.alpha * std::exp(x) - p.alpha);
}

// d/dx selu; the x <= 0 branch is used at exactly 0.
inline double selu_derivative(double x, const SeluParams& p = kSelu) {
  return x > 0.0 ? p.lambda : p.lambda * p.alpha * std::exp(x);
}

inline Tensor selu(Tape* tape, const Tensor& x, const SeluParams& p = kSelu) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = selu_value(x[i], p);
  Tensor result(x.shape(), std::move(out), x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("selu", {x}, result, [x, result, p]() {
      auto g = result.grad();
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * selu_derivative(x[i], p);
    });
  }
  return result;
}

// Affine correction y = a*x + b applied after replacing a fraction `rate` of
// units by the SELU saturation, chosen so zero-mean unit-variance inputs keep
// their first two moments.
struct AlphaDropoutAffine {
  double a;
  double b;
};

inline AlphaDropoutAffine alpha_dropout_affine(double rate, const SeluParams& p = kSelu) {
  const double keep = 1.0 - rate;
  const double sat = p.saturation();
  const double a = 1.0 / std::sqrt(keep + sat * sat * keep * rate);
  return {a, -a * rate * sat};
}

inline Tensor alpha_dropout(Tape* tape, const Tensor& x, double rate, bool training, std::mt19937_64& rng,
                            const SeluParams& p = kSelu) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("alpha_dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const auto [a, b] = alpha_dropout_affine(rate, p);
  const double sat = p.saturation();
  std::bernoulli_distribution drop(rate);
  std::vector<unsigned char> kept(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    kept[i] = drop(rng) ? 0 : 1;
    out[i] = a * (kept[i] ? x[i] : sat) + b;
  }
  Tensor result(x.shape(), std::move(out), x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("alpha_dropout", {x}, result, [x, result, kept = std::move(kept), a = a]() {
      auto g = result.grad();
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (kept[i]) gx[i] += a * g[i];
      }
    });
  }
  return result;
}

// Per-channel running statistics of a batch-norm layer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels) : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Normalises over (batch, row, col) per channel, then y = gamma*xhat + beta.
// Training uses batch statistics and updates the running estimates with
// running = momentum*running + (1-momentum)*batch (unbiased batch variance).
inline Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                         bool training) {
  detail::require_rank(x, 4, "batch_norm", "x");
  const auto d = detail::dims4(x);
  if (d.n == 0) throw std::invalid_argument("batch_norm: empty batch");
  if (gamma.size() != d.c || beta.size() != d.c || state.running_mean.size() != d.c) {
    throw std::invalid_argument("batch_norm: parameter length does not match " + std::to_string(d.c) + " channels");
  }
  const std::size_t plane = d.h * d.w;
  const double count = static_cast<double>(d.n * plane);
  std::vector<double> mean(d.c), inv_std(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    double var = 0.0;
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < d.n; ++b) {
        const double* p = x.values().data() + (b * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean[c] = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < d.n; ++b) {
        const double* p = x.values().data() + (b * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean[c]) * (p[i] - mean[c]);
      }
      var = ss / count;
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : 0.0;
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean[c];
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * unbiased;
    } else {
      mean[c] = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + state.epsilon);
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < d.n; ++b) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (b * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[base + i] = (x[base + i] - mean[c]) * inv_std[c];
        out[base + i] = gamma[c] * xhat[base + i] + beta[c];
      }
    }
  }
  Tensor result(x.shape(), std::move(out), detail::any_requires_grad({&x, &gamma, &beta}));
  if (detail::recording(tape, {&x, &gamma, &beta})) {
    tape->record("batch_norm", {x, gamma, beta}, result,
                 [x, gamma, beta, result, d, plane, count, training, xhat = std::move(xhat), inv_std]() {
                   auto g = result.grad();
                   std::vector<double> sum_g(d.c, 0.0), sum_gx(d.c, 0.0);
                   for (std::size_t b = 0; b < d.n; ++b) {
                     for (std::size_t c = 0; c < d.c; ++c) {
                       const std::size_t base = (b * d.c + c) * plane;
                       for (std::size_t i = 0; i < plane; ++i) {
                         sum_g[c] += g[base + i];
                         sum_gx[c] += g[base + i] * xhat[base + i];
                       }
                     }
                   }
                   if (gamma.requires_grad()) {
                     auto& gg = gamma.grad_buffer();
                     for (std::size_t c = 0; c < d.c; ++c) gg[c] += sum_gx[c];
                   }
                   if (beta.requires_grad()) {
                     auto& gb = beta.grad_buffer();
                     for (std::size_t c = 0; c < d.c; ++c) gb[c] += sum_g[c];
                   }
                   if (!x.requires_grad()) return;
                   auto& gx = x.grad_buffer();
                   for (std::size_t b = 0; b < d.n; ++b) {
                     for (std::size_t c = 0; c < d.c; ++c) {
                       const std::size_t base = (b * d.c + c) * plane;
                       const double k = gamma[c] * inv_std[c];
                       for (std::size_t i = 0; i < plane; ++i) {
                         if (training) {
                           gx[base + i] += k * (g[base + i] - sum_g[c] / count - xhat[base + i] * sum_gx[c] / count);
                         } else {
                           gx[base + i] += k * g[base + i];
                         }
                       }
                     }
                   }
                 });
  }
  return result;
}

inline Tensor batch_norm_relu(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              BatchNormState& state, bool training) {
  return relu(tape, batch_norm(tape, x, gamma, beta, state, training));
}

// i.i.d. N(0, 1/fan_in) samples.
inline Tensor lecun_normal_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng, bool requires_grad = true) {
  if (fan_in < 1) throw std::invalid_argument("lecun_normal_init: fan_in must be >= 1");
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_size(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

struct LayerMoments {
  std::size_t layer;  // 1-based
  double mean;
  double variance;
  std::size_t samples;
};

using MomentProbe = std::vector<LayerMoments>;

enum class ProbeActivation { selu, relu };

// Pushes standard-normal inputs through a depth-layer fully connected chain
// with LeCun-normal weights and records the activation moments after every
// layer. Moments are pooled over all units and samples.
inline MomentProbe selfnorm_probe(std::size_t depth, std::size_t width, std::size_t n_samples, std::uint64_t seed,
                                  ProbeActivation activation = ProbeActivation::selu) {
  using Matrix = Eigen::MatrixXd;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix act(width, n_samples);
  for (Eigen::Index j = 0; j < act.cols(); ++j) {
    for (Eigen::Index i = 0; i < act.rows(); ++i) act(i, j) = unit(rng);
  }
  std::normal_distribution<double> wdist(0.0, std::sqrt(1.0 / static_cast<double>(width)));
  MomentProbe probe;
  Matrix weights(width, width), pre(width, n_samples);
  for (std::size_t layer = 1; layer <= depth; ++layer) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j) {
      for (Eigen::Index i = 0; i < weights.rows(); ++i) weights(i, j) = wdist(rng);
    }
    pre.noalias() = weights * act;
    if (activation == ProbeActivation::selu) {
      act = pre.unaryExpr([](double v) { return selu_value(v); });
    } else {
      act = pre.cwiseMax(0.0);
    }
    const double n = static_cast<double>(act.size());
    const double mean = act.sum() / n;
    const double var = (act.array() - mean).square().sum() / (n - 1.0);
    probe.push_back({layer, mean, var, static_cast<std::size_t>(act.size())});
  }
  return probe;
}

inline void write_probe_csv(std::ostream& os, const MomentProbe& probe) {
  os << "layer_index,mean,variance\n";
  for (const auto& m : probe) os << m.layer << ',' << csv::num(m.mean) << ',' << csv::num(m.variance) << '\n';
}

}  // namespace sunet
