#pragma once

// Central finite-difference check of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "sunet/tensor.hpp"

namespace sunet {

// f evaluates a scalar from tensors it captures; `inputs` are perturbed in
// place. Returns max |analytic - numeric| / max(1, |analytic|, |numeric|)
// over every element of every input.
inline double grad_check(const std::function<Tensor(Tape*)>& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& x : inputs) x.zero_grad();
  Tape tape;
  Tensor out = f(&tape);
  if (out.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  if (!std::isfinite(out.item())) throw std::domain_error("grad_check: f(x) is not finite");
  tape.backward(out);
  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) {
    analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                       : std::vector<double>(x.size(), 0.0));
  }
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto vals = inputs[t].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = f(nullptr).item();
      vals[i] = saved - h;
      const double down = f(nullptr).item();
      vals[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw std::domain_error("grad_check: f(x) is not finite");
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  for (auto& x : inputs) x.zero_grad();
  return worst;
}

inline double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f, Tensor x, double h = 1e-5) {
  return grad_check([&](Tape* tape) { return f(tape, x); }, std::vector<Tensor>{x}, h);
}

}  // namespace sunet
