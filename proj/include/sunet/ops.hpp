#pragma once

// Differentiable 4-D (batch, channel, row, col) operations for the U-Net graph.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/tensor.hpp"

namespace sunet {

struct Padding {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  // Output extent equals input extent for a stride-1 kernel of this size.
  // Even kernels put the extra row/column on the bottom/right.
  static Padding same(std::size_t kernel) {
    std::size_t total = kernel - 1;
    return {total / 2, total - total / 2, total / 2, total - total / 2};
  }
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct Dims4 {
  std::size_t n, c, h, w;
};

inline Dims4 dims4(const Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

// Gathers (Cin*kh*kw) x (Ho*Wo) patches of one sample for stride-1 correlation.
inline void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                   const Padding& pad, std::size_t ho, std::size_t wo, double* col) {
  const std::size_t plane = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = col + ((ci * kh + ki) * kw + kj) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          long iy = static_cast<long>(oy + ki) - static_cast<long>(pad.top);
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            long ix = static_cast<long>(ox + kj) - static_cast<long>(pad.left);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

inline void col2im(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                   const Padding& pad, std::size_t ho, std::size_t wo, double* x) {
  const std::size_t plane = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = col + ((ci * kh + ki) * kw + kj) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          long iy = static_cast<long>(oy + ki) - static_cast<long>(pad.top);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          double* dst = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          const double* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            long ix = static_cast<long>(ox + kj) - static_cast<long>(pad.left);
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Stride-1 cross-correlation. kernel is (Cout, Cin, kh, kw), bias is (Cout).
inline Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     const Padding& pad = {}) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(kernel, 4, "conv2d", "kernel");
  const auto [n, cin, h, w] = detail::dims4(input);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(cin) + " != kernel input channels " +
                                std::to_string(kernel.dim(1)));
  }
  if (bias.defined() && (bias.size() != cout)) {
    throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.size()) + " != output channels " +
                                std::to_string(cout));
  }
  const std::size_t ph = h + pad.top + pad.bottom, pw = w + pad.left + pad.right;
  if (kh > ph) throw std::invalid_argument("conv2d: kernel height " + std::to_string(kh) + " exceeds padded height " + std::to_string(ph));
  if (kw > pw) throw std::invalid_argument("conv2d: kernel width " + std::to_string(kw) + " exceeds padded width " + std::to_string(pw));
  const std::size_t ho = ph - kh + 1, wo = pw - kw + 1;
  const std::size_t patch = cin * kh * kw, plane = ho * wo;

  std::vector<double> out(n * cout * plane);
  std::vector<double> col(patch * plane);
  detail::ConstMatMap wmat(kernel.values().data(), cout, patch);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(input.values().data() + b * cin * h * w, cin, h, w, kh, kw, pad, ho, wo, col.data());
    detail::MatMap y(out.data() + b * cout * plane, cout, plane);
    y.noalias() = wmat * detail::ConstMatMap(col.data(), patch, plane);
    if (bias.defined()) {
      for (std::size_t co = 0; co < cout; ++co) y.row(co).array() += bias[co];
    }
  }
  const bool rg = detail::any_requires_grad({&input, &kernel, &bias});
  Tensor result({n, cout, ho, wo}, std::move(out), rg);
  if (detail::recording(tape, {&input, &kernel, &bias})) {
    tape->record("conv2d", {input, kernel, bias}, result, [=]() {
      std::vector<double> bcol(patch * plane), dcol(patch * plane);
      detail::ConstMatMap wk(kernel.values().data(), cout, patch);
      for (std::size_t b = 0; b < n; ++b) {
        detail::ConstMatMap dy(result.grad().data() + b * cout * plane, cout, plane);
        if (kernel.requires_grad()) {
          detail::im2col(input.values().data() + b * cin * h * w, cin, h, w, kh, kw, pad, ho, wo, bcol.data());
          detail::MatMap dw(kernel.grad_buffer().data(), cout, patch);
          dw.noalias() += dy * detail::ConstMatMap(bcol.data(), patch, plane).transpose();
        }
        if (bias.defined() && bias.requires_grad()) {
          auto& db = bias.grad_buffer();
          // plain loop: Eigen's vectorised sum depends on buffer alignment
          const double* gp = result.grad().data() + b * cout * plane;
          for (std::size_t co = 0; co < cout; ++co) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += gp[co * plane + i];
            db[co] += s;
          }
        }
        if (input.requires_grad()) {
          detail::MatMap dc(dcol.data(), patch, plane);
          dc.noalias() = wk.transpose() * dy;
          detail::col2im(dcol.data(), cin, h, w, kh, kw, pad, ho, wo, input.grad_buffer().data() + b * cin * h * w);
        }
      }
    });
  }
  return result;
}

// Transposed convolution (gradient of a strided correlation). kernel is
// (Cin, Cout, kh, kw); each input pixel scatters value*kernel onto a
// stride-spaced output grid of extent stride*(H-1)+kh.
inline Tensor conv2d_transpose(Tape* tape, const Tensor& input, const Tensor& kernel, std::size_t stride = 2) {
  if (stride < 1) throw std::invalid_argument("conv2d_transpose: stride must be >= 1");
  detail::require_rank(input, 4, "conv2d_transpose", "input");
  detail::require_rank(kernel, 4, "conv2d_transpose", "kernel");
  const auto [n, cin, h, w] = detail::dims4(input);
  if (kernel.dim(0) != cin) {
    throw std::invalid_argument("conv2d_transpose: input channels " + std::to_string(cin) +
                                " != kernel input channels " + std::to_string(kernel.dim(0)));
  }
  const std::size_t cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t ho = stride * (h - 1) + kh, wo = stride * (w - 1) + kw;
  const std::size_t taps = cout * kh * kw, plane = h * w;

  std::vector<double> out(n * cout * ho * wo, 0.0);
  std::vector<double> ycol(taps * plane);
  detail::ConstMatMap kmat(kernel.values().data(), cin, taps);
  for (std::size_t b = 0; b < n; ++b) {
    detail::MatMap yc(ycol.data(), taps, plane);
    yc.noalias() = kmat.transpose() * detail::ConstMatMap(input.values().data() + b * cin * plane, cin, plane);
    double* o = out.data() + b * cout * ho * wo;
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const double* src = ycol.data() + ((co * kh + ki) * kw + kj) * plane;
          for (std::size_t i = 0; i < h; ++i) {
            double* dst = o + (co * ho + stride * i + ki) * wo + kj;
            for (std::size_t j = 0; j < w; ++j) dst[stride * j] += src[i * w + j];
          }
        }
      }
    }
  }
  Tensor result({n, cout, ho, wo}, std::move(out), detail::any_requires_grad({&input, &kernel}));
  if (detail::recording(tape, {&input, &kernel})) {
    tape->record("conv2d_transpose", {input, kernel}, result, [=]() {
      std::vector<double> dycol(taps * plane);
      detail::ConstMatMap km(kernel.values().data(), cin, taps);
      for (std::size_t b = 0; b < n; ++b) {
        const double* g = result.grad().data() + b * cout * ho * wo;
        for (std::size_t co = 0; co < cout; ++co) {
          for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
              double* dst = dycol.data() + ((co * kh + ki) * kw + kj) * plane;
              for (std::size_t i = 0; i < h; ++i) {
                const double* src = g + (co * ho + stride * i + ki) * wo + kj;
                for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = src[stride * j];
              }
            }
          }
        }
        detail::ConstMatMap dyc(dycol.data(), taps, plane);
        if (input.requires_grad()) {
          detail::MatMap dx(input.grad_buffer().data() + b * cin * plane, cin, plane);
          dx.noalias() += km * dyc;
        }
        if (kernel.requires_grad()) {
          detail::MatMap dk(kernel.grad_buffer().data(), cin, taps);
          dk.noalias() += detail::ConstMatMap(input.values().data() + b * cin * plane, cin, plane) * dyc.transpose();
        }
      }
    });
  }
  return result;
}

// Non-overlapping 2x2 max pooling; odd trailing rows/cols are dropped.
// Ties resolve to the first window element in row-major order.
inline Tensor max_pool2(Tape* tape, const Tensor& input) {
  detail::require_rank(input, 4, "max_pool2", "input");
  const auto [n, c, h, w] = detail::dims4(input);
  if (h < 2 || w < 2) {
    throw std::invalid_argument("max_pool2: spatial extent must be at least 2x2, got " + shape_string(input.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const double* x = input.values().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (p * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            std::size_t idx = (p * h + 2 * i + di) * w + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        }
        std::size_t o = (p * ho + i) * wo + j;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  Tensor result({n, c, ho, wo}, std::move(out), input.requires_grad());
  if (detail::recording(tape, {&input})) {
    tape->record("max_pool2", {input}, result, [input, result, argmax = std::move(argmax)]() {
      auto g = result.grad();
      auto& gx = input.grad_buffer();
      for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
    });
  }
  return result;
}

inline Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 4, "concat_channels", "a");
  detail::require_rank(b, 4, "concat_channels", "b");
  const auto da = detail::dims4(a), db = detail::dims4(b);
  if (da.n != db.n) throw std::invalid_argument("concat_channels: batch mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  if (da.h != db.h || da.w != db.w) {
    throw std::invalid_argument("concat_channels: spatial mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  const std::size_t plane = da.h * da.w, ca = da.c * plane, cb = db.c * plane;
  std::vector<double> out(da.n * (ca + cb));
  for (std::size_t s = 0; s < da.n; ++s) {
    std::copy_n(a.values().data() + s * ca, ca, out.data() + s * (ca + cb));
    std::copy_n(b.values().data() + s * cb, cb, out.data() + s * (ca + cb) + ca);
  }
  Tensor result({da.n, da.c + db.c, da.h, da.w}, std::move(out), detail::any_requires_grad({&a, &b}));
  if (detail::recording(tape, {&a, &b})) {
    tape->record("concat_channels", {a, b}, result, [a, b, result, ca, cb, n = da.n]() {
      const double* g = result.grad().data();
      for (std::size_t s = 0; s < n; ++s) {
        if (a.requires_grad()) {
          double* ga = a.grad_buffer().data() + s * ca;
          for (std::size_t i = 0; i < ca; ++i) ga[i] += g[s * (ca + cb) + i];
        }
        if (b.requires_grad()) {
          double* gb = b.grad_buffer().data() + s * cb;
          for (std::size_t i = 0; i < cb; ++i) gb[i] += g[s * (ca + cb) + ca + i];
        }
      }
    });
  }
  return result;
}

// Channels [first, first+count).
inline Tensor slice_channels(Tape* tape, const Tensor& x, std::size_t first, std::size_t count) {
  detail::require_rank(x, 4, "slice_channels", "x");
  const auto d = detail::dims4(x);
  if (count == 0 || first + count > d.c) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(first) + "," + std::to_string(first + count) +
                                ") outside " + std::to_string(d.c) + " channels");
  }
  const std::size_t plane = d.h * d.w;
  std::vector<double> out(d.n * count * plane);
  for (std::size_t s = 0; s < d.n; ++s) {
    std::copy_n(x.values().data() + (s * d.c + first) * plane, count * plane, out.data() + s * count * plane);
  }
  Tensor result({d.n, count, d.h, d.w}, std::move(out), x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("slice_channels", {x}, result, [x, result, d, first, count, plane]() {
      const double* g = result.grad().data();
      double* gx = x.grad_buffer().data();
      for (std::size_t s = 0; s < d.n; ++s) {
        for (std::size_t i = 0; i < count * plane; ++i) gx[(s * d.c + first) * plane + i] += g[s * count * plane + i];
      }
    });
  }
  return result;
}

// Zero-pads on the bottom/right up to (rows, cols).
inline Tensor pad_to(Tape* tape, const Tensor& x, std::size_t rows, std::size_t cols) {
  detail::require_rank(x, 4, "pad_to", "x");
  const auto d = detail::dims4(x);
  if (rows < d.h || cols < d.w) {
    throw std::invalid_argument("pad_to: target " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " smaller than " + shape_string(x.shape()));
  }
  if (rows == d.h && cols == d.w) return x;
  std::vector<double> out(d.n * d.c * rows * cols, 0.0);
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    for (std::size_t i = 0; i < d.h; ++i) {
      std::copy_n(x.values().data() + (p * d.h + i) * d.w, d.w, out.data() + (p * rows + i) * cols);
    }
  }
  Tensor result({d.n, d.c, rows, cols}, std::move(out), x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("pad_to", {x}, result, [x, result, d, rows, cols]() {
      const double* g = result.grad().data();
      double* gx = x.grad_buffer().data();
      for (std::size_t p = 0; p < d.n * d.c; ++p) {
        for (std::size_t i = 0; i < d.h; ++i) {
          for (std::size_t j = 0; j < d.w; ++j) gx[(p * d.h + i) * d.w + j] += g[(p * rows + i) * cols + j];
        }
      }
    });
  }
  return result;
}

inline Tensor relu(Tape* tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  Tensor result(x.shape(), std::move(out), x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("relu", {x}, result, [x, result]() {
      auto g = result.grad();
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return result;
}

// Per-pixel softmax over the channel axis.
inline Tensor softmax_channels(Tape* tape, const Tensor& x) {
  detail::require_rank(x, 4, "softmax_channels", "x");
  const auto d = detail::dims4(x);
  const std::size_t plane = d.h * d.w;
  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < d.n; ++s) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = s * d.c * plane + p;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < d.c; ++c) mx = std::max(mx, x[base + c * plane]);
      double total = 0.0;
      for (std::size_t c = 0; c < d.c; ++c) {
        double e = std::exp(x[base + c * plane] - mx);
        out[base + c * plane] = e;
        total += e;
      }
      for (std::size_t c = 0; c < d.c; ++c) out[base + c * plane] /= total;
    }
  }
  Tensor result(x.shape(), std::move(out), x.requires_grad());
  if (detail::recording(tape, {&x})) {
    tape->record("softmax_channels", {x}, result, [x, result, d, plane]() {
      auto g = result.grad();
      auto y = result.values();
      auto& gx = x.grad_buffer();
      for (std::size_t s = 0; s < d.n; ++s) {
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t base = s * d.c * plane + p;
          double dot = 0.0;
          for (std::size_t c = 0; c < d.c; ++c) dot += g[base + c * plane] * y[base + c * plane];
          for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t i = base + c * plane;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return result;
}

}  // namespace sunet
