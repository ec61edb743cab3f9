#pragma once

// SU-Net / U-Net construction, the smoothed soft-Dice + L2 loss, Adam, and
// the training step.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sunet/ops.hpp"
#include "sunet/snn.hpp"
#include "sunet/tensor.hpp"

namespace sunet {

enum class Activation { selu, batchnorm_relu };

inline std::string to_string(Activation a) { return a == Activation::selu ? "selu" : "batchnorm_relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "selu") return Activation::selu;
  if (s == "batchnorm_relu") return Activation::batchnorm_relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct NetworkConfig {
  std::size_t levels = 3;
  std::size_t channels = 64;
  std::size_t kernel = 2;
  Activation activation = Activation::selu;
  double dropout_rate = 0.0;
  std::size_t classes = 2;
  std::size_t in_channels = 1;
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"levels", c.levels},           {"channels", c.channels},
       {"kernel", c.kernel},           {"activation", to_string(c.activation)},
       {"dropout_rate", c.dropout_rate}, {"classes", c.classes},
       {"in_channels", c.in_channels}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  c.levels = j.value("levels", c.levels);
  c.channels = j.value("channels", c.channels);
  c.kernel = j.value("kernel", c.kernel);
  c.activation = activation_from_string(j.value("activation", to_string(c.activation)));
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.classes = j.value("classes", c.classes);
  c.in_channels = j.value("in_channels", c.in_channels);
}

struct LossConfig {
  double label_smoothing = 0.1;
  double l2_weight = 1e-5;
  double dice_epsilon = 1e-6;
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"label_smoothing", c.label_smoothing}, {"l2_weight", c.l2_weight}, {"dice_epsilon", c.dice_epsilon}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.l2_weight = j.value("l2_weight", c.l2_weight);
  c.dice_epsilon = j.value("dice_epsilon", c.dice_epsilon);
}

// One convolution followed by the configured activation. gamma/beta are only
// defined for the batch-norm variant.
struct ConvUnit {
  Tensor weight;
  Tensor bias;
  Tensor gamma;
  Tensor beta;
  BatchNormState bn;
};

class Network {
 public:
  struct Output {
    Tensor probs;            // (B, classes, H, W), softmax over channels
    Tensor last_activation;  // activation of the final block's extra convolution
  };

  Network(const NetworkConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    if (cfg.levels < 1) throw std::invalid_argument("network: levels must be >= 1");
    if (cfg.channels < 1 || cfg.kernel < 1 || cfg.classes < 2 || cfg.in_channels < 1) {
      throw std::invalid_argument("network: channels, kernel and in_channels must be >= 1 and classes >= 2");
    }
    if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
      throw std::invalid_argument("network: dropout_rate must lie in [0, 1)");
    }
    std::mt19937_64 rng(init_seed);
    const std::size_t ch = cfg.channels;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      encoder_.push_back({make_unit(l == 0 ? cfg.in_channels : ch, ch, cfg.kernel, rng),
                          make_unit(ch, ch, cfg.kernel, rng)});
    }
    bottleneck_ = {make_unit(ch, ch, cfg.kernel, rng), make_unit(ch, ch, cfg.kernel, rng)};
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      up_.push_back(lecun_normal_init({ch, ch, 2, 2}, ch, rng));
      std::vector<ConvUnit> block{make_unit(2 * ch, ch, cfg.kernel, rng), make_unit(ch, ch, cfg.kernel, rng)};
      if (l + 1 == cfg.levels) block.push_back(make_unit(ch, ch, cfg.kernel, rng));
      decoder_.push_back(std::move(block));
    }
    classifier_.weight = lecun_normal_init({cfg.classes, ch, 1, 1}, ch, rng);
    classifier_.bias = Tensor::zeros({cfg.classes}, true);
  }

  const NetworkConfig& config() const { return cfg_; }

  // Throws naming the first level whose spatial extent cannot be pooled.
  void check_input(std::size_t rows, std::size_t cols) const {
    for (std::size_t l = 0; l < cfg_.levels; ++l) {
      if (rows < 2 || cols < 2) {
        throw std::invalid_argument("network: spatial extent " + std::to_string(rows) + "x" + std::to_string(cols) +
                                    " reaches 0 after pooling at level " + std::to_string(l + 1));
      }
      rows /= 2;
      cols /= 2;
    }
  }

  Output forward(Tape* tape, const Tensor& input, bool training, std::mt19937_64* dropout_rng = nullptr) {
    detail::require_rank(input, 4, "network", "input");
    if (input.dim(1) != cfg_.in_channels) {
      throw std::invalid_argument("network: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                                  shape_string(input.shape()));
    }
    check_input(input.dim(2), input.dim(3));
    if (training && cfg_.dropout_rate > 0.0 && cfg_.activation == Activation::selu && dropout_rng == nullptr) {
      throw std::invalid_argument("network: dropout requires an rng in training mode");
    }
    Output out;
    Tensor x = input;
    std::vector<Tensor> skips;
    for (auto& block : encoder_) {
      for (auto& unit : block) x = apply(tape, unit, x, training, dropout_rng, nullptr);
      skips.push_back(x);
      x = max_pool2(tape, x);
    }
    for (auto& unit : bottleneck_) x = apply(tape, unit, x, training, dropout_rng, nullptr);
    for (std::size_t stage = 0; stage < cfg_.levels; ++stage) {
      const Tensor& skip = skips[cfg_.levels - 1 - stage];
      Tensor up = conv2d_transpose(tape, x, up_[stage], 2);
      up = pad_to(tape, up, skip.dim(2), skip.dim(3));
      x = concat_channels(tape, skip, up);
      auto& block = decoder_[stage];
      for (std::size_t u = 0; u < block.size(); ++u) {
        const bool last = stage + 1 == cfg_.levels && u + 1 == block.size();
        x = apply(tape, block[u], x, training, dropout_rng, last ? &out.last_activation : nullptr);
      }
    }
    Tensor logits = conv2d(tape, x, classifier_.weight, classifier_.bias);
    out.probs = softmax_channels(tape, logits);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps;
    auto add_unit = [&](const ConvUnit& u) {
      ps.push_back(u.weight);
      ps.push_back(u.bias);
      if (u.gamma.defined()) {
        ps.push_back(u.gamma);
        ps.push_back(u.beta);
      }
    };
    for (const auto& b : encoder_) {
      for (const auto& u : b) add_unit(u);
    }
    for (const auto& u : bottleneck_) add_unit(u);
    for (std::size_t l = 0; l < cfg_.levels; ++l) {
      ps.push_back(up_[l]);
      for (const auto& u : decoder_[l]) add_unit(u);
    }
    add_unit(classifier_);
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

  std::vector<BatchNormState*> batch_norm_states() {
    std::vector<BatchNormState*> out;
    auto visit = [&](ConvUnit& u) {
      if (u.gamma.defined()) out.push_back(&u.bn);
    };
    for (auto& b : encoder_) {
      for (auto& u : b) visit(u);
    }
    for (auto& u : bottleneck_) visit(u);
    for (auto& b : decoder_) {
      for (auto& u : b) visit(u);
    }
    return out;
  }

 private:
  ConvUnit make_unit(std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng) const {
    ConvUnit u;
    u.weight = lecun_normal_init({out, in, k, k}, in * k * k, rng);
    u.bias = Tensor::zeros({out}, true);
    if (cfg_.activation == Activation::batchnorm_relu) {
      u.gamma = Tensor::full({out}, 1.0, true);
      u.beta = Tensor::zeros({out}, true);
      u.bn = BatchNormState(out);
    }
    return u;
  }

  Tensor apply(Tape* tape, ConvUnit& u, const Tensor& x, bool training, std::mt19937_64* rng, Tensor* capture) {
    Tensor y = conv2d(tape, x, u.weight, u.bias, Padding::same(cfg_.kernel));
    if (cfg_.activation == Activation::batchnorm_relu) {
      y = batch_norm_relu(tape, y, u.gamma, u.beta, u.bn, training);
    } else {
      y = selu(tape, y);
    }
    if (capture) *capture = y;
    if (cfg_.activation == Activation::selu && cfg_.dropout_rate > 0.0 && training) {
      y = alpha_dropout(tape, y, cfg_.dropout_rate, training, *rng);
    }
    return y;
  }

  NetworkConfig cfg_;
  std::vector<std::vector<ConvUnit>> encoder_;
  std::vector<ConvUnit> bottleneck_;
  std::vector<Tensor> up_;
  std::vector<std::vector<ConvUnit>> decoder_;
  ConvUnit classifier_;
};

inline Network build_network(const NetworkConfig& cfg, std::uint64_t init_seed) { return Network(cfg, init_seed); }

// (1 - mean soft Dice) + l2_weight * sum(theta^2).
//
// pred is (B, 2, H, W) softmax output; target is (B, H, W) with values in
// {0, 1}. Smoothed one-hot targets are y(1-eps) + eps/2 and the soft Dice of
// each (sample, class) pair is 2*sum(p*t) / (sum(p^2) + sum(t^2) + dice_eps).
inline Tensor dice_smooth_loss(Tape* tape, const Tensor& pred, const Tensor& target, const LossConfig& cfg,
                               const std::vector<Tensor>& params = {}) {
  if (!(cfg.label_smoothing >= 0.0 && cfg.label_smoothing < 1.0)) {
    throw std::invalid_argument("dice_smooth_loss: label smoothing must lie in [0, 1)");
  }
  if (cfg.l2_weight < 0.0) throw std::invalid_argument("dice_smooth_loss: l2_weight must be >= 0");
  detail::require_rank(pred, 4, "dice_smooth_loss", "pred");
  detail::require_rank(target, 3, "dice_smooth_loss", "target");
  const auto d = detail::dims4(pred);
  if (d.c != 2) throw std::invalid_argument("dice_smooth_loss: pred must have 2 channels");
  if (target.dim(0) != d.n || target.dim(1) != d.h || target.dim(2) != d.w) {
    throw std::invalid_argument("dice_smooth_loss: target " + shape_string(target.shape()) +
                                " does not match pred " + shape_string(pred.shape()));
  }
  const std::size_t plane = d.h * d.w;
  const double eps = cfg.label_smoothing;
  auto smoothed = [target, plane, eps](std::size_t b, std::size_t c, std::size_t i) {
    double y = target[b * plane + i];
    if (c == 0) y = 1.0 - y;
    return y * (1.0 - eps) + eps / 2.0;
  };
  const std::size_t pairs = d.n * d.c;
  std::vector<double> spt(pairs), den(pairs);
  double dice_total = 0.0;
  for (std::size_t b = 0; b < d.n; ++b) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* p = pred.values().data() + (b * d.c + c) * plane;
      double s_pt = 0.0, s_pp = 0.0, s_tt = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double t = smoothed(b, c, i);
        s_pt += p[i] * t;
        s_pp += p[i] * p[i];
        s_tt += t * t;
      }
      const std::size_t k = b * d.c + c;
      spt[k] = s_pt;
      den[k] = s_pp + s_tt + cfg.dice_epsilon;
      dice_total += 2.0 * s_pt / den[k];
    }
  }
  double l2 = 0.0;
  for (const auto& p : params) {
    for (double v : p.values()) l2 += v * v;
  }
  const double value = 1.0 - dice_total / static_cast<double>(pairs) + cfg.l2_weight * l2;
  std::vector<Tensor> inputs{pred};
  inputs.insert(inputs.end(), params.begin(), params.end());
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  Tensor out = Tensor::scalar(value, rg);
  if (tape && rg) {
    tape->record("dice_smooth_loss", inputs, out, [=]() {
      const double g = out.grad()[0];
      if (pred.requires_grad()) {
        auto& gp = pred.grad_buffer();
        const double scale = -g / static_cast<double>(pairs);
        for (std::size_t b = 0; b < d.n; ++b) {
          for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t k = b * d.c + c;
            const double* p = pred.values().data() + k * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double t = smoothed(b, c, i);
              const double dD = 2.0 * t / den[k] - 4.0 * spt[k] * p[i] / (den[k] * den[k]);
              gp[k * plane + i] += scale * dD;
            }
          }
        }
      }
      for (const auto& p : params) {
        if (!p.requires_grad()) continue;
        auto& gp = p.grad_buffer();
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g * 2.0 * cfg.l2_weight * p[i];
      }
    });
  }
  return out;
}

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Bias-corrected Adam. Gradients are read from each parameter's grad buffer;
// a parameter without one is treated as having zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& st) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.size(), 0.0);
      st.v.emplace_back(p.size(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (st.m[k].size() != params[k].size()) throw std::invalid_argument("adam_step: moment shape mismatch");
    if (!params[k].has_grad()) continue;
    for (double g : params[k].grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient (training diverged)");
    }
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_values();
    auto& m = st.m[k];
    auto& v = st.v[k];
    const bool has = params[k].has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has ? params[k].grad()[i] : 0.0;
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
      w[i] -= st.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.epsilon);
    }
  }
}

struct Batch {
  Tensor images;   // (B, 1, H, W)
  Tensor targets;  // (B, H, W) in {0, 1}
};

inline double train_step(Network& net, const Batch& batch, const LossConfig& loss_cfg, AdamState& adam,
                         std::mt19937_64& dropout_rng) {
  auto params = net.parameters();
  for (auto& p : params) p.zero_grad();
  Tape tape;
  auto out = net.forward(&tape, batch.images, true, &dropout_rng);
  Tensor loss = dice_smooth_loss(&tape, out.probs, batch.targets, loss_cfg, params);
  const double value = loss.item();
  if (!std::isfinite(value)) throw std::runtime_error("train_step: non-finite loss (training diverged)");
  tape.backward(loss);
  tape.clear();
  adam_step(params, adam);
  return value;
}

// Checkpoint layout: 8-byte magic "SUNETCK1", little-endian uint64 header
// length, JSON header {config, shapes, step}, then every parameter buffer
// followed by every batch-norm running mean/var, as raw float64.
inline void save_checkpoint(const std::string& path, Network& net, std::uint64_t step) {
  nlohmann::json header;
  header["config"] = net.config();
  header["step"] = step;
  auto params = net.parameters();
  header["shapes"] = nlohmann::json::array();
  for (const auto& p : params) header["shapes"].push_back(p.shape());
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write("SUNETCK1", 8);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    os.write(reinterpret_cast<const char*>(p.values().data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  for (auto* bn : net.batch_norm_states()) {
    os.write(reinterpret_cast<const char*>(bn->running_mean.data()),
             static_cast<std::streamsize>(bn->running_mean.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(bn->running_var.data()),
             static_cast<std::streamsize>(bn->running_var.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

struct Checkpoint {
  Network net;
  std::uint64_t step;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "SUNETCK1", 8) != 0) throw std::runtime_error("not a checkpoint: " + path);
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  auto header = nlohmann::json::parse(text);
  Checkpoint ck{Network(header.at("config").get<NetworkConfig>(), 0), header.at("step").get<std::uint64_t>()};
  auto params = ck.net.parameters();
  const auto& shapes = header.at("shapes");
  if (shapes.size() != params.size()) throw std::runtime_error("checkpoint parameter count mismatch: " + path);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (shapes[k].get<Shape>() != params[k].shape()) throw std::runtime_error("checkpoint shape mismatch: " + path);
    auto w = params[k].mutable_values();
    is.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
  }
  for (auto* bn : ck.net.batch_norm_states()) {
    is.read(reinterpret_cast<char*>(bn->running_mean.data()),
            static_cast<std::streamsize>(bn->running_mean.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(bn->running_var.data()),
            static_cast<std::streamsize>(bn->running_var.size() * sizeof(double)));
  }
  if (!is) throw std::runtime_error("truncated checkpoint " + path);
  return ck;
}

}  // namespace sunet
