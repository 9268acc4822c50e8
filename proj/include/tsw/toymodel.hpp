#pragma once

// A small ReLU multilayer perceptron with deterministic SGD and Adam trainers.
// Parameters live in a NamedTensorSet as W1, b1, W2, b2, ... with Wl shaped
// [out, in].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsw/rng.hpp"
#include "tsw/tensor.hpp"

namespace tsw::toy {

struct Dataset {
  std::size_t dim = 0;
  std::vector<float> x;  // row-major, size() x dim
  std::vector<std::uint32_t> y;

  std::size_t size() const noexcept { return y.size(); }
  std::span<const float> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
};

struct ModelSpec {
  std::vector<std::size_t> dims;  // d_in, hidden..., d_out

  std::size_t layers() const noexcept { return dims.size() - 1; }
  std::size_t feature_dim() const noexcept { return dims[dims.size() - 2]; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline std::string weight_name(std::size_t layer) { return "W" + std::to_string(layer + 1); }
inline std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer + 1); }

/// Recovers the layer dims from W1..WL shapes.
inline ModelSpec spec_from_params(const NamedTensorSet& params) {
  ModelSpec spec;
  for (std::size_t l = 0;; ++l) {
    const Tensor* w = params.find(weight_name(l));
    if (w == nullptr) break;
    require(w->shape.size() == 2, ErrorCode::kShapeMismatch, weight_name(l) + " must be a matrix");
    if (l == 0) spec.dims.push_back(w->shape[1]);
    require(spec.dims.back() == w->shape[1], ErrorCode::kShapeMismatch, weight_name(l) + " input dim mismatch");
    const Tensor* b = params.find(bias_name(l));
    require(b != nullptr && b->numel() == w->shape[0], ErrorCode::kShapeMismatch, bias_name(l) + " missing or wrong");
    spec.dims.push_back(w->shape[0]);
  }
  require(spec.dims.size() >= 3, ErrorCode::kInvalidArgument, "model needs at least one hidden layer");
  return spec;
}

inline NamedTensorSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  require(spec.dims.size() >= 3, ErrorCode::kInvalidArgument, "model needs at least one hidden layer");
  Rng rng(seed);
  NamedTensorSet params;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const auto in = spec.dims[l];
    const auto out = spec.dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::vector<float> w(in * out);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    params.add(weight_name(l), {out, in}, std::move(w));
    params.add(bias_name(l), {out}, std::vector<float>(out, 0.0f));
  }
  return params;
}

/// Resolved per-layer pointers for fast repeated evaluation.
class Network {
 public:
  Network(const NamedTensorSet& params, ModelSpec spec) : spec_(std::move(spec)) {
    for (std::size_t l = 0; l < spec_.layers(); ++l) {
      const auto& w = params.at(weight_name(l));
      const auto& b = params.at(bias_name(l));
      require(w.shape == Shape{spec_.dims[l + 1], spec_.dims[l]}, ErrorCode::kShapeMismatch,
              weight_name(l) + " does not match model spec");
      require(b.numel() == spec_.dims[l + 1], ErrorCode::kShapeMismatch, bias_name(l) + " does not match");
      weights_.push_back(w.data.data());
      biases_.push_back(b.data.data());
    }
  }

  explicit Network(const NamedTensorSet& params) : Network(params, spec_from_params(params)) {}

  const ModelSpec& spec() const noexcept { return spec_; }

  /// Activations of every layer; acts[0] is the input, acts.back() the logits.
  void forward_all(std::span<const float> x, std::vector<std::vector<float>>& acts) const {
    require(x.size() == spec_.dims[0], ErrorCode::kDimensionMismatch, "input dimension mismatch");
    acts.resize(spec_.dims.size());
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < spec_.layers(); ++l) {
      const auto in = spec_.dims[l];
      const auto out = spec_.dims[l + 1];
      const bool hidden = l + 1 < spec_.layers();
      auto& a = acts[l + 1];
      a.resize(out);
      const float* w = weights_[l];
      for (std::size_t o = 0; o < out; ++o) {
        float acc = biases_[l][o];
        const float* wr = w + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += wr[i] * acts[l][i];
        a[o] = hidden ? std::max(acc, 0.0f) : acc;
      }
    }
  }

  std::vector<float> logits(std::span<const float> x) const {
    std::vector<std::vector<float>> acts;
    forward_all(x, acts);
    return std::move(acts.back());
  }

  /// Activations entering the final linear layer.
  std::vector<float> feature(std::span<const float> x) const {
    std::vector<std::vector<float>> acts;
    forward_all(x, acts);
    return std::move(acts[acts.size() - 2]);
  }

  std::uint32_t predict(std::span<const float> x) const { return argmax(logits(x)); }

  /// Lowest index among the maxima.
  static std::uint32_t argmax(std::span<const float> v) {
    std::uint32_t best = 0;
    for (std::uint32_t i = 1; i < v.size(); ++i) {
      if (v[i] > v[best]) best = i;
    }
    return best;
  }

 private:
  ModelSpec spec_;
  std::vector<const float*> weights_;
  std::vector<const float*> biases_;
};

inline double evaluate(const NamedTensorSet& params, const ModelSpec& spec, const Dataset& split) {
  if (split.size() == 0) return 0.0;
  Network net(params, spec);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) correct += net.predict(split.row(i)) == split.y[i];
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  Optimizer optimizer = Optimizer::kSgd;
  double lr = 0.05;
  std::size_t epochs = 10;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  // Keep the final linear layer fixed (only the feature layers move).
  bool freeze_head = false;
};

/// Minibatch SGD (optionally with Adam moment scaling) on softmax
/// cross-entropy. Single-threaded with a fixed reduction order, so the result
/// is a pure function of its inputs.
inline NamedTensorSet train(const NamedTensorSet& init, const Dataset& data, const TrainConfig& cfg) {
  require(cfg.lr >= 0.0 && std::isfinite(cfg.lr), ErrorCode::kInvalidArgument, "learning rate must be >= 0");
  require(cfg.batch >= 1, ErrorCode::kInvalidArgument, "batch size must be positive");
  const ModelSpec spec = spec_from_params(init);
  NamedTensorSet params = init;
  if (cfg.lr == 0.0 || data.size() == 0) return params;
  require(data.dim == spec.dims[0], ErrorCode::kDimensionMismatch, "data dimension does not match model");

  const std::size_t layers = spec.layers();
  std::vector<float*> w(layers), b(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    w[l] = params.find(weight_name(l))->data.data();
    b[l] = params.find(bias_name(l))->data.data();
  }
  std::vector<std::vector<double>> gw(layers), gb(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    gw[l].resize(spec.dims[l] * spec.dims[l + 1]);
    gb[l].resize(spec.dims[l + 1]);
  }

  // Adam state, one slot per parameter in gw/gb layout.
  std::vector<std::vector<double>> mw(layers), vw(layers), mb(layers), vb(layers);
  if (cfg.optimizer == Optimizer::kAdam) {
    for (std::size_t l = 0; l < layers; ++l) {
      mw[l].assign(gw[l].size(), 0.0);
      vw[l].assign(gw[l].size(), 0.0);
      mb[l].assign(gb[l].size(), 0.0);
      vb[l].assign(gb[l].size(), 0.0);
    }
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::uint64_t steps = 0;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<std::vector<float>> acts;
  std::vector<std::vector<double>> delta(spec.dims.size());
  const NamedTensorSet* view = &params;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      for (std::size_t l = 0; l < layers; ++l) {
        std::fill(gw[l].begin(), gw[l].end(), 0.0);
        std::fill(gb[l].begin(), gb[l].end(), 0.0);
      }
      Network net(*view, spec);
      double batch_loss = 0.0;
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t idx = order[s];
        net.forward_all(data.row(idx), acts);
        const auto& logit = acts.back();
        const float mx = *std::max_element(logit.begin(), logit.end());
        double z = 0.0;
        for (float v : logit) z += std::exp(static_cast<double>(v - mx));
        auto& d = delta.back();
        d.resize(logit.size());
        for (std::size_t c = 0; c < logit.size(); ++c) d[c] = std::exp(static_cast<double>(logit[c] - mx)) / z;
        batch_loss -= std::log(std::max(d[data.y[idx]], 1e-300));
        d[data.y[idx]] -= 1.0;
        for (std::size_t l = layers; l-- > 0;) {
          const auto in = spec.dims[l];
          const auto out = spec.dims[l + 1];
          const auto& dl = delta[l + 1];
          for (std::size_t o = 0; o < out; ++o) {
            gb[l][o] += dl[o];
            double* g = gw[l].data() + o * in;
            for (std::size_t i = 0; i < in; ++i) g[i] += dl[o] * acts[l][i];
          }
          if (l == 0) break;
          auto& prev = delta[l];
          prev.assign(in, 0.0);
          for (std::size_t o = 0; o < out; ++o) {
            const float* wr = w[l] + o * in;
            for (std::size_t i = 0; i < in; ++i) prev[i] += dl[o] * wr[i];
          }
          for (std::size_t i = 0; i < in; ++i) {
            if (acts[l][i] <= 0.0f) prev[i] = 0.0;
          }
        }
      }
      require(std::isfinite(batch_loss), ErrorCode::kDivergence, "loss is not finite");
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      const std::size_t trainable = cfg.freeze_head ? layers - 1 : layers;
      if (cfg.optimizer == Optimizer::kSgd) {
        const double step = cfg.lr * inv_batch;
        for (std::size_t l = 0; l < trainable; ++l) {
          for (std::size_t j = 0; j < gw[l].size(); ++j) w[l][j] -= static_cast<float>(step * gw[l][j]);
          for (std::size_t j = 0; j < gb[l].size(); ++j) b[l][j] -= static_cast<float>(step * gb[l][j]);
        }
      } else {
        ++steps;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps));
        auto adam = [&](float* p, const std::vector<double>& g, std::vector<double>& m, std::vector<double>& v) {
          for (std::size_t j = 0; j < g.size(); ++j) {
            const double grad = g[j] * inv_batch;
            m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * grad;
            v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * grad * grad;
            p[j] -= static_cast<float>(cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps));
          }
        };
        for (std::size_t l = 0; l < trainable; ++l) {
          adam(w[l], gw[l], mw[l], vw[l]);
          adam(b[l], gb[l], mb[l], vb[l]);
        }
      }
    }
  }
  require(params.all_finite(), ErrorCode::kDivergence, "parameters became non-finite");
  return params;
}

}  // namespace tsw::toy
