#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "advt/ops.hpp"
#include "advt/tensor.hpp"

namespace advt::nn {

/// How a module's forward pass treats its own state.
struct ForwardOptions {
  BatchNormMode bn = BatchNormMode::kEval;
  /// When false the parameters enter the graph detached, so only
  /// gradients with respect to the inputs are computed.
  bool param_grad = false;
};

inline constexpr ForwardOptions kInference{BatchNormMode::kEval, false};

enum class ParamKind { kTrainable, kBuffer };

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  ParamKind kind = ParamKind::kTrainable;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

template <typename T>
Tensor<T> use(const Tensor<T>& p, const ForwardOptions& opt) {
  return opt.param_grad ? p : p.detach();
}

/// He (fan-in) normal initialization: N(0, 2 / fan_in).
template <typename T>
void he_normal(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dOptions opt, bool bias)
      : weight_({out, in, kernel, kernel}, true), options_(opt) {
    if (bias) bias_ = Tensor<T>({out}, true);
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const ForwardOptions& opt) const {
    return conv2d(g, x, use(weight_, opt), bias_.defined() ? use(bias_, opt) : Tensor<T>(), options_);
  }

  void reset(std::mt19937_64& rng) {
    he_normal(weight_, weight_.dim(1) * weight_.dim(2) * weight_.dim(3), rng);
    if (bias_.defined()) std::fill(bias_.data().begin(), bias_.data().end(), T{0});
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight_, ParamKind::kTrainable});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_, ParamKind::kTrainable});
  }

  Tensor<T>& weight() { return weight_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  Conv2dOptions options_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma_({channels}, true),
        beta_({channels}, true),
        running_mean_({channels}),
        running_var_({channels}) {
    reset();
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const ForwardOptions& opt) const {
    return batch_norm(g, x, use(gamma_, opt), use(beta_, opt), running_mean_, running_var_,
                      BatchNormOptions{opt.bn, kMomentum, kEps});
  }

  void reset() {
    std::fill(gamma_.data().begin(), gamma_.data().end(), T{1});
    std::fill(beta_.data().begin(), beta_.data().end(), T{0});
    std::fill(running_mean_.data().begin(), running_mean_.data().end(), T{0});
    std::fill(running_var_.data().begin(), running_var_.data().end(), T{1});
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", gamma_, ParamKind::kTrainable});
    out.push_back({prefix + ".bias", beta_, ParamKind::kTrainable});
    out.push_back({prefix + ".running_mean", running_mean_, ParamKind::kBuffer});
    out.push_back({prefix + ".running_var", running_var_, ParamKind::kBuffer});
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

  static constexpr double kMomentum = 0.9;
  static constexpr double kEps = 1e-5;

 private:
  Tensor<T> gamma_, beta_;
  // Handles are shallow, so a const forward can still update running stats.
  Tensor<T> running_mean_, running_var_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight_({out, in}, true), bias_({out}, true) {}

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const ForwardOptions& opt) const {
    return linear(g, x, use(weight_, opt), use(bias_, opt));
  }

  void reset(std::mt19937_64& rng) {
    he_normal(weight_, weight_.dim(1), rng);
    std::fill(bias_.data().begin(), bias_.data().end(), T{0});
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight_, ParamKind::kTrainable});
    out.push_back({prefix + ".bias", bias_, ParamKind::kTrainable});
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_, bias_;
};

/// conv-BN-ReLU-conv-BN on the residual branch, identity skip, ReLU after the sum.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  explicit ResBlock(std::size_t channels)
      : conv1_(channels, channels, 3, {1, 1}, false),
        bn1_(channels),
        conv2_(channels, channels, 3, {1, 1}, false),
        bn2_(channels) {}

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const ForwardOptions& opt) const {
    auto h = relu(g, bn1_.forward(g, conv1_.forward(g, x, opt), opt));
    h = bn2_.forward(g, conv2_.forward(g, h, opt), opt);
    return relu(g, add(g, x, h));
  }

  void reset(std::mt19937_64& rng) {
    conv1_.reset(rng);
    bn1_.reset();
    conv2_.reset(rng);
    bn2_.reset();
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    conv1_.collect(prefix + ".conv1", out);
    bn1_.collect(prefix + ".bn1", out);
    conv2_.collect(prefix + ".conv2", out);
    bn2_.collect(prefix + ".bn2", out);
  }

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
};

template <typename T>
ParameterList<T> trainable(const ParameterList<T>& all) {
  ParameterList<T> out;
  for (const auto& p : all)
    if (p.kind == ParamKind::kTrainable) out.push_back(p);
  return out;
}

template <typename T>
std::size_t count_parameters(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.kind == ParamKind::kTrainable) n += p.tensor.numel();
  return n;
}

/// Deep copy of every tensor's values, in list order.
template <typename T>
std::vector<std::vector<T>> snapshot(const ParameterList<T>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.values());
  return out;
}

template <typename T>
void restore(const ParameterList<T>& params, const std::vector<std::vector<T>>& values) {
  if (values.size() != params.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> t = params[i].tensor;
    if (values[i].size() != t.numel()) {
      throw ShapeError("restore: size mismatch for " + params[i].name);
    }
    std::copy(values[i].begin(), values[i].end(), t.data().begin());
  }
}

}  // namespace advt::nn
