#pragma once

#include <cstddef>
#include <vector>

#include "advt/errors.hpp"
#include "advt/nn.hpp"

namespace advt {

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// Gradient ascent instead of descent.
  bool maximize = false;
};

/// SGD with heavy-ball momentum:
///   v <- momentum * v + (grad + weight_decay * p)
///   p <- p -/+ lr * v
/// Parameters without a gradient are skipped.
template <typename T>
class Sgd {
 public:
  Sgd(nn::ParameterList<T> params, SgdOptions opt) : params_(nn::trainable(params)), opt_(opt) {
    if (opt.lr < 0 || opt.momentum < 0 || opt.weight_decay < 0) {
      throw ConfigError("sgd: learning rate, momentum and weight decay must be non-negative");
    }
    velocity_.resize(params_.size());
  }

  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  const SgdOptions& options() const { return opt_; }

  void step() {
    const T lr = static_cast<T>(opt_.lr), mom = static_cast<T>(opt_.momentum),
            wd = static_cast<T>(opt_.weight_decay);
    const T dir = opt_.maximize ? T{1} : T{-1};
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T> p = params_[i].tensor;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.data();
      auto& v = velocity_[i];
      if (v.empty()) v.assign(w.size(), T{0});
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = mom * v[j] + (g[j] + wd * w[j]);
        w[j] += dir * lr * v[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

 private:
  nn::ParameterList<T> params_;
  SgdOptions opt_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace advt
