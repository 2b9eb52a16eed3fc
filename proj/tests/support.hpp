#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "advt/advt.hpp"

namespace advt::testing {

using Fn = std::function<Tensor<double>(Graph<double>&, const std::vector<Tensor<double>>&)>;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Values bounded away from zero by `gap` (keeps kinks out of the stencil).
inline Tensor<double> random_away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  std::uniform_real_distribution<double> u(gap, 1.0);
  std::bernoulli_distribution coin(0.5);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = coin(rng) ? u(rng) : -u(rng);
  return t;
}

/// Scalar that mixes every output element with a fixed random weight.
inline Tensor<double> probe(Graph<double>& g, const Tensor<double>& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(out.shape(), rng);
  return scale(g, mean(g, mul(g, out, w)), static_cast<double>(out.numel()));
}

struct FdReport {
  double max_rel = 0;
  std::size_t checked = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor), maximized over
/// every element of every input (or `limit` random elements per input).
inline FdReport finite_difference_check(std::vector<Tensor<double>> inputs, const Fn& f, double h = 1e-5,
                                        double floor = 1e-8, std::size_t limit = 0, std::uint64_t seed = 5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  {
    Graph<double> g;
    auto loss = f(g, inputs);
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph<double> g;
    return f(g, inputs).item();
  };
  FdReport rep;
  std::mt19937_64 rng(seed);
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (limit && idx.size() > limit) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(limit);
    }
    auto d = t.data();
    for (std::size_t i : idx) {
      const double orig = d[i];
      d[i] = orig + h;
      const double up = eval();
      d[i] = orig - h;
      const double down = eval();
      d[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      rep.max_rel = std::max(rep.max_rel, std::abs(analytic[i] - numeric) / denom);
      ++rep.checked;
    }
  }
  return rep;
}

template <typename T>
Batch<T> whole_batch(const Dataset<T>& d, std::size_t index = 1) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return d.gather(idx, index);
}

/// Linear classifier on [N, d, 1, 1] images with explicit weights.
template <typename T>
TargetNet<T> linear_net(std::size_t d, std::size_t classes, const std::vector<T>& w, const std::vector<T>& b) {
  TargetSpec s;
  s.arch = Architecture::kLinear;
  s.channels = d;
  s.height = 1;
  s.width = 1;
  s.num_classes = classes;
  TargetNet<T> net(s);
  auto params = net.parameters();
  for (auto& p : params) {
    Tensor<T> t = p.tensor;
    const auto& src = p.name == "fc.weight" ? w : b;
    std::copy(src.begin(), src.end(), t.data().begin());
  }
  return net;
}

}  // namespace advt::testing
