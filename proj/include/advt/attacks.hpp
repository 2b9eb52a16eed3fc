#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advt/data.hpp"
#include "advt/errors.hpp"
#include "advt/models.hpp"
#include "advt/ops.hpp"

namespace advt {

/// L-infinity threat model and step schedule shared by every attack.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 10;
  /// Keep x + delta inside [0,1].
  bool clip_to_valid = true;
  bool random_start = false;
  /// Independent PGD runs; the per-example worst case is kept.
  int restarts = 1;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
      throw ConfigError("attack: epsilon " + std::to_string(epsilon) + " outside [0, 1]");
    }
    if (!(alpha > 0.0) && !(alpha == 0.0 && epsilon == 0.0)) {
      throw ConfigError("attack: step size must be positive, got " + std::to_string(alpha));
    }
    if (steps < 1) throw ConfigError("attack: steps must be >= 1");
    if (restarts < 1) throw ConfigError("attack: restarts must be >= 1");
  }
};

template <typename T>
struct Perturbation {
  Tensor<T> delta;  // shaped like the image batch
};

namespace stats {

/// Number of input-gradient evaluations performed on this thread.
inline thread_local std::size_t input_gradient_calls = 0;

/// Counts input-gradient evaluations made during its lifetime.
class InputGradientCounter {
 public:
  InputGradientCounter() : start_(input_gradient_calls) {}
  std::size_t count() const { return input_gradient_calls - start_; }

 private:
  std::size_t start_;
};

}  // namespace stats

template <typename T>
struct InputGradient {
  Tensor<T> grad;
  T loss;
};

/// grad_x L(f(x; w), y) with the network parameters held constant.
template <typename T>
InputGradient<T> input_gradient(const TargetNet<T>& net, const Tensor<T>& x, std::span<const int> labels,
                                BatchNormMode bn = BatchNormMode::kEval, std::size_t batch_index = 0) {
  ++stats::input_gradient_calls;
  Graph<T> g;
  Tensor<T> leaf = x.clone(true);
  auto loss = softmax_cross_entropy(g, net.forward(g, leaf, {bn, false}), labels);
  const T value = loss.item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss while computing an input gradient (batch " +
                       std::to_string(batch_index) + ")");
  }
  g.backward(loss);
  Tensor<T> grad(x.shape());
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), grad.data().begin());
  return {grad, value};
}

template <typename T>
Tensor<T> sign_of(const Tensor<T>& t) {
  Graph<T> g;
  return sign(g, t.detach());
}

/// Elementwise clamp of delta onto [-epsilon, epsilon]. Idempotent.
template <typename T>
Perturbation<T> project_linf(const Perturbation<T>& p, double epsilon) {
  const T e = static_cast<T>(epsilon);
  Tensor<T> out(p.delta.shape());
  auto d = p.delta.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::min(std::max(d[i], -e), e);
  return {out};
}

/// Projects `raw` onto the epsilon-ball and, if configured, onto the set
/// where x + delta stays in [0,1]. Both constraints hold exactly in T.
template <typename T>
Perturbation<T> finalize_perturbation(const Tensor<T>& x, const Tensor<T>& raw, const AttackConfig& cfg) {
  if (x.shape() != raw.shape()) {
    throw ShapeError("perturbation: image " + to_string(x.shape()) + " vs delta " + to_string(raw.shape()));
  }
  auto p = project_linf(Perturbation<T>{raw}, cfg.epsilon);
  if (cfg.clip_to_valid) {
    auto d = p.delta.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::min(std::max(d[i], -xv[i]), T{1} - xv[i]);
  }
  return p;
}

template <typename T>
Tensor<T> apply_perturbation(const Tensor<T>& x, const Perturbation<T>& p) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  auto d = p.delta.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] + d[i];
  return out;
}

template <typename T>
Tensor<T> uniform_ball(const Shape& shape, double epsilon, std::mt19937_64& rng) {
  Tensor<T> out(shape);
  if (epsilon == 0.0) return out;
  std::uniform_real_distribution<double> u(-epsilon, epsilon);
  for (auto& v : out.data()) v = static_cast<T>(u(rng));
  return out;
}

namespace detail {

/// start + alpha * sign(grad), projected and clipped.
template <typename T>
Perturbation<T> signed_step(const Tensor<T>& x, const Tensor<T>& start, const Tensor<T>& grad, double alpha,
                            const AttackConfig& cfg) {
  const T a = static_cast<T>(alpha);
  Tensor<T> raw(x.shape());
  auto r = raw.data();
  auto s = start.data();
  auto gv = grad.data();
  for (std::size_t i = 0; i < r.size(); ++i) {
    const T sg = static_cast<T>((gv[i] > T{0}) - (gv[i] < T{0}));
    r[i] = s[i] + a * sg;
  }
  return finalize_perturbation(x, raw, cfg);
}

}  // namespace detail

/// delta = epsilon * sign(grad_x L(f(x), y)), then valid-range clipping.
template <typename T>
Perturbation<T> fgsm(const TargetNet<T>& net, const Batch<T>& batch, const AttackConfig& cfg,
                     BatchNormMode bn = BatchNormMode::kEval) {
  cfg.validate();
  auto ig = input_gradient(net, batch.images, batch.labels, bn, batch.index);
  Tensor<T> zero(batch.images.shape());
  return detail::signed_step(batch.images, zero, ig.grad, cfg.epsilon, cfg);
}

/// One FGSM step of size `alpha` taken from the initialization `init`:
/// delta = Proj(init + alpha * sign(grad_x L(f(x + init), y))).
template <typename T>
Perturbation<T> fgsm_from_init(const TargetNet<T>& net, const Batch<T>& batch, const Tensor<T>& init,
                               double alpha, const AttackConfig& cfg, BatchNormMode bn = BatchNormMode::kEval) {
  cfg.validate();
  auto start = finalize_perturbation(batch.images, init, cfg);
  auto ig = input_gradient(net, apply_perturbation(batch.images, start), batch.labels, bn, batch.index);
  return detail::signed_step(batch.images, start.delta, ig.grad, alpha, cfg);
}

/// FGSM from a uniform random start in the epsilon-ball.
template <typename T>
Perturbation<T> fgsm_rs(const TargetNet<T>& net, const Batch<T>& batch, const AttackConfig& cfg,
                        std::mt19937_64& rng, BatchNormMode bn = BatchNormMode::kEval) {
  cfg.validate();
  auto eta = uniform_ball<T>(batch.images.shape(), cfg.epsilon, rng);
  return fgsm_from_init(net, batch, eta, cfg.alpha, cfg, bn);
}

template <typename T>
using StepObserver = std::function<void(int step, const Perturbation<T>&)>;

/// Per-example cross-entropy and correctness (argmax ties go to the lowest class).
template <typename T>
struct BatchEval {
  std::vector<double> losses;
  std::vector<bool> correct;
};

template <typename T>
BatchEval<T> evaluate_batch(const TargetNet<T>& net, const Tensor<T>& x, std::span<const int> labels,
                            BatchNormMode bn = BatchNormMode::kEval) {
  auto logits = net.logits(x, bn);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  BatchEval<T> out;
  auto z = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    const double mx = row[best];
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    out.losses.push_back(mx + std::log(s) - static_cast<double>(row[labels[r]]));
    out.correct.push_back(best == static_cast<std::size_t>(labels[r]));
  }
  return out;
}

/// T iterations of delta <- Proj(delta + alpha * sign(grad_x L(f(x + delta), y))).
///
/// Starts from `init` when given, otherwise from a uniform random point when
/// cfg.random_start is set, otherwise from zero. With several restarts the
/// perturbation with the highest per-example loss is kept.
template <typename T>
Perturbation<T> pgd(const TargetNet<T>& net, const Batch<T>& batch, const AttackConfig& cfg,
                    std::mt19937_64& rng, const Perturbation<T>* init = nullptr,
                    BatchNormMode bn = BatchNormMode::kEval, const StepObserver<T>& observer = {}) {
  cfg.validate();
  const auto& x = batch.images;
  Perturbation<T> best;
  std::vector<double> best_loss;
  for (int r = 0; r < cfg.restarts; ++r) {
    Perturbation<T> delta;
    if (init && r == 0) {
      delta = finalize_perturbation(x, init->delta, cfg);
    } else if (cfg.random_start) {
      delta = finalize_perturbation(x, uniform_ball<T>(x.shape(), cfg.epsilon, rng), cfg);
    } else {
      delta = Perturbation<T>{Tensor<T>(x.shape())};
    }
    for (int t = 0; t < cfg.steps; ++t) {
      auto ig = input_gradient(net, apply_perturbation(x, delta), batch.labels, bn, batch.index);
      delta = detail::signed_step(x, delta.delta, ig.grad, cfg.alpha, cfg);
      if (observer) observer(t + 1, delta);
    }
    if (cfg.restarts == 1) return delta;
    auto eval = evaluate_batch(net, apply_perturbation(x, delta), batch.labels, bn);
    if (r == 0) {
      best = Perturbation<T>{delta.delta.clone()};
      best_loss = eval.losses;
      continue;
    }
    const std::size_t per = x.numel() / batch.size();
    auto dst = best.delta.data();
    auto src = delta.delta.data();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (eval.losses[i] > best_loss[i]) {
        best_loss[i] = eval.losses[i];
        std::copy_n(src.data() + i * per, per, dst.data() + i * per);
      }
    }
  }
  return best;
}

/// A named evaluation attack: clean, fgsm, or pgd with a step count.
struct AttackSpec {
  enum class Kind { kClean, kFgsm, kPgd };
  std::string name;
  Kind kind = Kind::kClean;
  AttackConfig cfg;
};

/// Parses "clean", "fgsm" or "pgd<N>" (e.g. pgd10). PGD uses alpha = epsilon/4
/// and one random start; FGSM uses alpha = epsilon and no random start.
inline AttackSpec parse_attack(const std::string& name, double epsilon) {
  AttackSpec s;
  s.name = name;
  s.cfg.epsilon = epsilon;
  if (name == "clean") {
    s.kind = AttackSpec::Kind::kClean;
    return s;
  }
  if (name == "fgsm") {
    s.kind = AttackSpec::Kind::kFgsm;
    s.cfg.alpha = epsilon;
    s.cfg.steps = 1;
    return s;
  }
  if (name.size() > 3 && name.rfind("pgd", 0) == 0 &&
      std::all_of(name.begin() + 3, name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    s.kind = AttackSpec::Kind::kPgd;
    s.cfg.steps = std::stoi(name.substr(3));
    s.cfg.alpha = epsilon / 4.0;
    s.cfg.random_start = true;
    if (s.cfg.steps < 1) throw ConfigError("attack '" + name + "': step count must be >= 1");
    return s;
  }
  throw ConfigError("unknown attack '" + name + "' (expected clean, fgsm or pgd<N>)");
}

struct AttackResult {
  std::string name;
  double accuracy = 0;
  double loss = 0;
  std::size_t examples = 0;
};

/// Accuracy of `net` (eval-mode BN) on adversarial versions of `data`, per attack.
template <typename T>
std::vector<AttackResult> evaluate_robust_accuracy(const TargetNet<T>& net, const Dataset<T>& data,
                                                   const std::vector<AttackSpec>& attacks,
                                                   std::size_t batch_size = 100, std::uint64_t seed = 0) {
  if (data.size() == 0) throw ConfigError("evaluate_robust_accuracy: empty dataset");
  const auto batches = make_batches(data.size(), batch_size, nullptr);
  std::vector<AttackResult> results;
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    const auto& spec = attacks[a];
    std::seed_seq seq{seed, std::uint64_t{a}, std::uint64_t{0xa77ac}};
    std::mt19937_64 rng(seq);
    AttackResult res{spec.name, 0, 0, data.size()};
    std::size_t correct = 0;
    double loss = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto batch = data.gather(batches[b], b + 1);
      Tensor<T> x = batch.images;
      if (spec.kind == AttackSpec::Kind::kFgsm) {
        x = apply_perturbation(batch.images, fgsm(net, batch, spec.cfg));
      } else if (spec.kind == AttackSpec::Kind::kPgd) {
        x = apply_perturbation(batch.images, pgd(net, batch, spec.cfg, rng));
      }
      auto ev = evaluate_batch(net, x, batch.labels);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        correct += ev.correct[i] ? 1 : 0;
        loss += ev.losses[i];
      }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    res.loss = loss / static_cast<double>(data.size());
    results.push_back(res);
  }
  return results;
}

}  // namespace advt
