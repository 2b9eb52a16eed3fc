#pragma once

#include <cmath>
#include <string>

#include "advt/attacks.hpp"
#include "advt/models.hpp"
#include "advt/optim.hpp"

namespace advt {

/// s_x = sign(grad_x L(f(x; w), y)); entries in {-1, 0, +1}.
template <typename T>
struct SignedGradient {
  Tensor<T> s;
};

/// eta_g = epsilon * g(x, s_x; theta)
template <typename T>
struct GeneratedInit {
  Tensor<T> eta;
  double epsilon = 0;
};

template <typename T>
SignedGradient<T> signed_gradient(const TargetNet<T>& net, const Batch<T>& batch,
                                  BatchNormMode bn = BatchNormMode::kEval) {
  auto ig = input_gradient(net, batch.images, batch.labels, bn, batch.index);
  return {sign_of(ig.grad)};
}

/// Records eta_g on `g`; differentiable with respect to theta when
/// gen_opt.param_grad is set.
template <typename T>
GeneratedInit<T> generate_init(Graph<T>& g, const GeneratorNet<T>& gen, const Tensor<T>& x,
                               const SignedGradient<T>& s, double epsilon,
                               nn::ForwardOptions gen_opt = {BatchNormMode::kTrain, false}) {
  auto raw = gen.forward(g, x.detach(), s.s.detach(), gen_opt);
  return {scale(g, raw, static_cast<T>(epsilon)), epsilon};
}

template <typename T>
struct SdiPerturbation {
  /// Final perturbation values (ball and valid-range constraints hold exactly).
  Perturbation<T> delta;
  /// x + delta_g as a node of the caller's graph; carries the theta path.
  Tensor<T> adversarial;
  GeneratedInit<T> init;
};

struct SdiOptions {
  /// BN mode of the target network while computing the inner gradient.
  BatchNormMode target_bn = BatchNormMode::kEval;
  /// How the generator runs; param_grad enables the theta path.
  nn::ForwardOptions generator{BatchNormMode::kTrain, false};
};

/// delta_g = Proj(eta_g + alpha * sign(grad_x L(f(x + eta_g; w), y))).
///
/// The sign term is a constant with respect to theta; theta reaches the loss
/// only through the additive eta_g path and the unclipped coordinates of the
/// projections.
template <typename T>
SdiPerturbation<T> sdi_perturbation(Graph<T>& g, const TargetNet<T>& net, const GeneratorNet<T>& gen,
                                    const Batch<T>& batch, const SignedGradient<T>& s,
                                    const AttackConfig& cfg, SdiOptions opt = {}) {
  cfg.validate();
  const Tensor<T>& x = batch.images;
  const T eps = static_cast<T>(cfg.epsilon);
  auto init = generate_init(g, gen, x, s, cfg.epsilon, opt.generator);

  for (T v : init.eta.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite generator output (batch " + std::to_string(batch.index) + ")");
    }
  }

  // Value path: identical arithmetic to fgsm_from_init.
  auto start = finalize_perturbation(x, init.eta.detach(), cfg);
  auto ig = input_gradient(net, apply_perturbation(x, start), batch.labels, opt.target_bn, batch.index);
  auto delta = detail::signed_step(x, start.delta, ig.grad, cfg.alpha, cfg);

  // Theta path, recorded on g.
  const Tensor<T> xs = x.detach();
  Tensor<T> start_g = init.eta;
  if (cfg.clip_to_valid) start_g = sub(g, clamp(g, add(g, xs, init.eta), T{0}, T{1}), xs);
  Tensor<T> step = sign_of(ig.grad);
  for (auto& v : step.data()) v *= static_cast<T>(cfg.alpha);
  auto delta_g = clamp(g, add(g, start_g, step), -eps, eps);
  auto adversarial = add(g, xs, delta_g);
  if (cfg.clip_to_valid) adversarial = clamp(g, adversarial, T{0}, T{1});
  return {delta, adversarial, init};
}

/// Value-only variant (no theta path is recorded).
template <typename T>
Perturbation<T> sdi_perturbation(const TargetNet<T>& net, const GeneratorNet<T>& gen, const Batch<T>& batch,
                                 const SignedGradient<T>& s, const AttackConfig& cfg, SdiOptions opt = {}) {
  Graph<T> g;
  opt.generator.param_grad = false;
  return sdi_perturbation(g, net, gen, batch, s, cfg, opt).delta;
}

/// One gradient-ascent step on theta for L(f(x + delta_g(theta); w), y).
/// The target parameters are never written. Returns the loss before the step.
template <typename T>
T generator_ascent_step(GeneratorNet<T>& gen, const TargetNet<T>& net, const Batch<T>& batch,
                        const SignedGradient<T>& s, const AttackConfig& cfg, Sgd<T>& optimizer,
                        BatchNormMode target_bn = BatchNormMode::kEval) {
  if (!optimizer.options().maximize) throw ConfigError("generator_ascent_step: optimizer must maximize");
  Graph<T> g;
  SdiOptions opt{target_bn, {BatchNormMode::kTrain, true}};
  auto sdi = sdi_perturbation(g, net, gen, batch, s, cfg, opt);
  auto loss = softmax_cross_entropy(g, net.forward(g, sdi.adversarial, {target_bn, false}), batch.labels);
  const T value = loss.item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss in generator update (batch " + std::to_string(batch.index) + ")");
  }
  optimizer.zero_grad();
  g.backward(loss);
  optimizer.step();
  optimizer.zero_grad();
  return value;
}

}  // namespace advt
