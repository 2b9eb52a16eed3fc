#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace advt;
using advt::testing::linear_net;
using advt::testing::random_tensor;

namespace {

constexpr double kEps = 8.0 / 255.0;

struct Fixture {
  TargetNet<double> net;
  GeneratorNet<double> gen;
  Batch<double> batch;
};

/// Small double-precision target and generator on 8x8 images kept away from the
/// valid-range boundary.
Fixture make_fixture(std::uint64_t seed, std::size_t n = 6) {
  TargetSpec ts;
  ts.height = ts.width = 8;
  ts.conv1 = 4;
  ts.conv2 = 6;
  GeneratorSpec gs;
  gs.width = 4;
  Fixture f{TargetNet<double>(ts), GeneratorNet<double>(gs), {}};
  f.net.init_params(seed);
  f.gen.init_params(seed + 1);
  std::mt19937_64 rng(seed + 2);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 10);
  f.batch = {random_tensor({n, 3, 8, 8}, rng, 0.2, 0.8), labels, 1};
  return f;
}

AttackConfig sdi_config(double alpha = kEps) {
  AttackConfig c;
  c.alpha = alpha;
  c.steps = 1;
  return c;
}

/// Target loss at the generator-initialized FGSM point, with the sign step
/// frozen to `step` (the detached term), recomputed from scratch.
double frozen_step_loss(const Fixture& f, const SignedGradient<double>& s, const Tensor<double>& step,
                        const AttackConfig& cfg) {
  Graph<double> g;
  const auto& x = f.batch.images;
  auto init = generate_init(g, f.gen, x, s, cfg.epsilon, {BatchNormMode::kTrain, false});
  auto start = sub(g, clamp(g, add(g, x, init.eta), 0.0, 1.0), x);
  auto delta = clamp(g, add(g, start, step), -cfg.epsilon, cfg.epsilon);
  auto adv = clamp(g, add(g, x, delta), 0.0, 1.0);
  return softmax_cross_entropy(g, f.net.forward(g, adv, nn::kInference), f.batch.labels).item();
}

double sdi_loss(const Fixture& f, const SignedGradient<double>& s, const AttackConfig& cfg) {
  auto delta = sdi_perturbation(f.net, f.gen, f.batch, s, cfg);
  auto e = evaluate_batch(f.net, apply_perturbation(f.batch.images, delta), f.batch.labels);
  double sum = 0;
  for (double l : e.losses) sum += l;
  return sum / static_cast<double>(e.losses.size());
}

}  // namespace

TEST(SignedGradient, ZeroNetGivesZero) {
  auto net = linear_net<double>(2, 3, std::vector<double>(6, 0.0), {0.0, 0.0, 0.0});
  Batch<double> b{Tensor<double>({1, 2, 1, 1}, {0.3, 0.7}), {2}, 1};
  auto s = signed_gradient(net, b);
  for (double v : s.s.data()) EXPECT_EQ(v, 0.0);
}

TEST(SignedGradient, EntriesAreSigns) {
  auto f = make_fixture(1);
  auto s = signed_gradient(f.net, f.batch);
  ASSERT_EQ(s.s.shape(), f.batch.images.shape());
  for (double v : s.s.data()) EXPECT_TRUE(v == -1.0 || v == 0.0 || v == 1.0);
}

TEST(SignedGradient, OneDimensionalLogistic) {
  // Logit gap z1 - z0 = 2x: raising x helps class 1, so class 0 is attacked upward.
  auto net = linear_net<double>(1, 2, {-1.0, 1.0}, {0.0, 0.0});
  Batch<double> b{Tensor<double>({2, 1, 1, 1}, {0.4, 0.6}), {0, 1}, 1};
  EXPECT_EQ(signed_gradient(net, b).s.values(), (std::vector<double>{1.0, -1.0}));
}

TEST(GenerateInit, SilencedGeneratorGivesZero) {
  auto f = make_fixture(2);
  f.gen.silence();
  auto s = signed_gradient(f.net, f.batch);
  Graph<double> g;
  auto init = generate_init(g, f.gen, f.batch.images, s, kEps);
  for (double v : init.eta.data()) EXPECT_EQ(v, 0.0);
}

TEST(GenerateInit, BoundedByEpsilon) {
  auto f = make_fixture(3);
  auto s = signed_gradient(f.net, f.batch);
  for (double eps : {0.0, kEps, 0.3}) {
    Graph<double> g;
    auto init = generate_init(g, f.gen, f.batch.images, s, eps);
    for (double v : init.eta.data()) EXPECT_LE(std::abs(v), eps);
    if (eps == 0.0) {
      for (double v : init.eta.data()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(SdiPerturbation, SilencedGeneratorReducesToFgsm) {
  auto f = make_fixture(4);
  f.gen.silence();
  auto cfg = sdi_config();
  auto s = signed_gradient(f.net, f.batch);
  EXPECT_EQ(sdi_perturbation(f.net, f.gen, f.batch, s, cfg).delta.values(),
            fgsm(f.net, f.batch, cfg).delta.values());
}

TEST(SdiPerturbation, StaysInBallAndRange) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    auto f = make_fixture(seed);
    // Push some pixels onto the boundary of the valid range.
    f.batch.images.data()[0] = 0.0;
    f.batch.images.data()[1] = 1.0;
    auto cfg = sdi_config();
    auto s = signed_gradient(f.net, f.batch);
    Graph<double> g;
    auto sdi = sdi_perturbation(g, f.net, f.gen, f.batch, s, cfg, {BatchNormMode::kEval, {BatchNormMode::kTrain, true}});
    auto adv = apply_perturbation(f.batch.images, sdi.delta);
    for (std::size_t i = 0; i < adv.numel(); ++i) {
      ASSERT_LE(std::abs(sdi.delta.delta.data()[i]), kEps + 1e-15);
      ASSERT_GE(adv.data()[i], 0.0);
      ASSERT_LE(adv.data()[i], 1.0);
      ASSERT_NEAR(sdi.adversarial.data()[i], adv.data()[i], 1e-15);
    }
  }
}

TEST(SdiPerturbation, GeneratorGradientMatchesFiniteDifferences) {
  auto f = make_fixture(5);
  auto cfg = sdi_config();
  auto s = signed_gradient(f.net, f.batch);

  Graph<double> g;
  auto sdi = sdi_perturbation(g, f.net, f.gen, f.batch, s, cfg, {BatchNormMode::kEval, {BatchNormMode::kTrain, true}});
  auto loss = softmax_cross_entropy(g, f.net.forward(g, sdi.adversarial, nn::kInference), f.batch.labels);
  auto params = nn::trainable(f.gen.parameters());
  for (auto& p : params) Tensor<double>(p.tensor).clear_grad();
  g.backward(loss);

  // The frozen sign step, recovered from the value path.
  const auto& x = f.batch.images;
  Graph<double> g0;
  auto eta = generate_init(g0, f.gen, x, s, cfg.epsilon).eta;
  auto start = finalize_perturbation(x, eta, cfg);
  auto ig = input_gradient(f.net, apply_perturbation(x, start), f.batch.labels);
  Tensor<double> step = sign_of(ig.grad);
  for (auto& v : step.data()) v *= cfg.alpha;
  ASSERT_NEAR(frozen_step_loss(f, s, step, cfg), loss.item(), 1e-12);

  std::mt19937_64 rng(6);
  std::size_t checked = 0;
  double worst = 0;
  const double h = 1e-6;
  while (checked < 10) {
    auto& p = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    Tensor<double> t = p.tensor;
    if (!t.has_grad()) continue;
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, t.numel() - 1)(rng);
    const double analytic = t.grad()[i];
    const double orig = t.data()[i];
    t.data()[i] = orig + h;
    const double up = frozen_step_loss(f, s, step, cfg);
    t.data()[i] = orig - h;
    const double down = frozen_step_loss(f, s, step, cfg);
    t.data()[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
    ++checked;
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(SdiPerturbation, DetachedInitCarriesNoGeneratorGradient) {
  auto f = make_fixture(7);
  auto cfg = sdi_config();
  auto s = signed_gradient(f.net, f.batch);
  Graph<double> g;
  auto init = generate_init(g, f.gen, f.batch.images, s, cfg.epsilon, {BatchNormMode::kTrain, true});
  auto adv = clamp(g, add(g, f.batch.images, init.eta.detach()), 0.0, 1.0);
  auto loss = softmax_cross_entropy(g, f.net.forward(g, adv, nn::kInference), f.batch.labels);
  g.backward(loss);
  for (auto& p : nn::trainable(f.gen.parameters()))
    if (p.tensor.has_grad()) {
      for (double v : p.tensor.grad()) EXPECT_EQ(v, 0.0) << p.name;
    }
}

TEST(GeneratorAscent, SmallStepDoesNotDecreaseLoss) {
  auto f = make_fixture(8);
  auto cfg = sdi_config();
  auto s = signed_gradient(f.net, f.batch);
  const auto target_before = nn::snapshot(f.net.parameters());
  const double before = sdi_loss(f, s, cfg);
  Sgd<double> opt(f.gen.parameters(), {1e-6, 0.0, 0.0, true});
  const double reported = generator_ascent_step(f.gen, f.net, f.batch, s, cfg, opt);
  EXPECT_NEAR(reported, before, 1e-12);
  EXPECT_GE(sdi_loss(f, s, cfg), before - 1e-8);
  EXPECT_EQ(nn::snapshot(f.net.parameters()), target_before);
}

TEST(GeneratorAscent, StepFollowsTheGradient) {
  auto f = make_fixture(9);
  auto cfg = sdi_config();
  auto s = signed_gradient(f.net, f.batch);
  const auto theta_before = nn::snapshot(nn::trainable(f.gen.parameters()));
  Sgd<double> opt(f.gen.parameters(), {0.01, 0.0, 0.0, true});
  generator_ascent_step(f.gen, f.net, f.batch, s, cfg, opt);
  const auto theta_after = nn::snapshot(nn::trainable(f.gen.parameters()));

  // Recompute the gradient at the old theta and compare with the applied step.
  auto g0 = make_fixture(9);
  Graph<double> g;
  auto sdi = sdi_perturbation(g, g0.net, g0.gen, g0.batch, s, cfg, {BatchNormMode::kEval, {BatchNormMode::kTrain, true}});
  g.backward(softmax_cross_entropy(g, g0.net.forward(g, sdi.adversarial, nn::kInference), g0.batch.labels));
  auto params = nn::trainable(g0.gen.parameters());
  double inner = 0, moved = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) continue;
    auto grad = params[i].tensor.grad();
    for (std::size_t j = 0; j < grad.size(); ++j) {
      const double d = theta_after[i][j] - theta_before[i][j];
      inner += d * grad[j];
      moved += std::abs(d);
    }
  }
  EXPECT_GT(moved, 0.0);
  EXPECT_GE(inner, 0.0);
}

TEST(GeneratorAscent, ZeroRateLeavesThetaUnchanged) {
  auto f = make_fixture(10);
  auto cfg = sdi_config();
  auto s = signed_gradient(f.net, f.batch);
  // Running statistics of the generator move in train mode; theta must not.
  const auto before = nn::snapshot(nn::trainable(f.gen.parameters()));
  Sgd<double> opt(f.gen.parameters(), {0.0, 0.9, 0.0, true});
  generator_ascent_step(f.gen, f.net, f.batch, s, cfg, opt);
  EXPECT_EQ(nn::snapshot(nn::trainable(f.gen.parameters())), before);
}

TEST(GeneratorAscent, RequiresMaximizingOptimizer) {
  auto f = make_fixture(11);
  auto s = signed_gradient(f.net, f.batch);
  Sgd<double> opt(f.gen.parameters(), {0.1, 0.9, 0.0, false});
  EXPECT_THROW(generator_ascent_step(f.gen, f.net, f.batch, s, sdi_config(), opt), ConfigError);
}
