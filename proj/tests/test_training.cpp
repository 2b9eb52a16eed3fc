#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace advt;

namespace {

constexpr double kEps = 8.0 / 255.0;

/// Tiny image data: `n` samples of 3x4x4 over 10 classes.
Dataset<float> tiny(std::size_t n, std::uint64_t stream = 1) {
  SynthSpec s;
  s.size = n;
  s.height = s.width = 4;
  return synth_dataset<float>(s, stream, stream == 1 ? "train" : "test");
}

TrainConfig quick(Method m, int epochs = 1, std::size_t batch = 10) {
  TrainConfig c;
  c.method = m;
  c.epochs = epochs;
  c.batch_size = batch;
  c.eval_subset = 20;
  c.record_wall_clock = false;
  return c;
}

TrainHooks no_eval() {
  TrainHooks h;
  h.evaluate = false;
  return h;
}

const std::vector<Method> kAllMethods{Method::kPgdAt,  Method::kFgsmAt,  Method::kFgsmRs,
                                      Method::kFgsmSdi, Method::kPgd2At, Method::kPgd4At};

}  // namespace

TEST(Config, DefaultsResolve) {
  const TrainConfig c = resolve(TrainConfig{});
  EXPECT_EQ(c.method, Method::kFgsmSdi);
  EXPECT_DOUBLE_EQ(c.epsilon, 8.0 / 255.0);
  EXPECT_EQ(c.k, 20);
  EXPECT_DOUBLE_EQ(c.lr, 0.1);
  EXPECT_DOUBLE_EQ(c.momentum, 0.9);
  EXPECT_DOUBLE_EQ(c.weight_decay, 5e-4);
  EXPECT_EQ(c.schedule.kind, ScheduleConfig::Kind::kMultiStep);
  EXPECT_DOUBLE_EQ(c.schedule.factor, 0.1);
  EXPECT_EQ(c.epochs, 20);
  EXPECT_EQ(c.schedule.milestones, (std::vector<int>{18, 19}));
  EXPECT_DOUBLE_EQ(*c.alpha, kEps);
  EXPECT_EQ(*c.steps, 1);
}

TEST(Config, MethodDefaults) {
  struct Row {
    Method m;
    double alpha;
    int steps;
  };
  for (const Row& r : {Row{Method::kFgsmRs, 1.25 * kEps, 1}, Row{Method::kFgsmAt, kEps, 1},
                       Row{Method::kFgsmSdi, kEps, 1}, Row{Method::kPgdAt, kEps / 4, 10},
                       Row{Method::kPgd2At, kEps / 2, 2}, Row{Method::kPgd4At, kEps / 4, 4}}) {
    TrainConfig c;
    c.method = r.m;
    c = resolve(c);
    EXPECT_DOUBLE_EQ(*c.alpha, r.alpha) << to_string(r.m);
    EXPECT_EQ(*c.steps, r.steps) << to_string(r.m);
    EXPECT_EQ(attack_config_of(c).random_start, r.m == Method::kFgsmRs);
  }
}

TEST(Config, FullProtocolMilestones) {
  EXPECT_EQ(default_milestones(110), (std::vector<int>{100, 105}));
  EXPECT_EQ(default_milestones(1), (std::vector<int>{}));
  TrainConfig c;
  c.alpha = 0.5 * kEps;
  c.steps = 3;
  c = resolve(c);
  EXPECT_DOUBLE_EQ(*c.alpha, 0.5 * kEps);
  EXPECT_EQ(*c.steps, 3);
}

TEST(Config, InvalidValuesThrow) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(resolve(c), ConfigError);
  };
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.k = 0; });
  bad([](TrainConfig& c) { c.batch_size = 1; });
  bad([](TrainConfig& c) { c.lr = -1; });
  bad([](TrainConfig& c) { c.epsilon = 2; });
  bad([](TrainConfig& c) { c.schedule.factor = 0; });
  bad([](TrainConfig& c) {
    c.schedule.milestones = {5, 3};
    c.milestones_set = true;
  });
  bad([](TrainConfig& c) {
    c.schedule.milestones = {20};
    c.milestones_set = true;
  });
}

TEST(Config, MethodNames) {
  for (Method m : kAllMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_EQ(to_string(Method::kFgsmSdi), "fgsm-sdi");
  EXPECT_THROW(parse_method("fgsm-gd"), ConfigError);
}

TEST(Schedule, MultistepExamples) {
  EXPECT_DOUBLE_EQ(multistep_lr(0.1, {100, 105}, 0.1, 1), 0.1);
  EXPECT_DOUBLE_EQ(multistep_lr(0.1, {100, 105}, 0.1, 99), 0.1);
  EXPECT_DOUBLE_EQ(multistep_lr(0.1, {100, 105}, 0.1, 100), 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(multistep_lr(0.1, {100, 105}, 0.1, 105), 0.1 * 0.1 * 0.1);
}

TEST(Schedule, CyclicExamples) {
  EXPECT_DOUBLE_EQ(cyclic_lr(0.2, 0, 100), 0.0);
  EXPECT_DOUBLE_EQ(cyclic_lr(0.2, 25, 100), 0.1);
  EXPECT_DOUBLE_EQ(cyclic_lr(0.2, 50, 100), 0.2);
  EXPECT_DOUBLE_EQ(cyclic_lr(0.2, 100, 100), 0.0);
  EXPECT_DOUBLE_EQ(cyclic_lr(0.2, 150, 100), 0.0);
  EXPECT_THROW(cyclic_lr(0.2, 1, 0), ConfigError);

  TrainConfig c;
  c.schedule.kind = ScheduleConfig::Kind::kCyclic;
  c = resolve(c);
  // The first update already takes a positive step; the last lands at zero.
  EXPECT_GT(learning_rate(c, 1, 0, 10), 0.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 1, 4, 10), 0.2);
  EXPECT_DOUBLE_EQ(learning_rate(c, 1, 9, 10), 0.0);
}

TEST(OverfitMonitor, TriggersOnCollapse) {
  const std::vector<double> trace{0.35, 0.38, 0.40, 0.01, 0.00};
  EXPECT_EQ(monitor_overfit(trace), 4);
  OverfitMonitor m;
  std::vector<std::optional<int>> fired;
  for (double v : trace) fired.push_back(m.observe(v));
  EXPECT_EQ(fired, (std::vector<std::optional<int>>{std::nullopt, std::nullopt, std::nullopt, 4, std::nullopt}));
  EXPECT_EQ(m.triggered_epoch(), 4);
}

TEST(OverfitMonitor, NeedsBothDropAndFloor) {
  EXPECT_EQ(monitor_overfit(std::vector<double>{0.5, 0.1}), std::nullopt);    // above the floor
  EXPECT_EQ(monitor_overfit(std::vector<double>{0.2, 0.01}), std::nullopt);   // drop too small
  EXPECT_EQ(monitor_overfit(std::vector<double>{0.01}), std::nullopt);
  EXPECT_EQ(monitor_overfit(std::vector<double>{}), std::nullopt);
}

TEST(OverfitMonitor, MonotoneTracesNeverTrigger) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> trace(1 + rng() % 30);
    double v = std::uniform_real_distribution<double>(0, 0.2)(rng);
    for (auto& x : trace) {
      x = v;
      v = std::min(1.0, v + std::uniform_real_distribution<double>(0, 0.1)(rng));
    }
    ASSERT_EQ(monitor_overfit(trace), std::nullopt);
  }
}

TEST(SelectBest, Examples) {
  std::vector<MetricsRecord> rows{
      {1, "test", "pgd10", 0.30, 0, 0, 0}, {1, "train", "pgd10", 0.90, 0, 0, 0},
      {2, "test", "pgd10", 0.45, 0, 0, 0}, {2, "test", "clean", 0.99, 0, 0, 0},
      {3, "test", "pgd10", 0.45, 0, 0, 0}, {4, "test", "pgd10", 0.10, 0, 0, 0},
  };
  auto c = select_best_checkpoint(rows);
  EXPECT_EQ(c.best_epoch, 2);  // ties go to the earlier epoch
  EXPECT_EQ(c.last_epoch, 4);
  rows.resize(2);
  EXPECT_EQ(select_best_checkpoint(rows).best_epoch, 1);
  std::vector<MetricsRecord> none{{1, "train", "pgd10", 0.5, 0, 0, 0}};
  EXPECT_THROW(select_best_checkpoint(none), ConfigError);
}

TEST(Training, InputGradientCountsPerBatch) {
  auto train_set = tiny(200), test_set = tiny(20, 2);
  struct Row {
    Method m;
    std::size_t plain, update;
  };
  for (const Row& r : {Row{Method::kFgsmRs, 1, 1}, Row{Method::kFgsmAt, 1, 1}, Row{Method::kPgd2At, 2, 2},
                       Row{Method::kPgd4At, 4, 4}, Row{Method::kPgdAt, 10, 10}, Row{Method::kFgsmSdi, 2, 3}}) {
    auto cfg = quick(r.m);
    cfg.k = 5;
    auto res = train(cfg, train_set, test_set, no_eval());
    ASSERT_EQ(res.trace.size(), 20u);
    for (const auto& bt : res.trace) {
      EXPECT_EQ(bt.input_gradients, bt.generator_update ? r.update : r.plain)
          << to_string(r.m) << " batch " << bt.batch;
    }
  }
}

TEST(Training, GeneratorCadence) {
  auto train_set = tiny(200), test_set = tiny(20, 2);
  for (auto [k, expected] : {std::pair{20, 5}, std::pair{1, 100}, std::pair{7, 14}, std::pair{150, 0}}) {
    auto cfg = quick(Method::kFgsmSdi, 1, 2);  // 100 batches
    cfg.k = k;
    auto res = train(cfg, train_set, test_set, no_eval());
    ASSERT_EQ(res.trace.size(), 100u);
    int updates = 0;
    for (const auto& bt : res.trace) {
      updates += bt.generator_update;
      EXPECT_EQ(bt.generator_update, bt.batch % static_cast<std::size_t>(k) == 0);
    }
    EXPECT_EQ(updates, expected) << "k=" << k;
    EXPECT_EQ(res.metrics.front().gen_updates, expected);
  }
}

TEST(Training, OneWeightUpdatePerBatch) {
  auto train_set = tiny(70), test_set = tiny(20, 2);
  auto cfg = quick(Method::kFgsmAt, 2, 20);  // 4 batches per epoch, the last one short
  auto res = train(cfg, train_set, test_set, no_eval());
  EXPECT_EQ(res.trace.size(), 8u);

  // The same run stopped after each batch leaves different weights every time.
  std::vector<std::vector<std::vector<float>>> states;
  for (std::size_t m = 1; m <= 4; ++m) {
    TrainHooks h = no_eval();
    h.max_batches = m;
    auto one = cfg;
    one.epochs = 1;
    states.push_back(nn::snapshot(train(one, train_set, test_set, h).net.parameters()));
  }
  for (std::size_t i = 1; i < states.size(); ++i) EXPECT_NE(states[i], states[i - 1]);
}

TEST(Training, MilestonesChangeTheRate) {
  auto train_set = tiny(40), test_set = tiny(20, 2);
  auto cfg = quick(Method::kFgsmAt, 5, 20);
  cfg.schedule.milestones = {2, 4};
  cfg.milestones_set = true;
  auto res = train(cfg, train_set, test_set, no_eval());
  const std::vector<double> expected{0.1, 0.01, 0.01, 0.001, 0.001};
  for (const auto& bt : res.trace) EXPECT_NEAR(bt.lr, expected[static_cast<std::size_t>(bt.epoch - 1)], 1e-15);
}

TEST(Training, SameSeedIsBitIdentical) {
  auto train_set = tiny(60), test_set = tiny(20, 2);
  for (Method m : {Method::kFgsmSdi, Method::kFgsmRs}) {
    auto cfg = quick(m, 2, 20);
    cfg.k = 2;
    auto a = train(cfg, train_set, test_set);
    auto b = train(cfg, train_set, test_set);
    EXPECT_EQ(a.metrics, b.metrics);
    EXPECT_EQ(nn::snapshot(a.net.parameters()), nn::snapshot(b.net.parameters()));
    cfg.seed = 1;
    auto c = train(cfg, train_set, test_set);
    EXPECT_NE(nn::snapshot(a.net.parameters()), nn::snapshot(c.net.parameters()));
  }
}

TEST(Training, PerturbationsStayInBallAndRange) {
  auto train_set = tiny(100), test_set = tiny(20, 2);
  for (Method m : kAllMethods) {
    auto cfg = quick(m, 2, 10);
    cfg.k = 3;
    auto res = train(cfg, train_set, test_set, no_eval());
    for (const auto& bt : res.trace) {
      EXPECT_LE(bt.max_abs_delta, kEps + 1e-7) << to_string(m);
      EXPECT_GE(bt.min_adv, 0.0);
      EXPECT_LE(bt.max_adv, 1.0);
    }
  }
}

TEST(Training, MetricsRowsAndBestSnapshot) {
  auto train_set = tiny(60), test_set = tiny(30, 2);
  auto cfg = quick(Method::kFgsmSdi, 3, 20);
  auto res = train(cfg, train_set, test_set);
  ASSERT_EQ(res.metrics.size(), 12u);
  const std::vector<std::pair<std::string, std::string>> order{
      {"train", "adv"}, {"train", "pgd10"}, {"test", "clean"}, {"test", "pgd10"}};
  for (std::size_t i = 0; i < res.metrics.size(); ++i) {
    EXPECT_EQ(res.metrics[i].epoch, static_cast<int>(i / 4 + 1));
    EXPECT_EQ(res.metrics[i].split, order[i % 4].first);
    EXPECT_EQ(res.metrics[i].attack, order[i % 4].second);
    EXPECT_EQ(res.metrics[i].wall_ms, 0.0);
  }
  EXPECT_EQ(res.choice.last_epoch, 3);
  EXPECT_GE(res.choice.best_epoch, 1);
  EXPECT_FALSE(res.best_target.empty());
  EXPECT_FALSE(res.best_generator.empty());
  if (res.choice.best_epoch == 3) {
    EXPECT_EQ(res.best_target, nn::snapshot(res.net.parameters()));
  }

  TrainHooks h;
  h.evaluate_train = false;
  auto lean = train(cfg, train_set, test_set, h);
  EXPECT_EQ(lean.metrics.size(), 9u);
  EXPECT_EQ(lean.choice.best_epoch, res.choice.best_epoch);
}

TEST(Training, StreamsRecordsThroughHook) {
  auto train_set = tiny(40), test_set = tiny(20, 2);
  std::vector<MetricsRecord> seen;
  TrainHooks h;
  h.on_record = [&](const MetricsRecord& r) { seen.push_back(r); };
  auto res = train(quick(Method::kFgsmRs, 2, 20), train_set, test_set, h);
  EXPECT_EQ(seen, res.metrics);
}

TEST(Training, WrappersCheckTheMethod) {
  auto train_set = tiny(20), test_set = tiny(20, 2);
  auto cfg = quick(Method::kFgsmRs);
  EXPECT_THROW(train_fgsm_sdi(cfg, train_set, test_set, no_eval()), ConfigError);
  EXPECT_THROW(train_pgd_at(cfg, train_set, test_set, no_eval()), ConfigError);
  EXPECT_NO_THROW(train_fgsm_rs(cfg, train_set, test_set, no_eval()));
  cfg.method = Method::kPgd2At;
  EXPECT_NO_THROW(train_pgd2_at(cfg, train_set, test_set, no_eval()));
  EXPECT_THROW(train_pgd4_at(cfg, train_set, test_set, no_eval()), ConfigError);
}

TEST(Training, DivergenceRaisesNumericError) {
  auto train_set = tiny(100), test_set = tiny(20, 2);
  auto cfg = quick(Method::kFgsmAt, 3, 10);
  cfg.lr = 1e30;
  try {
    train(cfg, train_set, test_set, no_eval());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}

TEST(Training, MismatchedClassCountsThrow) {
  auto train_set = tiny(20);
  SynthSpec s;
  s.classes = 5;
  s.size = 10;
  s.height = s.width = 4;
  EXPECT_THROW(train(quick(Method::kFgsmAt), train_set, synth_dataset<float>(s, 2), no_eval()), ConfigError);
}
