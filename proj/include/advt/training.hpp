#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advt/attacks.hpp"
#include "advt/initializer.hpp"
#include "advt/models.hpp"
#include "advt/optim.hpp"
#include "advt/schedule.hpp"

namespace advt {

enum class Method { kPgdAt, kFgsmAt, kFgsmRs, kFgsmSdi, kPgd2At, kPgd4At };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kPgdAt: return "pgd-at";
    case Method::kFgsmAt: return "fgsm-at";
    case Method::kFgsmRs: return "fgsm-rs";
    case Method::kFgsmSdi: return "fgsm-sdi";
    case Method::kPgd2At: return "pgd2-at";
    case Method::kPgd4At: return "pgd4-at";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::kPgdAt, Method::kFgsmAt, Method::kFgsmRs, Method::kFgsmSdi, Method::kPgd2At,
                   Method::kPgd4At}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected pgd-at, fgsm-at, fgsm-rs, fgsm-sdi, pgd2-at, pgd4-at)");
}

/// Full description of one training run. Unset optionals take method defaults in resolve().
struct TrainConfig {
  Method method = Method::kFgsmSdi;
  int epochs = 20;
  /// Generator update interval (fgsm-sdi): theta moves on batches whose 1-based index is divisible by k.
  int k = 20;
  double epsilon = 8.0 / 255.0;
  std::optional<double> alpha;
  std::optional<int> steps;
  bool clip_to_valid = true;

  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  ScheduleConfig schedule;
  /// Milestones are derived from `epochs` unless given explicitly.
  bool milestones_set = false;

  double gen_lr = 0.1;
  double gen_momentum = 0.9;
  double gen_weight_decay = 0.0;

  std::uint64_t seed = 0;
  std::string dataset = "synthetic";
  std::size_t batch_size = 50;
  /// Samples of each split attacked with PGD-10 after every epoch.
  std::size_t eval_subset = 200;
  Architecture arch = Architecture::kSmallCnn;
  std::size_t pool_grid = 2;
  bool record_wall_clock = true;
};

inline double default_alpha(Method m, double epsilon) {
  switch (m) {
    case Method::kFgsmRs: return 1.25 * epsilon;
    case Method::kFgsmAt:
    case Method::kFgsmSdi: return epsilon;
    case Method::kPgd2At: return epsilon / 2.0;
    case Method::kPgdAt:
    case Method::kPgd4At: return epsilon / 4.0;
  }
  return epsilon;
}

inline int default_steps(Method m) {
  switch (m) {
    case Method::kPgdAt: return 10;
    case Method::kPgd2At: return 2;
    case Method::kPgd4At: return 4;
    default: return 1;
  }
}

inline AttackConfig attack_config_of(const TrainConfig& cfg) {
  AttackConfig a;
  a.epsilon = cfg.epsilon;
  a.alpha = cfg.alpha.value_or(default_alpha(cfg.method, cfg.epsilon));
  a.steps = cfg.steps.value_or(default_steps(cfg.method));
  a.clip_to_valid = cfg.clip_to_valid;
  a.random_start = cfg.method == Method::kFgsmRs;
  return a;
}

/// Fills method defaults and checks every invariant.
inline TrainConfig resolve(TrainConfig cfg) {
  if (!cfg.alpha) cfg.alpha = default_alpha(cfg.method, cfg.epsilon);
  if (!cfg.steps) cfg.steps = default_steps(cfg.method);
  if (!cfg.milestones_set) {
    cfg.schedule.milestones = default_milestones(cfg.epochs);
    cfg.milestones_set = true;
  }
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.k < 1) throw ConfigError("k must be >= 1");
  if (cfg.batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (cfg.lr < 0 || cfg.gen_lr < 0) throw ConfigError("learning rates must be non-negative");
  if (cfg.schedule.factor <= 0) throw ConfigError("schedule factor must be positive");
  for (std::size_t i = 0; i < cfg.schedule.milestones.size(); ++i) {
    const int m = cfg.schedule.milestones[i];
    if (m < 1 || m >= cfg.epochs || (i > 0 && m <= cfg.schedule.milestones[i - 1])) {
      throw ConfigError("milestones must be strictly increasing, >= 1 and < epochs");
    }
  }
  attack_config_of(cfg).validate();
  return cfg;
}


/// Learning rate applied to the weight update of `batch_in_run` (0-based over the whole run).
inline double learning_rate(const TrainConfig& cfg, int epoch, std::size_t batch_in_run, std::size_t total_batches) {
  if (cfg.schedule.kind == ScheduleConfig::Kind::kCyclic) {
    return cyclic_lr(cfg.schedule.max_lr, static_cast<double>(batch_in_run + 1), static_cast<double>(total_batches));
  }
  return multistep_lr(cfg.lr, cfg.schedule.milestones, cfg.schedule.factor, epoch);
}

/// One row of the training/evaluation log.
struct MetricsRecord {
  int epoch = 0;
  std::string split;   // train | test
  std::string attack;  // adv (training batches), clean, fgsm, pgd<N>
  double accuracy = 0;
  double loss = 0;
  double wall_ms = 0;
  int gen_updates = 0;

  bool operator==(const MetricsRecord&) const = default;
};

/// Catastrophic-overfitting rule: trigger at the first epoch whose train
/// PGD-10 accuracy is below (best earlier accuracy - drop) and below floor.
/// Returns the 1-based epoch.
inline std::optional<int> monitor_overfit(std::span<const double> history, double drop = 0.30, double floor = 0.05) {
  double best = -1;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i > 0 && history[i] < best - drop && history[i] < floor) return static_cast<int>(i + 1);
    best = std::max(best, history[i]);
  }
  return std::nullopt;
}

class OverfitMonitor {
 public:
  explicit OverfitMonitor(double drop = 0.30, double floor = 0.05) : drop_(drop), floor_(floor) {}

  /// Appends one epoch; returns the trigger epoch the first time the rule fires.
  std::optional<int> observe(double accuracy) {
    history_.push_back(accuracy);
    if (triggered_) return std::nullopt;
    auto t = monitor_overfit(history_, drop_, floor_);
    if (t) triggered_ = t;
    return t;
  }

  std::optional<int> triggered_epoch() const { return triggered_; }
  const std::vector<double>& history() const { return history_; }

 private:
  double drop_, floor_;
  std::vector<double> history_;
  std::optional<int> triggered_;
};

struct CheckpointChoice {
  int best_epoch = 0;
  int last_epoch = 0;
};

/// Best (highest test PGD-10 accuracy, earliest on ties) and last evaluated epochs.
inline CheckpointChoice select_best_checkpoint(std::span<const MetricsRecord> records) {
  CheckpointChoice c;
  double best = -1;
  for (const auto& r : records) {
    if (r.split != "test" || r.attack != "pgd10") continue;
    if (r.accuracy > best) {
      best = r.accuracy;
      c.best_epoch = r.epoch;
    }
    c.last_epoch = std::max(c.last_epoch, r.epoch);
  }
  if (c.last_epoch == 0) throw ConfigError("select_best_checkpoint: no evaluated epoch");
  return c;
}

struct BatchTrace {
  int epoch = 0;
  std::size_t batch = 0;  // 1-based within the epoch
  std::size_t input_gradients = 0;
  bool generator_update = false;
  double lr = 0;
  double max_abs_delta = 0;
  double min_adv = 0, max_adv = 0;
};

template <typename T>
struct TrainResult {
  TargetNet<T> net;
  std::optional<GeneratorNet<T>> generator;
  std::vector<MetricsRecord> metrics;
  std::vector<BatchTrace> trace;
  CheckpointChoice choice;
  std::vector<std::vector<T>> best_target;  // snapshot of net.parameters() at the best epoch
  std::vector<std::vector<T>> best_generator;
  std::optional<int> overfit_epoch;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_record;
  /// Stop after this many batches per epoch (0 = all); used by timing harnesses.
  std::size_t max_batches = 0;
  bool evaluate = true;
  /// Skip the train-split PGD-10 pass (and with it the overfit monitor).
  bool evaluate_train = true;
};

template <typename T>
TargetSpec target_spec_for(const TrainConfig& cfg, const Dataset<T>& data) {
  TargetSpec spec;
  spec.arch = cfg.arch;
  spec.channels = data.images.dim(1);
  spec.height = data.images.dim(2);
  spec.width = data.images.dim(3);
  spec.num_classes = data.num_classes;
  spec.pool_grid = cfg.pool_grid;
  return spec;
}

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream, std::uint64_t{0x7a11}};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

}  // namespace detail

/// Runs any of the training algorithms on `train`, evaluating on `test` after every epoch.
template <typename T>
TrainResult<T> train(TrainConfig cfg, const Dataset<T>& train, const Dataset<T>& test, const TrainHooks& hooks = {}) {
  using Clock = std::chrono::steady_clock;
  cfg = resolve(cfg);
  train.validate();
  test.validate();
  if (train.num_classes != test.num_classes) throw ConfigError("train/test class counts differ");

  const TargetSpec spec = target_spec_for(cfg, train);
  TrainResult<T> result{TargetNet<T>(spec), std::nullopt, {}, {}, {}, {}, {}, std::nullopt};
  TargetNet<T>& net = result.net;
  net.init_params(detail::derive_seed(cfg.seed, 1));
  Sgd<T> opt(net.parameters(), {cfg.lr, cfg.momentum, cfg.weight_decay, false});

  const bool sdi = cfg.method == Method::kFgsmSdi;
  std::optional<Sgd<T>> gen_opt;
  if (sdi) {
    result.generator.emplace(GeneratorSpec{spec.channels, 64, false});
    result.generator->init_params(detail::derive_seed(cfg.seed, 2));
    gen_opt.emplace(result.generator->parameters(), SgdOptions{cfg.gen_lr, cfg.gen_momentum, cfg.gen_weight_decay, true});
  }

  const AttackConfig atk = attack_config_of(cfg);
  std::mt19937_64 rng(detail::derive_seed(cfg.seed, 3));
  const Dataset<T> train_eval = train.head(cfg.eval_subset);
  const Dataset<T> test_eval = test.head(cfg.eval_subset);
  const auto pgd10 = parse_attack("pgd10", cfg.epsilon);
  OverfitMonitor monitor;
  const std::size_t batches_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_batches = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::size_t global_batch = 0;
  double best_acc = -1;

  auto emit = [&](MetricsRecord r) {
    if (!cfg.record_wall_clock) r.wall_ms = 0;
    result.metrics.push_back(r);
    if (hooks.on_record) hooks.on_record(r);
  };
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    auto batches = make_batches(train.size(), cfg.batch_size, &rng);
    if (hooks.max_batches) batches.resize(std::min(batches.size(), hooks.max_batches));
    int gen_updates = 0;
    std::size_t seen = 0, correct = 0;
    double loss_sum = 0;
    for (std::size_t i = 1; i <= batches.size(); ++i, ++global_batch) {
      const auto batch = train.gather(batches[i - 1], i);
      stats::InputGradientCounter counter;
      BatchTrace bt{epoch, i, 0, false, learning_rate(cfg, epoch, global_batch, total_batches)};
      Perturbation<T> delta;
      constexpr auto kBn = BatchNormMode::kBatchStats;
      switch (cfg.method) {
        case Method::kPgdAt:
        case Method::kPgd2At:
        case Method::kPgd4At:
          delta = pgd<T>(net, batch, atk, rng, nullptr, kBn);
          break;
        case Method::kFgsmAt:
          delta = fgsm(net, batch, atk, kBn);
          break;
        case Method::kFgsmRs:
          delta = fgsm_rs(net, batch, atk, rng, kBn);
          break;
        case Method::kFgsmSdi: {
          const auto s = signed_gradient(net, batch, kBn);
          if (i % static_cast<std::size_t>(cfg.k) == 0) {
            generator_ascent_step(*result.generator, net, batch, s, atk, *gen_opt, kBn);
            bt.generator_update = true;
            ++gen_updates;
          }
          delta = sdi_perturbation(net, *result.generator, batch, s, atk, {kBn, {BatchNormMode::kTrain, false}});
          break;
        }
      }
      bt.input_gradients = counter.count();
      const Tensor<T> adv = apply_perturbation(batch.images, delta);
      {
        auto d = delta.delta.data();
        auto a = adv.data();
        for (T v : d) bt.max_abs_delta = std::max(bt.max_abs_delta, static_cast<double>(std::abs(v)));
        bt.min_adv = *std::min_element(a.begin(), a.end());
        bt.max_adv = *std::max_element(a.begin(), a.end());
      }

      Graph<T> g;
      auto logits = net.forward(g, adv, {BatchNormMode::kTrain, true});
      auto loss = softmax_cross_entropy(g, logits, batch.labels);
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(i));
      }
      opt.zero_grad();
      g.backward(loss);
      opt.set_lr(bt.lr);
      opt.step();
      opt.zero_grad();

      auto z = logits.data();
      const std::size_t c = logits.dim(1);
      for (std::size_t r = 0; r < batch.size(); ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
          if (z[r * c + j] > z[r * c + best]) best = j;
        correct += best == static_cast<std::size_t>(batch.labels[r]) ? 1 : 0;
      }
      seen += batch.size();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      result.trace.push_back(bt);
    }
    const double train_ms = ms_since(t0);
    emit({epoch, "train", "adv", static_cast<double>(correct) / static_cast<double>(seen),
          loss_sum / static_cast<double>(seen), train_ms, gen_updates});
    if (!hooks.evaluate) continue;

    const std::uint64_t eval_seed = detail::derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(epoch));
    auto t1 = Clock::now();
    if (hooks.evaluate_train) {
      const auto train_pgd = evaluate_robust_accuracy(net, train_eval, {pgd10}, 100, eval_seed)[0];
      emit({epoch, "train", "pgd10", train_pgd.accuracy, train_pgd.loss, ms_since(t1), gen_updates});
      if (monitor.observe(train_pgd.accuracy)) result.overfit_epoch = monitor.triggered_epoch();
      t1 = Clock::now();
    }
    const auto clean = evaluate_robust_accuracy(net, test, {parse_attack("clean", cfg.epsilon)}, 100)[0];
    emit({epoch, "test", "clean", clean.accuracy, clean.loss, ms_since(t1), gen_updates});
    t1 = Clock::now();
    const auto test_pgd = evaluate_robust_accuracy(net, test_eval, {pgd10}, 100, eval_seed + 1)[0];
    emit({epoch, "test", "pgd10", test_pgd.accuracy, test_pgd.loss, ms_since(t1), gen_updates});

    if (test_pgd.accuracy > best_acc) {
      best_acc = test_pgd.accuracy;
      result.best_target = nn::snapshot(net.parameters());
      if (result.generator) result.best_generator = nn::snapshot(result.generator->parameters());
    }
  }
  if (hooks.evaluate) result.choice = select_best_checkpoint(result.metrics);
  return result;
}

namespace detail {

inline void require_method(const TrainConfig& cfg, Method m) {
  if (cfg.method != m) {
    throw ConfigError("expected method " + to_string(m) + ", got " + to_string(cfg.method));
  }
}

}  // namespace detail

template <typename T>
TrainResult<T> train_pgd_at(const TrainConfig& cfg, const Dataset<T>& tr, const Dataset<T>& te, const TrainHooks& h = {}) {
  detail::require_method(cfg, Method::kPgdAt);
  return train(cfg, tr, te, h);
}

template <typename T>
TrainResult<T> train_fgsm_rs(const TrainConfig& cfg, const Dataset<T>& tr, const Dataset<T>& te, const TrainHooks& h = {}) {
  detail::require_method(cfg, Method::kFgsmRs);
  return train(cfg, tr, te, h);
}

template <typename T>
TrainResult<T> train_fgsm_sdi(const TrainConfig& cfg, const Dataset<T>& tr, const Dataset<T>& te, const TrainHooks& h = {}) {
  detail::require_method(cfg, Method::kFgsmSdi);
  return train(cfg, tr, te, h);
}

template <typename T>
TrainResult<T> train_pgd2_at(const TrainConfig& cfg, const Dataset<T>& tr, const Dataset<T>& te, const TrainHooks& h = {}) {
  detail::require_method(cfg, Method::kPgd2At);
  return train(cfg, tr, te, h);
}

template <typename T>
TrainResult<T> train_pgd4_at(const TrainConfig& cfg, const Dataset<T>& tr, const Dataset<T>& te, const TrainHooks& h = {}) {
  detail::require_method(cfg, Method::kPgd4At);
  return train(cfg, tr, te, h);
}

}  // namespace advt
