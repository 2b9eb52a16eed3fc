#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "advt/errors.hpp"

namespace advt {

struct ScheduleConfig {
  enum class Kind { kMultiStep, kCyclic };
  Kind kind = Kind::kMultiStep;
  /// 1-based epochs at which the rate is multiplied by `factor`.
  std::vector<int> milestones;
  double factor = 0.1;
  double max_lr = 0.2;
};

inline std::string to_string(ScheduleConfig::Kind k) {
  return k == ScheduleConfig::Kind::kMultiStep ? "multistep" : "cyclic";
}

inline ScheduleConfig::Kind parse_schedule_kind(const std::string& s) {
  if (s == "multistep") return ScheduleConfig::Kind::kMultiStep;
  if (s == "cyclic") return ScheduleConfig::Kind::kCyclic;
  throw ConfigError("unknown schedule '" + s + "' (expected multistep or cyclic)");
}

/// Milestones of the 110-epoch protocol (decay at epochs 100 and 105),
/// scaled to `epochs`.
inline std::vector<int> default_milestones(int epochs) {
  std::vector<int> out;
  for (int m : {epochs * 100 / 110, epochs * 105 / 110}) {
    if (m >= 1 && m < epochs && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

/// Learning rate for 1-based `epoch`: base * factor^(number of milestones <= epoch).
inline double multistep_lr(double base, const std::vector<int>& milestones, double factor, int epoch) {
  double lr = base;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

/// Triangle 0 -> max_lr -> 0 over [0, total]; `step` is clamped to the range.
inline double cyclic_lr(double max_lr, double step, double total) {
  if (total <= 0) throw ConfigError("cyclic_lr: total steps must be positive");
  const double t = std::min(std::max(step / total, 0.0), 1.0);
  return max_lr * (1.0 - std::abs(2.0 * t - 1.0));
}

}  // namespace advt
