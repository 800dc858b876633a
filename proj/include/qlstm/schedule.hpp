// schedule.hpp - learning-rate schedules
//
// lr_at is a pure piecewise function of (epoch, step_fraction). Schedules:
//   constant              lr0 everywhere
//   step_anneal           lr0 until start_epoch, then * factor each epoch
//   warmup_scaled         linear ramp to lr0 across the warm-up epochs
//   one_cycle             triangular ramp peak/25 -> peak -> peak/2500
//   linear_decay_half     lr0 -> 0.5*lr0 linearly over total_epochs
//   geometric_decay_half  lr0 * 0.5^(t/total_epochs) (the multiplicative
//                         reading of the same policy, selectable in config)
//   custom_decreasing     lr0 -> lr_min linearly over decay_epochs, then flat
#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "qlstm/errors.hpp"

namespace qlstm::train {

enum class ScheduleKind {
  kConstant,
  kStepAnneal,
  kWarmupScaled,
  kOneCycle,
  kLinearDecayHalf,
  kGeometricDecayHalf,
  kCustomDecreasing,
};

struct LRSchedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double lr0 = 0.1;
  double anneal_factor = 1.0 / std::numbers::sqrt2;
  int anneal_start_epoch = 10;
  int warmup_epochs = 10;
  double peak = 0.1;      // one_cycle
  int total_epochs = 20;  // one_cycle / *_decay_half horizon
  double lr_min = 1e-5;   // custom_decreasing floor
  int decay_epochs = 8;

  void validate() const {
    if (lr0 <= 0 || peak <= 0 || lr_min <= 0)
      throw ConfigError("learning rates must be positive");
    if (anneal_factor <= 0 || anneal_factor >= 1)
      throw ConfigError("anneal factor must be in (0,1)");
    if (warmup_epochs < 1 || total_epochs < 1 || decay_epochs < 1)
      throw ConfigError("schedule horizons must be >= 1");
  }
};

inline double lr_at(const LRSchedule& s, int epoch, double step_fraction = 0.0) {
  if (epoch < 0 || step_fraction < 0.0 || step_fraction >= 1.0)
    throw ConfigError("lr_at: epoch >= 0 and step_fraction in [0,1) required");
  const double t = epoch + step_fraction;
  switch (s.kind) {
    case ScheduleKind::kConstant:
      return s.lr0;
    case ScheduleKind::kStepAnneal:
      if (epoch < s.anneal_start_epoch) return s.lr0;
      return s.lr0 * std::pow(s.anneal_factor, epoch - s.anneal_start_epoch + 1);
    case ScheduleKind::kWarmupScaled:
      if (t < s.warmup_epochs) return s.lr0 * (t + 1.0) / (s.warmup_epochs + 1.0);
      return s.lr0;
    case ScheduleKind::kOneCycle: {
      const double lo = s.peak / 25.0, end = s.peak / 2500.0;
      double u = std::min(t / s.total_epochs, 1.0);
      if (u <= 0.5) return lo + (s.peak - lo) * (u / 0.5);
      return s.peak + (end - s.peak) * ((u - 0.5) / 0.5);
    }
    case ScheduleKind::kLinearDecayHalf:
      return s.lr0 * (1.0 - 0.5 * std::min(t / s.total_epochs, 1.0));
    case ScheduleKind::kGeometricDecayHalf:
      return s.lr0 * std::pow(0.5, std::min(t / s.total_epochs, 1.0));
    case ScheduleKind::kCustomDecreasing:
      if (t >= s.decay_epochs) return s.lr_min;
      return s.lr0 + (s.lr_min - s.lr0) * (t / s.decay_epochs);
  }
  throw ConfigError("unknown schedule kind");
}

inline ScheduleKind schedule_kind_from(const std::string& name) {
  if (name == "constant") return ScheduleKind::kConstant;
  if (name == "step_anneal") return ScheduleKind::kStepAnneal;
  if (name == "warmup_scaled") return ScheduleKind::kWarmupScaled;
  if (name == "one_cycle") return ScheduleKind::kOneCycle;
  if (name == "linear_decay_half") return ScheduleKind::kLinearDecayHalf;
  if (name == "geometric_decay_half") return ScheduleKind::kGeometricDecayHalf;
  if (name == "custom_decreasing") return ScheduleKind::kCustomDecreasing;
  throw ConfigError("unknown schedule kind: " + name);
}

}  // namespace qlstm::train
