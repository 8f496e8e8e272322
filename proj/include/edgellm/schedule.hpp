#pragma once

#include <cmath>
#include <cstdint>

#include "edgellm/common.hpp"

namespace edgellm {

// Linear warmup to max_lr, then cosine decay to final_lr at total_steps.
struct LRSchedule {
  double max_lr = 4e-4;
  double final_lr = 0.0;
  int64_t warmup_steps = 10000;
  int64_t total_steps = 640000;

  void validate() const {
    if (max_lr < 0.0 || final_lr < 0.0 || final_lr > max_lr) {
      throw ConfigError("LRSchedule: require 0 <= final_lr <= max_lr");
    }
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
      throw ConfigError("LRSchedule: require 0 <= warmup_steps < total_steps");
    }
  }
};

inline double lr_at(int64_t step, const LRSchedule& s) {
  s.validate();
  if (step < 0 || step > s.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(s.total_steps) + "]");
  }
  if (step < s.warmup_steps) {
    return s.max_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.final_lr + 0.5 * (s.max_lr - s.final_lr) * (1.0 + std::cos(M_PI * progress));
}

}  // namespace edgellm
