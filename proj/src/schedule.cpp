#include "par/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace par {

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::par_custom: return "par_custom";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::constant: return "constant";
  }
  throw std::logic_error("to_string: bad ScheduleKind");
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "par_custom") return ScheduleKind::par_custom;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "constant") return ScheduleKind::constant;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

void validate(const Schedule& schedule) {
  if (schedule.start_lr <= 0.0 || schedule.mid_lr <= 0.0 || schedule.final_lr <= 0.0) {
    throw std::invalid_argument("schedule: learning rates must be strictly positive");
  }
  if (schedule.total_steps < 1) {
    throw std::invalid_argument("schedule: total_steps must be >= 1");
  }
  if (schedule.mid_step < 0) {
    throw std::invalid_argument("schedule: mid_step must not be negative");
  }
  if (schedule.kind == ScheduleKind::par_custom) {
    const long mid = schedule.mid_step > 0 ? schedule.mid_step : schedule.total_steps / 2;
    if (mid <= 0 || mid >= schedule.total_steps) {
      throw std::invalid_argument("schedule: mid_step must lie strictly inside (0, total_steps)");
    }
  }
}

double lr_at(const Schedule& schedule, long step) {
  validate(schedule);
  if (step < 0 || step > schedule.total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(schedule.total_steps) + "]");
  }
  switch (schedule.kind) {
    case ScheduleKind::constant:
      return schedule.start_lr;
    case ScheduleKind::cosine: {
      if (step == 0) return schedule.start_lr;
      if (step == schedule.total_steps) return schedule.final_lr;
      const double t = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
      return schedule.final_lr +
             (schedule.start_lr - schedule.final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
    case ScheduleKind::par_custom: {
      const long mid = schedule.mid_step > 0 ? schedule.mid_step : schedule.total_steps / 2;
      if (step == 0) return schedule.start_lr;
      if (step == mid) return schedule.mid_lr;
      if (step == schedule.total_steps) return schedule.final_lr;
      if (step < mid) {
        const double t = static_cast<double>(step) / static_cast<double>(mid);
        return schedule.start_lr + (schedule.mid_lr - schedule.start_lr) * t;
      }
      const double t =
          static_cast<double>(step - mid) / static_cast<double>(schedule.total_steps - mid);
      return schedule.final_lr +
             (schedule.mid_lr - schedule.final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
  }
  throw std::logic_error("lr_at: bad ScheduleKind");
}

}  // namespace par
