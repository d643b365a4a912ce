#pragma once

#include <cstdint>
#include <string>

namespace par {

enum class ScheduleKind { par_custom, cosine, constant };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

/// Learning-rate schedule over [0, total_steps]. par_custom decays
/// linearly from start_lr to mid_lr at mid_step, then follows a cosine
/// segment down to final_lr; cosine decays start_lr -> final_lr over the
/// whole range; constant stays at start_lr.
struct Schedule {
  ScheduleKind kind = ScheduleKind::par_custom;
  double start_lr = 3e-5;
  double mid_lr = 3e-6;
  double final_lr = 1e-9;
  long total_steps = 0;
  long mid_step = 0;  // default: total_steps / 2 when left at 0
};

/// Throws std::invalid_argument on non-positive rates or a mid_step
/// outside (0, total_steps).
void validate(const Schedule& schedule);

/// Learning rate at `step`; throws std::out_of_range outside
/// [0, total_steps]. Continuous at mid_step by construction.
double lr_at(const Schedule& schedule, long step);

}  // namespace par
