// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pairlm {

enum class SegmentKind { LinearWarmup, Constant, InverseSqrtDecay };

struct ScheduleSegment {
  SegmentKind kind = SegmentKind::Constant;
  std::uint64_t token_span = 0;
  double lr_start = 0.0;
  double lr_end = 0.0;
};

/// Piecewise learning-rate schedule on a tokens-seen axis plus a linear
/// batch-size ramp. Segments are contiguous and continuous at boundaries.
struct ScheduleSpec {
  std::vector<ScheduleSegment> segments;
  std::uint64_t bs_warmup_tokens = 0;
  long bs_min = 1;
  long bs_full = 1;

  std::uint64_t total_tokens() const;
  void validate() const;
};

struct LrValue {
  double lr = 0.0;
  bool clamped = false;  // set when tokens fell beyond the schedule span
};

/// LR at a token position. Warmup is linear to lr_end; inverse-sqrt decay over
/// span T from a to b follows a / sqrt(1 + k t / T) with k = (a/b)^2 - 1, so
/// both endpoints are hit exactly.
LrValue lr_at(const ScheduleSpec& spec, std::uint64_t tokens);

/// Sequences per step: integer linear ramp from bs_min to bs_full over
/// bs_warmup_tokens (rounded down), constant afterwards, never below 1.
long batch_size_at(const ScheduleSpec& spec, std::uint64_t tokens);

/// Size-dependent knobs entering the recipe schedule.
struct ScheduleParams {
  double peak_lr = 0.0;
  std::uint64_t warmup_tokens = 0;
  std::uint64_t bs_warmup_tokens = 0;
  long bs_min = 1;
  long bs_full = 1;
};

struct PhaseBudgets {
  std::uint64_t pretrain = 0;
  std::uint64_t midtrain = 0;
  std::uint64_t decay = 0;
};

/// Three-phase recipe: linear warmup then constant within the pretrain
/// budget; inverse-sqrt peak -> 0.5 peak over mid-training; inverse-sqrt
/// 0.5 peak -> 0.02 peak over the decay budget.
ScheduleSpec recipe_schedule(const ScheduleParams& p, const PhaseBudgets& budgets);

/// Fresh trapezoid for continued pre-training on the reverse objective:
/// warmup over 3/50 of the budget, decay over the final 10/50, constant
/// between, ending at 0.02 peak.
ScheduleSpec cross_objective_schedule(const ScheduleParams& p, std::uint64_t budget);

/// Plain-text (tokens, lr, batch_size) table for plotting.
std::string dump_schedule(const ScheduleSpec& spec, int rows_per_segment = 8);

}  // namespace pairlm
