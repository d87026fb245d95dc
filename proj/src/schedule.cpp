// SPDX-License-Identifier: Apache-2.0
#include "pairlm/schedule.hpp"

#include <cmath>
#include <sstream>

#include "pairlm/errors.hpp"

namespace pairlm {

std::uint64_t ScheduleSpec::total_tokens() const {
  std::uint64_t t = 0;
  for (const auto& s : segments) t += s.token_span;
  return t;
}

void ScheduleSpec::validate() const {
  if (segments.empty()) throw ConfigError("schedule: no segments");
  double prev_end = segments.front().kind == SegmentKind::LinearWarmup
                        ? 0.0
                        : segments.front().lr_start;
  for (const auto& s : segments) {
    if (s.lr_start < 0.0 || s.lr_end < 0.0) throw ConfigError("schedule: negative lr");
    const double start = s.kind == SegmentKind::LinearWarmup ? 0.0 : s.lr_start;
    if (std::abs(start - prev_end) > 1e-12 * std::max(1.0, std::abs(prev_end)))
      throw ConfigError("schedule: lr discontinuity at segment boundary");
    if (s.kind == SegmentKind::InverseSqrtDecay && !(s.lr_end < s.lr_start))
      throw ConfigError("schedule: inverse-sqrt decay requires lr_end < lr_start");
    prev_end = s.kind == SegmentKind::Constant ? s.lr_start : s.lr_end;
  }
  if (bs_min < 1 || bs_full < bs_min)
    throw ConfigError("schedule: batch sizes must satisfy 1 <= bs_min <= bs_full");
}

LrValue lr_at(const ScheduleSpec& spec, std::uint64_t tokens) {
  LrValue out;
  std::uint64_t offset = 0;
  for (const auto& s : spec.segments) {
    if (s.token_span == 0) continue;
    if (tokens < offset + s.token_span || &s == &spec.segments.back()) {
      std::uint64_t local = tokens - offset;
      if (local > s.token_span) {  // beyond the total span: clamp to final value
        local = s.token_span;
        out.clamped = true;
      }
      const double frac =
          static_cast<double>(local) / static_cast<double>(s.token_span);
      switch (s.kind) {
        case SegmentKind::LinearWarmup:
          out.lr = s.lr_end * frac;
          return out;
        case SegmentKind::Constant:
          out.lr = s.lr_start;
          return out;
        case SegmentKind::InverseSqrtDecay: {
          if (local == s.token_span) {
            out.lr = s.lr_end;  // exact endpoint
            return out;
          }
          const double ratio = s.lr_start / s.lr_end;
          const double k = ratio * ratio - 1.0;
          out.lr = s.lr_start / std::sqrt(1.0 + k * frac);
          return out;
        }
      }
    }
    offset += s.token_span;
  }
  throw ConfigError("schedule: empty span");
}

long batch_size_at(const ScheduleSpec& spec, std::uint64_t tokens) {
  long bs;
  if (spec.bs_warmup_tokens == 0 || tokens >= spec.bs_warmup_tokens) {
    bs = spec.bs_full;
  } else {
    const double frac =
        static_cast<double>(tokens) / static_cast<double>(spec.bs_warmup_tokens);
    bs = spec.bs_min +
         static_cast<long>(std::floor(static_cast<double>(spec.bs_full - spec.bs_min) * frac));
  }
  return bs < 1 ? 1 : bs;
}

ScheduleSpec recipe_schedule(const ScheduleParams& p, const PhaseBudgets& budgets) {
  if (budgets.pretrain == 0 || budgets.midtrain == 0 || budgets.decay == 0)
    throw ConfigError("recipe_schedule: all phase budgets must be positive");
  if (p.warmup_tokens >= budgets.pretrain)
    throw ConfigError("recipe_schedule: warmup exceeds the pretrain budget");
  if (p.peak_lr <= 0.0) throw ConfigError("recipe_schedule: peak lr must be positive");
  ScheduleSpec s;
  if (p.warmup_tokens > 0)
    s.segments.push_back({SegmentKind::LinearWarmup, p.warmup_tokens, 0.0, p.peak_lr});
  s.segments.push_back(
      {SegmentKind::Constant, budgets.pretrain - p.warmup_tokens, p.peak_lr, p.peak_lr});
  s.segments.push_back(
      {SegmentKind::InverseSqrtDecay, budgets.midtrain, p.peak_lr, 0.5 * p.peak_lr});
  s.segments.push_back(
      {SegmentKind::InverseSqrtDecay, budgets.decay, 0.5 * p.peak_lr, 0.02 * p.peak_lr});
  s.bs_warmup_tokens = p.bs_warmup_tokens;
  s.bs_min = p.bs_min;
  s.bs_full = p.bs_full;
  s.validate();
  return s;
}

ScheduleSpec cross_objective_schedule(const ScheduleParams& p, std::uint64_t budget) {
  if (budget < 50) throw ConfigError("cross_objective_schedule: budget too small");
  if (p.peak_lr <= 0.0) throw ConfigError("cross_objective_schedule: peak lr must be positive");
  const std::uint64_t warmup = budget * 3 / 50;
  const std::uint64_t decay = budget * 10 / 50;
  ScheduleSpec s;
  if (warmup > 0)
    s.segments.push_back({SegmentKind::LinearWarmup, warmup, 0.0, p.peak_lr});
  s.segments.push_back(
      {SegmentKind::Constant, budget - warmup - decay, p.peak_lr, p.peak_lr});
  s.segments.push_back(
      {SegmentKind::InverseSqrtDecay, decay, p.peak_lr, 0.02 * p.peak_lr});
  s.bs_warmup_tokens = p.bs_warmup_tokens;
  s.bs_min = p.bs_min;
  s.bs_full = p.bs_full;
  s.validate();
  return s;
}

std::string dump_schedule(const ScheduleSpec& spec, int rows_per_segment) {
  std::ostringstream os;
  os << "tokens lr batch_size\n";
  auto emit = [&](std::uint64_t t) {
    os << t << " " << lr_at(spec, t).lr << " " << batch_size_at(spec, t) << "\n";
  };
  std::uint64_t offset = 0;
  for (const auto& s : spec.segments) {
    for (int i = 0; i < rows_per_segment; ++i)
      emit(offset + s.token_span * static_cast<std::uint64_t>(i) /
                        static_cast<std::uint64_t>(rows_per_segment));
    offset += s.token_span;
  }
  emit(offset);  // schedule end
  return os.str();
}

}  // namespace pairlm
