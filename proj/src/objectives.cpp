// SPDX-License-Identifier: Apache-2.0
#include "pairlm/objectives.hpp"

#include "pairlm/errors.hpp"

namespace pairlm {

std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::MLM: return "mlm";
    case ObjectiveKind::CLM: return "clm";
    case ObjectiveKind::MNTP: return "mntp";
  }
  return "?";
}

ObjectiveKind objective_from_string(const std::string& s) {
  if (s == "mlm") return ObjectiveKind::MLM;
  if (s == "clm") return ObjectiveKind::CLM;
  if (s == "mntp") return ObjectiveKind::MNTP;
  throw ConfigError("unknown objective: " + s);
}

void ObjectiveSpec::validate() const {
  if (kind == ObjectiveKind::CLM) return;
  if (!(mask_ratio > 0.0 && mask_ratio <= 1.0))
    throw ConfigError("objective: mask_ratio must be in (0,1] for " + to_string(kind));
}

namespace {

// Masking core shared by MLM and MNTP; min_pos excludes positions without a
// previous hidden state for the MNTP shift.
TargetBatch mask_targets(const std::vector<std::int32_t>& ids, const ObjectiveSpec& spec,
                         Rng& rng, std::size_t min_pos, bool shift_left) {
  spec.validate();
  bool any_maskable = false;
  for (std::size_t i = min_pos; i < ids.size(); ++i)
    if (!spec.specials.is_special(ids[i])) {
      any_maskable = true;
      break;
    }
  if (!any_maskable) throw InputError("masking: sequence has no maskable token");

  TargetBatch out;
  out.input_ids = ids;
  out.labels.assign(ids.size(), kIgnoreLabel);
  for (std::size_t i = min_pos; i < ids.size(); ++i) {
    if (spec.specials.is_special(ids[i])) continue;
    if (!rng.bernoulli(spec.mask_ratio)) continue;
    out.masked_positions.push_back(i);
    const std::int32_t original = ids[i];
    out.input_ids[i] = spec.specials.mask;
    out.labels[shift_left ? i - 1 : i] = original;
  }
  return out;
}

}  // namespace

TargetBatch apply_mlm_mask(const std::vector<std::int32_t>& ids, const ObjectiveSpec& spec,
                           Rng& rng) {
  if (spec.kind != ObjectiveKind::MLM) throw UsageError("apply_mlm_mask: spec is not MLM");
  return mask_targets(ids, spec, rng, 0, /*shift_left=*/false);
}

TargetBatch clm_targets(const std::vector<std::int32_t>& ids, std::int32_t pad_id) {
  if (ids.size() < 2) throw InputError("clm_targets: need at least 2 tokens");
  TargetBatch out;
  out.input_ids = ids;
  out.labels.assign(ids.size(), kIgnoreLabel);
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
    if (pad_id >= 0 && (ids[i] == pad_id || ids[i + 1] == pad_id)) continue;
    out.labels[i] = ids[i + 1];
  }
  return out;
}

TargetBatch mntp_targets(const std::vector<std::int32_t>& ids, const ObjectiveSpec& spec,
                         Rng& rng) {
  if (spec.kind != ObjectiveKind::MNTP) throw UsageError("mntp_targets: spec is not MNTP");
  if (ids.size() < 2) throw InputError("mntp_targets: need at least 2 tokens");
  return mask_targets(ids, spec, rng, 1, /*shift_left=*/true);
}

TargetBatch build_targets(const std::vector<std::int32_t>& ids, const ObjectiveSpec& spec,
                          Rng& rng) {
  switch (spec.kind) {
    case ObjectiveKind::MLM: return apply_mlm_mask(ids, spec, rng);
    case ObjectiveKind::CLM: return clm_targets(ids);
    case ObjectiveKind::MNTP: return mntp_targets(ids, spec, rng);
  }
  throw UsageError("build_targets: unknown objective");
}

}  // namespace pairlm
