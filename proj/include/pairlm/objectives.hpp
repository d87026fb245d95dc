// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairlm/ops.hpp"
#include "pairlm/rng.hpp"

namespace pairlm {

enum class ObjectiveKind { MLM, CLM, MNTP };

std::string to_string(ObjectiveKind k);
ObjectiveKind objective_from_string(const std::string& s);

struct SpecialTokens {
  std::int32_t pad = 0;
  std::int32_t mask = 1;
  std::int32_t eos = 2;

  bool is_special(std::int32_t id) const { return id == pad || id == mask || id == eos; }
};

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::CLM;
  double mask_ratio = 0.0;  // MLM/MNTP only
  SpecialTokens specials;

  void validate() const;
};

/// Model inputs plus supervision. labels[i] == kIgnoreLabel means position i
/// contributes nothing to the loss.
struct TargetBatch {
  std::vector<std::int32_t> input_ids;
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> masked_positions;  // empty for CLM
};

/// Independent Bernoulli(mask_ratio) over maskable tokens (non-special);
/// selected inputs become the mask token, labels carry the originals.
TargetBatch apply_mlm_mask(const std::vector<std::int32_t>& ids, const ObjectiveSpec& spec,
                           Rng& rng);

/// Next-token targets: label at i is ids[i+1], last position ignored. When
/// pad_id >= 0, positions at or predicting pad are ignored too, so trailing
/// padding carries no supervision.
TargetBatch clm_targets(const std::vector<std::int32_t>& ids, std::int32_t pad_id = -1);

/// Masked next-token prediction: masking as in MLM (position 0 never
/// maskable), but the original token of a masked position i supervises the
/// logits at position i-1.
TargetBatch mntp_targets(const std::vector<std::int32_t>& ids, const ObjectiveSpec& spec,
                         Rng& rng);

TargetBatch build_targets(const std::vector<std::int32_t>& ids, const ObjectiveSpec& spec,
                          Rng& rng);

/// Mean cross-entropy of the logits against the batch labels.
template <typename S>
CrossEntropyResult<S> objective_loss(const Tensor<S>& logits, const TargetBatch& batch) {
  if (static_cast<std::size_t>(logits.rows()) != batch.labels.size())
    throw InputError("objective_loss: logits/labels length mismatch");
  return cross_entropy(logits, batch.labels);
}

}  // namespace pairlm
