// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairlm/objectives.hpp"

namespace pairlm {

struct TokenizedDoc {
  std::string doc_id;
  std::vector<std::int32_t> ids;
};

/// Byte-level tokenizer (exact round trip, one token per byte offset by the
/// special count) with an optional external greedy longest-match vocabulary
/// for fidelity runs against a real subword inventory.
class Tokenizer {
 public:
  enum class Mode { ByteLevel, ExternalVocab };

  static Tokenizer byte_level();
  /// Vocabulary file: JSON {"tokens": ["...", ...]}; ids follow the special
  /// block in file order. Decoding requires the match to be unique only in
  /// byte_level mode; external mode decodes by concatenation.
  static Tokenizer external_vocab(const std::string& vocab_path);

  Mode mode() const { return mode_; }
  const SpecialTokens& specials() const { return specials_; }
  std::int32_t vocab_size() const { return vocab_size_; }
  /// Token id of "\n" (used by the newline-stop generation variant).
  std::int32_t newline_id() const;

  std::vector<std::int32_t> encode(const std::string& text) const;
  std::string decode(const std::vector<std::int32_t>& ids) const;
  TokenizedDoc tokenize(const std::string& doc_id, const std::string& text) const;

 private:
  Tokenizer() = default;
  static constexpr std::int32_t kNumSpecials = 3;  // pad, mask, eos

  Mode mode_ = Mode::ByteLevel;
  SpecialTokens specials_;
  std::int32_t vocab_size_ = 0;
  std::vector<std::string> tokens_;  // external mode only
};

}  // namespace pairlm
