#pragma once

#include <string>
#include <string_view>

#include "rollforge/core/model.hpp"

namespace rollforge::core {

// Deterministic text <-> token id mapping injected wherever text meets tokens.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual TokenSeq encode(std::string_view text) const = 0;
  virtual std::string decode(const TokenSeq& tokens) const = 0;
};

// One token per byte (ids 0..255).
class ByteTokenizer final : public Tokenizer {
 public:
  TokenSeq encode(std::string_view text) const override;
  std::string decode(const TokenSeq& tokens) const override;
};

}  // namespace rollforge::core
