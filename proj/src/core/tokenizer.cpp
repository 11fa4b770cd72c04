#include "rollforge/core/tokenizer.hpp"

namespace rollforge::core {

TokenSeq ByteTokenizer::encode(std::string_view text) const {
  TokenSeq out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<Token>(c));
  return out;
}

std::string ByteTokenizer::decode(const TokenSeq& tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) out.push_back(static_cast<char>(t & 0xff));
  return out;
}

}  // namespace rollforge::core
