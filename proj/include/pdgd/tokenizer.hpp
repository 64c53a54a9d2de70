#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pdgd {

using TokenId = int;

// Reserved ids shared by every tokenizer: specials occupy the first slots of
// the vocabulary in this order.
enum class Special : TokenId {
  kPad = 0,
  kUnk,
  kCls,
  kEsp,   // separates context from knowledge in the planner input
  kSep,   // separates segments in classifier inputs
  kBos,
  kEos,
  kMiningInitial,  // topic-intent markers for the topic classifier input
  kStartingNew,
  kFollowingNew,
};
inline constexpr std::size_t kNumSpecials = 10;

inline TokenId special_id(Special s) { return static_cast<TokenId>(s); }

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  // Never returns an empty sequence: empty text encodes to a single <unk>.
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual const std::string& token(TokenId id) const = 0;
  // Stable hex digest of the tokenizer kind and vocabulary.
  virtual std::string identity() const = 0;
  virtual std::vector<std::string> vocabulary() const = 0;
};

// Lowercases, splits on whitespace, maps unknown words to <unk>.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  // Builds a vocabulary from raw texts: specials first, then words by
  // descending frequency, ties broken lexicographically.
  static WhitespaceTokenizer build(std::span<const std::string> texts, std::size_t min_count = 1);
  // Restores from a full vocabulary list (including the specials).
  static WhitespaceTokenizer from_vocabulary(std::vector<std::string> vocab);

  std::vector<TokenId> encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return vocab_.size(); }
  const std::string& token(TokenId id) const override;
  std::string identity() const override;
  std::vector<std::string> vocabulary() const override { return vocab_; }

  static constexpr std::string_view kKind = "whitespace-lowercase";

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
};

// Whitespace split after ASCII lowercasing; shared by the tokenizer and
// the metrics so both see the same word boundaries.
std::vector<std::string> split_words(std::string_view text);

std::string sha256_hex(std::string_view data);

}  // namespace pdgd
