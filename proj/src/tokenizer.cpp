#include "pdgd/tokenizer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

#include "pdgd/error.hpp"

namespace pdgd {

namespace {

constexpr std::array<std::string_view, kNumSpecials> kSpecialNames = {
    "<pad>", "<unk>", "<cls>", "<esp>", "<sep>", "<bos>", "<eos>",
    "<ti_mining_initial>", "<ti_starting_new>", "<ti_following_new>"};

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

WhitespaceTokenizer WhitespaceTokenizer::build(std::span<const std::string> texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& w : split_words(text)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> words;
  for (auto& [w, c] : counts) {
    if (c < min_count) continue;
    if (std::find(kSpecialNames.begin(), kSpecialNames.end(), w) != kSpecialNames.end()) continue;
    words.emplace_back(w, c);
  }
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> vocab(kSpecialNames.begin(), kSpecialNames.end());
  for (auto& [w, c] : words) vocab.push_back(w);
  return from_vocabulary(std::move(vocab));
}

WhitespaceTokenizer WhitespaceTokenizer::from_vocabulary(std::vector<std::string> vocab) {
  if (vocab.size() < kNumSpecials) throw DataError("vocabulary is missing the special tokens");
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (vocab[i] != kSpecialNames[i]) throw DataError("vocabulary special tokens are out of order");
  }
  WhitespaceTokenizer tok;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto [it, inserted] = tok.index_.emplace(vocab[i], static_cast<TokenId>(i));
    if (!inserted) throw DataError("duplicate vocabulary entry '" + vocab[i] + "'");
  }
  tok.vocab_ = std::move(vocab);
  return tok;
}

std::vector<TokenId> WhitespaceTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? special_id(Special::kUnk) : it->second);
  }
  if (ids.empty()) ids.push_back(special_id(Special::kUnk));
  return ids;
}

std::string WhitespaceTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

const std::string& WhitespaceTokenizer::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size())
    throw ContractError("token id out of range: " + std::to_string(id));
  return vocab_[static_cast<std::size_t>(id)];
}

std::string WhitespaceTokenizer::identity() const {
  std::string blob(kKind);
  for (const auto& w : vocab_) {
    blob.push_back('\n');
    blob += w;
  }
  return sha256_hex(blob);
}

}  // namespace pdgd
