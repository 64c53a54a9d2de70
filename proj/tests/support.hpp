#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pdgd/autograd.hpp"
#include "pdgd/corpus.hpp"
#include "pdgd/nn.hpp"
#include "pdgd/synthetic.hpp"
#include "pdgd/tokenizer.hpp"

namespace testing {

using pdgd::Matrix;
using pdgd::Parameter;
using pdgd::Tape;
using pdgd::Var;

inline pdgd::TransformerShape tiny_shape() { return pdgd::TransformerShape{16, 1, 2, 32}; }

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  pdgd::Rng rng(seed);
  return pdgd::random_normal(r, c, scale, rng);
}

struct GradientReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences against the tape's gradient for every listed entry of
// every parameter (all entries when `per_param` is 0, else the first few
// plus a strided sample).
inline GradientReport check_gradients(const std::vector<Parameter*>& params,
                                      const std::function<Var(Tape&)>& loss, double h = 1e-5,
                                      std::size_t per_param = 0) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  std::vector<Matrix> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  auto eval = [&] {
    Tape tape(false);
    return loss(tape).scalar();
  };
  GradientReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const Eigen::Index n = p.value.size();
    Eigen::Index stride = 1;
    if (per_param > 0 && static_cast<Eigen::Index>(per_param) < n)
      stride = std::max<Eigen::Index>(1, n / static_cast<Eigen::Index>(per_param));
    for (Eigen::Index i = 0; i < n; i += stride) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k].data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked;
    }
  }
  for (auto* p : params) p->zero_grad();
  return report;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

// ---- Corpus fixtures ------------------------------------------------------------

inline const char* kTwoTopicDialogue = R"({"id": "d1", "initial_topic": "bees",
  "knowledge": [
    {"topic": "bees", "text": "bees make honey from nectar"},
    {"topic": "bees", "text": "a hive has one queen"},
    {"topic": "wasps", "text": "wasps build paper nests"}
  ],
  "turns": [
    {"speaker": "user", "text": "tell me about bees", "da": "directive", "topic_intent": "mining_initial"},
    {"speaker": "agent", "text": "bees make honey", "grounding": 0, "da": "inform", "topic_intent": "mining_initial"},
    {"speaker": "user", "text": "what about wasps", "da": "question", "topic_intent": "mining_initial"},
    {"speaker": "agent", "text": "wasps build nests from paper", "grounding": 2, "da": "inform", "topic_intent": "starting_new"}
  ]})";

inline pdgd::WhitespaceTokenizer tokenizer_for(const std::vector<pdgd::Dialogue>& raw) {
  const auto texts = pdgd::corpus_texts(raw);
  return pdgd::WhitespaceTokenizer::build(texts);
}

inline std::vector<pdgd::Dialogue> tokenized(std::vector<pdgd::Dialogue> dialogues, const pdgd::Tokenizer& tok) {
  for (auto& d : dialogues) pdgd::tokenize_dialogue(d, tok);
  return dialogues;
}

// ---- Brute-force metric oracles -------------------------------------------------
// Deliberately naive: linear scans over n-gram lists, recursive LCS.

using Words = std::vector<std::string>;

inline std::vector<Words> grams_of(const Words& w, std::size_t n) {
  std::vector<Words> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) out.emplace_back(w.begin() + i, w.begin() + i + n);
  return out;
}

inline std::size_t count_in(const std::vector<Words>& list, const Words& g) {
  return static_cast<std::size_t>(std::count(list.begin(), list.end(), g));
}

inline std::size_t oracle_clipped(const Words& hyp, const Words& ref, std::size_t n) {
  const auto h = grams_of(hyp, n);
  const auto r = grams_of(ref, n);
  std::vector<Words> seen;
  std::size_t total = 0;
  for (const auto& g : h) {
    if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
    seen.push_back(g);
    total += std::min(count_in(h, g), count_in(r, g));
  }
  return total;
}

inline double oracle_f1(const Words& hyp, const Words& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double c = static_cast<double>(oracle_clipped(hyp, ref, 1));
  if (c == 0) return 0.0;
  const double p = c / hyp.size(), r = c / ref.size();
  return 2 * p * r / (p + r);
}

inline double oracle_bleu(const Words& hyp, const Words& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  double product = 1.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    double m = static_cast<double>(oracle_clipped(hyp, ref, n));
    double t = static_cast<double>(grams_of(hyp, n).size());
    if (m == 0) {
      m = 1;
      t = t + 1;
    }
    product *= m / t;
  }
  const double bp = hyp.size() > ref.size() ? 1.0 : std::exp(1.0 - double(ref.size()) / double(hyp.size()));
  return bp * std::pow(product, 0.25);
}

inline std::size_t oracle_lcs(const Words& a, const Words& b, std::size_t i, std::size_t j,
                              std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == a.size() || j == b.size()) return 0;
  auto key = std::make_pair(i, j);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  std::size_t v = a[i] == b[j] ? 1 + oracle_lcs(a, b, i + 1, j + 1, memo)
                               : std::max(oracle_lcs(a, b, i + 1, j, memo), oracle_lcs(a, b, i, j + 1, memo));
  memo[key] = v;
  return v;
}

inline double oracle_rouge(const Words& hyp, const Words& ref, double beta2 = 1.2) {
  if (hyp.empty() || ref.empty()) return 0.0;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  const double l = static_cast<double>(oracle_lcs(hyp, ref, 0, 0, memo));
  if (l == 0) return 0.0;
  const double p = l / hyp.size(), r = l / ref.size();
  return (1 + beta2) * p * r / (r + beta2 * p);
}

inline double oracle_distinct(const std::vector<Words>& hyps, std::size_t n) {
  std::vector<Words> all;
  for (const auto& h : hyps)
    for (auto& g : grams_of(h, n)) all.push_back(g);
  if (all.empty()) return 0.0;
  std::vector<Words> unique;
  for (const auto& g : all)
    if (std::find(unique.begin(), unique.end(), g) == unique.end()) unique.push_back(g);
  return static_cast<double>(unique.size()) / static_cast<double>(all.size());
}

inline double oracle_perplexity(const std::vector<double>& log_probs) {
  double s = 0;
  for (double lp : log_probs) s += lp;
  return std::exp(-s / log_probs.size());
}

inline Words random_words(pdgd::Rng& rng, std::size_t max_len, std::size_t vocab) {
  const std::size_t len = rng() % (max_len + 1);
  Words w;
  for (std::size_t i = 0; i < len; ++i) w.push_back("w" + std::to_string(rng() % vocab));
  return w;
}

// ---- Span oracles ---------------------------------------------------------------

// Per-position vote: each covered position counts for the entry holding it.
inline std::optional<std::size_t> oracle_revise(std::size_t s, std::size_t e, const std::vector<pdgd::Span>& entries) {
  auto holder = [&](std::size_t p) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].start <= p && p <= entries[i].end) return i;
    return std::nullopt;
  };
  if (s > e) {
    if (auto h = holder(s)) return h;
    return holder(e);
  }
  std::vector<std::size_t> votes(entries.size(), 0);
  for (std::size_t p = s; p <= e; ++p)
    if (auto h = holder(p)) ++votes[*h];
  std::size_t best = 0;
  for (std::size_t i = 1; i < votes.size(); ++i)
    if (votes[i] > votes[best]) best = i;
  if (votes.empty() || votes[best] == 0) return std::nullopt;
  return best;
}

// Random contiguous segmentation of [begin, begin + total).
inline std::vector<pdgd::Span> random_segmentation(pdgd::Rng& rng, std::size_t begin, std::size_t entries,
                                                   std::size_t max_len) {
  std::vector<pdgd::Span> out;
  std::size_t pos = begin;
  for (std::size_t i = 0; i < entries; ++i) {
    const std::size_t len = 1 + rng() % max_len;
    out.push_back(pdgd::Span{pos, pos + len - 1});
    pos += len;
  }
  return out;
}

// A tokenizer with exactly `size` entries, for checkpointing synthetic-id models.
inline pdgd::WhitespaceTokenizer tokenizer_of_size(int size) {
  std::vector<std::string> words;
  for (int i = static_cast<int>(pdgd::kNumSpecials); i < size; ++i) words.push_back("w" + std::to_string(i));
  return pdgd::WhitespaceTokenizer::build(words);
}

// Training examples of a small synthetic corpus, plus its tokenizer.
struct SyntheticSet {
  pdgd::WhitespaceTokenizer tokenizer;
  std::vector<pdgd::TrainingExample> examples;
};

inline SyntheticSet synthetic_set(std::size_t dialogues, std::uint64_t seed = 7) {
  pdgd::SyntheticOptions opt;
  opt.dialogues = dialogues;
  opt.seed = seed;
  std::vector<pdgd::Dialogue> raw;
  std::size_t line = 0;
  for (const auto& rec : pdgd::synthetic_corpus(opt)) raw.push_back(pdgd::dialogue_from_json(rec, ++line));
  auto tok = tokenizer_for(raw);
  auto ds = tokenized(raw, tok);
  return SyntheticSet{tok, pdgd::build_examples(ds).examples};
}

}  // namespace testing
