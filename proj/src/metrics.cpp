#include "pdgd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "pdgd/error.hpp"

namespace pdgd {

namespace {

std::map<Words, std::size_t> ngram_counts(const Words& w, std::size_t n) {
  std::map<Words, std::size_t> counts;
  if (w.size() < n) return counts;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++counts[Words(w.begin() + static_cast<std::ptrdiff_t>(i),
                                                                w.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

std::size_t clipped_matches(const std::map<Words, std::size_t>& hyp, const std::map<Words, std::size_t>& ref) {
  std::size_t m = 0;
  for (const auto& [gram, c] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

}  // namespace

double hits_at_1(std::span<const std::size_t> predicted, std::span<const std::size_t> gold) {
  if (predicted.size() != gold.size()) throw ContractError("hits_at_1 needs equally long lists");
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double unigram_f1(const Words& hypothesis, const Words& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const std::size_t common = clipped_matches(ngram_counts(hypothesis, 1), ngram_counts(reference, 1));
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(common) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double bleu4(const Words& hypothesis, const Words& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const double total = hypothesis.size() >= n ? static_cast<double>(hypothesis.size() - n + 1) : 0.0;
    double matches = static_cast<double>(clipped_matches(ngram_counts(hypothesis, n), ngram_counts(reference, n)));
    double denom = total;
    if (matches == 0.0) {
      matches += 1.0;
      denom += 1.0;
    }
    log_sum += std::log(matches / denom);
  }
  const double c = static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Words& hypothesis, const Words& reference, double beta_squared) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hypothesis, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hypothesis.size());
  const double r = lcs / static_cast<double>(reference.size());
  return (1.0 + beta_squared) * p * r / (r + beta_squared * p);
}

double distinct_n(std::span<const Words> hypotheses, std::size_t n) {
  if (n == 0) throw ContractError("distinct_n needs n >= 1");
  std::set<Words> unique;
  std::size_t total = 0;
  for (const auto& h : hypotheses) {
    for (const auto& [gram, c] : ngram_counts(h, n)) {
      unique.insert(gram);
      total += c;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

double perplexity_from_log_probs(std::span<const double> token_log_probs) {
  if (token_log_probs.empty()) throw ContractError("perplexity of an empty token set");
  double nll = 0.0;
  for (double lp : token_log_probs) nll -= lp;
  return std::exp(nll / static_cast<double>(token_log_probs.size()));
}

}  // namespace pdgd
