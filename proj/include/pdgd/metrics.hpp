#pragma once

#include <span>
#include <string>
#include <vector>

namespace pdgd {

using Words = std::vector<std::string>;

double hits_at_1(std::span<const std::size_t> predicted, std::span<const std::size_t> gold);

// Clipped-count unigram F1; 0 when either side is empty.
double unigram_f1(const Words& hypothesis, const Words& reference);

// Sentence BLEU-4 with brevity penalty. Orders with no matches get add-one
// smoothing on both numerator and denominator.
double bleu4(const Words& hypothesis, const Words& reference);

std::size_t lcs_length(const Words& a, const Words& b);

constexpr double kRougeBetaSquared = 1.2;
// LCS F-measure: (1 + b2) P R / (R + b2 P).
double rouge_l(const Words& hypothesis, const Words& reference, double beta_squared = kRougeBetaSquared);

// Distinct n-grams over all n-grams, pooled over the corpus. 0 when no n-gram exists.
double distinct_n(std::span<const Words> hypotheses, std::size_t n);

// exp of the mean negative log-probability.
double perplexity_from_log_probs(std::span<const double> token_log_probs);

}  // namespace pdgd
