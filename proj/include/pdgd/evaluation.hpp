#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pdgd/generator.hpp"
#include "pdgd/metrics.hpp"
#include "pdgd/planner.hpp"
#include "pdgd/tokenizer.hpp"

namespace pdgd {

struct EvalRow {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::size_t predicted_entry = 0;
  std::size_t gold_entry = 0;
  PolicyLabel predicted_policy;
  PolicyLabel gold_policy;
  std::string hypothesis;
  std::string reference;
  double f1 = 0.0;
};

struct EvalReport {
  double hits_at_1 = 0.0;
  double da_accuracy = 0.0;
  double topic_accuracy = 0.0;
  double unigram_f1 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  double perplexity = 0.0;
  double token_accuracy = 0.0;  // teacher-forced argmax accuracy
  std::size_t n_examples = 0;
  std::string tokenizer_hash;
  std::vector<EvalRow> rows;
};

struct EvalOptions {
  DecodeOptions decode;
  double rouge_beta_squared = kRougeBetaSquared;
};

// Token strings of `ids`.
Words token_words(const Tokenizer& tokenizer, std::span<const TokenId> ids);

struct TeacherForcedSummary {
  double perplexity = 0.0;
  double token_accuracy = 0.0;
  std::size_t tokens = 0;
};
// Gold entry, gold policy, gold response (plus <eos>), pooled over examples.
TeacherForcedSummary teacher_forced_summary(const GeneratorModel& model, const std::vector<TrainingExample>& examples);
double perplexity(const GeneratorModel& model, const std::vector<TrainingExample>& examples);

// Planner picks entry and policy, generator decodes, every metric is computed.
EvalReport evaluate(const PlannerModel& planner, const GeneratorModel& generator,
                    const std::vector<TrainingExample>& examples, const Tokenizer& tokenizer,
                    const EvalOptions& options = {});

std::string report_json(const EvalReport& report);
void write_report_tsv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace pdgd
