#include "pdgd/evaluation.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pdgd/error.hpp"

namespace pdgd {

Words token_words(const Tokenizer& tokenizer, std::span<const TokenId> ids) {
  Words w;
  w.reserve(ids.size());
  for (TokenId id : ids) w.push_back(tokenizer.token(id));
  return w;
}

TeacherForcedSummary teacher_forced_summary(const GeneratorModel& model, const std::vector<TrainingExample>& examples) {
  if (examples.empty()) throw ContractError("teacher-forced statistics of an empty example set");
  std::vector<double> log_probs;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const auto in = gold_generator_input(ex, model.config().context_budget);
    auto stats = teacher_forced(model, in, ex.response_policy, ex.response);
    correct += stats.correct;
    log_probs.insert(log_probs.end(), stats.token_log_probs.begin(), stats.token_log_probs.end());
  }
  TeacherForcedSummary s;
  s.tokens = log_probs.size();
  s.perplexity = perplexity_from_log_probs(log_probs);
  s.token_accuracy = static_cast<double>(correct) / static_cast<double>(s.tokens);
  return s;
}

double perplexity(const GeneratorModel& model, const std::vector<TrainingExample>& examples) {
  return teacher_forced_summary(model, examples).perplexity;
}

EvalReport evaluate(const PlannerModel& planner, const GeneratorModel& generator,
                    const std::vector<TrainingExample>& examples, const Tokenizer& tokenizer,
                    const EvalOptions& options) {
  if (examples.empty()) throw DataError("no examples to evaluate");
  EvalReport report;
  report.n_examples = examples.size();
  report.tokenizer_hash = tokenizer.identity();
  std::vector<std::size_t> predicted, gold;
  std::vector<Words> hypotheses;
  std::size_t da_hits = 0, topic_hits = 0;
  double f1 = 0.0, bleu = 0.0, rouge = 0.0;
  for (const auto& ex : examples) {
    const auto sel = select_knowledge_over_chunks(planner, ex);
    const PolicyLabel policy = sel.predicted_policy();
    const auto in = generator_input(ex.candidates.entries[sel.entry].tokens, ex.context,
                                    generator.config().context_budget);
    const auto response = generate(generator, in, policy, options.decode);
    const Words hyp = token_words(tokenizer, response);
    const Words ref = token_words(tokenizer, ex.response);
    predicted.push_back(sel.entry);
    gold.push_back(ex.gold_entry);
    da_hits += policy.da == ex.response_policy.da;
    topic_hits += policy.topic_intent == ex.response_policy.topic_intent;
    EvalRow row{ex.dialogue_id, ex.turn_index, sel.entry, ex.gold_entry, policy, ex.response_policy,
                tokenizer.decode(response), tokenizer.decode(ex.response), unigram_f1(hyp, ref)};
    f1 += row.f1;
    bleu += bleu4(hyp, ref);
    rouge += rouge_l(hyp, ref, options.rouge_beta_squared);
    report.rows.push_back(std::move(row));
    hypotheses.push_back(hyp);
  }
  const double n = static_cast<double>(examples.size());
  report.hits_at_1 = hits_at_1(predicted, gold);
  report.da_accuracy = static_cast<double>(da_hits) / n;
  report.topic_accuracy = static_cast<double>(topic_hits) / n;
  report.unigram_f1 = f1 / n;
  report.bleu4 = bleu / n;
  report.rouge_l = rouge / n;
  report.distinct1 = distinct_n(hypotheses, 1);
  report.distinct2 = distinct_n(hypotheses, 2);
  const auto tf = teacher_forced_summary(generator, examples);
  report.perplexity = tf.perplexity;
  report.token_accuracy = tf.token_accuracy;
  return report;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["hits_at_1"] = r.hits_at_1;
  j["da_accuracy"] = r.da_accuracy;
  j["topic_accuracy"] = r.topic_accuracy;
  j["unigram_f1"] = r.unigram_f1;
  j["bleu4"] = r.bleu4;
  j["rouge_l"] = r.rouge_l;
  j["distinct1"] = r.distinct1;
  j["distinct2"] = r.distinct2;
  j["perplexity"] = r.perplexity;
  j["token_accuracy"] = r.token_accuracy;
  j["n_examples"] = r.n_examples;
  j["tokenizer_hash"] = r.tokenizer_hash;
  return j.dump(2) + "\n";
}

void write_report_tsv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "dialogue_id\tturn\tpredicted_entry\tgold_entry\tpredicted_da\tgold_da\tpredicted_topic_intent\t"
         "gold_topic_intent\tf1\thypothesis\treference\n";
  for (const auto& r : report.rows) {
    out << r.dialogue_id << '\t' << r.turn_index << '\t' << r.predicted_entry << '\t' << r.gold_entry << '\t'
        << to_string(r.predicted_policy.da) << '\t' << to_string(r.gold_policy.da) << '\t'
        << to_string(r.predicted_policy.topic_intent) << '\t' << to_string(r.gold_policy.topic_intent) << '\t'
        << r.f1 << '\t' << r.hypothesis << '\t' << r.reference << '\n';
  }
}

}  // namespace pdgd
