#pragma once

// A frozen four-example batch in which exactly one example's gold response is
// what the generator will decode for it, so its F1 is 1 and the rest score 0.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "pdgd/generator.hpp"
#include "pdgd/joint.hpp"
#include "pdgd/planner.hpp"
#include "support.hpp"

namespace testing {

struct JointFixture {
  pdgd::PlannerModel planner;
  pdgd::GeneratorModel generator;
  std::vector<pdgd::TrainingExample> examples;
  std::size_t winner = 0;
};

inline constexpr int kJointVocab = 40;

inline pdgd::TrainingExample joint_example(pdgd::Rng& rng, int id) {
  auto word = [&] { return static_cast<pdgd::TokenId>(pdgd::kNumSpecials + rng() % (kJointVocab - pdgd::kNumSpecials)); };
  pdgd::TrainingExample ex;
  ex.dialogue_id = "j" + std::to_string(id);
  pdgd::ContextTurn turn;
  for (int i = 0; i < 4; ++i) turn.tokens.push_back(word());
  turn.policy = {pdgd::DialogueAct::kQuestion, pdgd::TopicIntent::kMiningInitial};
  ex.context.push_back(turn);
  for (int e = 0; e < 3; ++e) {
    pdgd::KnowledgeEntry entry;
    for (int i = 0; i < 4; ++i) entry.tokens.push_back(word());
    ex.candidates.entries.push_back(entry);
  }
  ex.candidates.compute_offsets();
  ex.gold_entry = static_cast<std::size_t>(id % 3);
  ex.gold_span = ex.candidates.offsets[ex.gold_entry];
  return ex;
}

// Decodes exactly as a joint step does.
inline std::vector<pdgd::TokenId> joint_decode(const pdgd::PlannerModel& planner, const pdgd::GeneratorModel& generator,
                                               const pdgd::TrainingExample& ex, int max_new) {
  const auto sel = pdgd::select_knowledge_over_chunks(planner, ex);
  const auto in = pdgd::generator_input(ex.candidates.entries[sel.entry].tokens, ex.context,
                                        generator.config().context_budget);
  return pdgd::generate(generator, in, sel.predicted_policy(), pdgd::DecodeOptions{1, max_new});
}

// `all_zero`: every gold response misses its decoded output, so all F1 are 0.
inline JointFixture joint_fixture(bool all_zero = false, int max_new = 6, std::uint64_t seed = 31) {
  pdgd::PlannerConfig pc;
  pc.shape = tiny_shape();
  pc.max_len = 64;
  pdgd::GeneratorConfig gc;
  gc.shape = tiny_shape();
  gc.max_len = 64;
  JointFixture f{pdgd::PlannerModel(kJointVocab, pc, seed), pdgd::GeneratorModel(kJointVocab, gc, seed + 1), {}, 0};
  f.planner.mark_trained();
  f.generator.mark_trained();
  pdgd::Rng rng(seed);
  for (int i = 0; i < 4; ++i) {
    auto ex = joint_example(rng, i);
    const auto decoded = joint_decode(f.planner, f.generator, ex, max_new);
    if (i == 0 && !all_zero && !decoded.empty()) {
      ex.response = decoded;
      ex.response_policy = {pdgd::DialogueAct::kInform, pdgd::TopicIntent::kStartingNew};
    } else {
      // words absent from the decoded output
      for (pdgd::TokenId w = pdgd::kNumSpecials; ex.response.size() < 3; ++w)
        if (std::find(decoded.begin(), decoded.end(), w) == decoded.end()) ex.response.push_back(w);
      ex.response_policy = {pdgd::DialogueAct::kQuestion, pdgd::TopicIntent::kFollowingNew};
    }
    f.examples.push_back(ex);
  }
  return f;
}

// log P(da) + log P(topic intent) of `policy` under the planner, on the chunk
// the planner itself selects.
inline double policy_log_prob(const pdgd::PlannerModel& planner, const pdgd::TrainingExample& ex,
                              pdgd::PolicyLabel policy) {
  const auto sel = pdgd::select_knowledge_over_chunks(planner, ex);
  const auto chunks = pdgd::assemble_planner_chunks(ex, static_cast<std::size_t>(planner.config().max_len),
                                                    planner.config().context_budget);
  const auto logits = planner.predict(chunks[sel.chunk]);
  auto log_softmax_at = [](const pdgd::RowVector& v, int i) {
    const double m = v.maxCoeff();
    return v(i) - m - std::log((v.array() - m).exp().sum());
  };
  return log_softmax_at(logits.da, pdgd::index_of(policy.da)) +
         log_softmax_at(logits.topic, pdgd::index_of(policy.topic_intent));
}

inline std::vector<const pdgd::TrainingExample*> batch_of(const std::vector<pdgd::TrainingExample>& examples) {
  std::vector<const pdgd::TrainingExample*> out;
  for (const auto& ex : examples) out.push_back(&ex);
  return out;
}

inline std::vector<pdgd::Matrix> parameter_values(pdgd::PlannerModel& m) {
  std::vector<pdgd::Matrix> out;
  m.visit([&](pdgd::Parameter& p) { out.push_back(p.value); });
  return out;
}

inline std::vector<pdgd::Matrix> parameter_values(pdgd::GeneratorModel& m) {
  std::vector<pdgd::Matrix> out;
  m.visit([&](pdgd::Parameter& p) { out.push_back(p.value); });
  return out;
}

inline bool bitwise_equal(const std::vector<pdgd::Matrix>& a, const std::vector<pdgd::Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols() ||
        std::memcmp(a[i].data(), b[i].data(), sizeof(double) * static_cast<std::size_t>(a[i].size())) != 0)
      return false;
  return true;
}

}  // namespace testing
