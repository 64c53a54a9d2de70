#include "pdgd/joint.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "pdgd/error.hpp"
#include "pdgd/metrics.hpp"

namespace pdgd {

std::vector<double> compute_advantages(std::span<const double> f1_scores) {
  if (f1_scores.empty()) throw ContractError("advantages of an empty batch");
  const double mean = std::accumulate(f1_scores.begin(), f1_scores.end(), 0.0) / static_cast<double>(f1_scores.size());
  std::vector<double> out;
  out.reserve(f1_scores.size());
  for (double f : f1_scores) out.push_back(f - mean);
  return out;
}

Var rl_loss(std::span<const Var> da_logits, std::span<const Var> topic_logits, std::span<const PolicyLabel> chosen,
            std::span<const double> advantages) {
  const std::size_t n = advantages.size();
  if (n == 0 || da_logits.size() != n || topic_logits.size() != n || chosen.size() != n)
    throw ContractError("rl_loss needs one logit pair, label and advantage per example");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < n; ++i) {
    Var lp_da = pick(log_softmax_rows(da_logits[i]), 0, index_of(chosen[i].da));
    Var lp_topic = pick(log_softmax_rows(topic_logits[i]), 0, index_of(chosen[i].topic_intent));
    terms.push_back(scale(add(lp_da, lp_topic), advantages[i]));
  }
  return scale(add_all(terms), -1.0 / static_cast<double>(n));
}

namespace {

Words id_words(std::span<const TokenId> tokens) {
  Words w;
  w.reserve(tokens.size());
  for (TokenId t : tokens) w.push_back(std::to_string(t));
  return w;
}

}  // namespace

JointTrainer::JointTrainer(PlannerModel& planner, GeneratorModel& generator, const JointConfig& config)
    : planner_(planner), generator_(generator), config_(config) {
  if (!planner_.trained() || !generator_.trained())
    throw ContractError("joint training starts from a separately trained planner and generator");
  if (config_.batch_size == 0) throw ContractError("joint batch size must be positive");
  std::vector<Parameter*> tuned;
  planner_.visit_policy_path([&](Parameter& p) { tuned.push_back(&p); });
  if (config_.update_span_head) planner_.visit_span_head([&](Parameter& p) { tuned.push_back(&p); });
  planner_.visit([&](Parameter& p) { planner_all_.push_back(&p); });
  AdamConfig pc;
  pc.lr = config_.lr_planner;
  pc.clip_norm = config_.clip_norm;
  planner_opt_ = std::make_unique<Adam>(tuned, pc);
  std::vector<Parameter*> gen;
  generator_.visit([&](Parameter& p) { gen.push_back(&p); });
  AdamConfig gc;
  gc.lr = config_.lr_generator;
  gc.clip_norm = config_.clip_norm;
  generator_opt_ = std::make_unique<Adam>(gen, gc);
}

RLBatchResult JointTrainer::step(std::span<const TrainingExample* const> batch) {
  if (batch.empty()) throw ContractError("empty joint batch");
  RLBatchResult result;
  std::vector<PlannerInput> chunks;
  const auto& pcfg = planner_.config();
  DecodeOptions greedy;
  greedy.beam = 1;
  greedy.max_new = config_.max_new;
  for (const TrainingExample* ex : batch) {
    const KnowledgeSelection sel = select_knowledge_over_chunks(planner_, *ex);
    auto all_chunks = assemble_planner_chunks(*ex, static_cast<std::size_t>(pcfg.max_len), pcfg.context_budget);
    chunks.push_back(std::move(all_chunks[sel.chunk]));
    const PolicyLabel policy = sel.predicted_policy();
    const GeneratorInput in =
        generator_input(ex->candidates.entries[sel.entry].tokens, ex->context, generator_.config().context_budget);
    auto response = generate(generator_, in, policy, greedy);
    result.f1.push_back(unigram_f1(id_words(response), id_words(ex->response)));
    result.selected_entries.push_back(sel.entry);
    result.predicted_policies.push_back(policy);
    result.responses.push_back(std::move(response));
  }
  result.advantages = config_.zero_advantages ? std::vector<double>(batch.size(), 0.0) : compute_advantages(result.f1);

  // Planner: policy-gradient step on the gold policy labels of the selected chunk.
  const bool any_signal =
      std::any_of(result.advantages.begin(), result.advantages.end(), [](double a) { return a != 0.0; });
  if (any_signal) {
    Tape tape;
    std::vector<Var> da, topic;
    std::vector<PolicyLabel> gold;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto out = planner_.forward(tape, chunks[i]);
      da.push_back(out.da_logits);
      topic.push_back(out.topic_logits);
      gold.push_back(batch[i]->response_policy);
    }
    Var loss = rl_loss(da, topic, gold, result.advantages);
    tape.backward(loss);
    planner_opt_->step();
    for (Parameter* p : planner_all_) p->zero_grad();
    result.rl_loss = loss.scalar();
    result.planner_updated = true;
  }

  // Generator: teacher-forced MLE on the gold entry, policy and response.
  Tape tape;
  std::vector<Var> losses;
  for (const TrainingExample* ex : batch) {
    const GeneratorInput in = gold_generator_input(*ex, generator_.config().context_budget);
    losses.push_back(generation_loss(tape, generator_, in, ex->response_policy, ex->response));
  }
  Var mle = scale(add_all(losses), 1.0 / static_cast<double>(losses.size()));
  tape.backward(mle);
  generator_opt_->step();
  result.mle_loss = mle.scalar();
  return result;
}

RLBatchResult joint_train_step(PlannerModel& planner, GeneratorModel& generator,
                               std::span<const TrainingExample* const> batch, const JointConfig& config) {
  JointTrainer trainer(planner, generator, config);
  return trainer.step(batch);
}

JointTrainResult joint_train(PlannerModel& planner, GeneratorModel& generator,
                             const std::vector<TrainingExample>& examples, const JointConfig& config) {
  if (examples.empty()) throw DataError("cannot run joint training on an empty example set");
  if (config.steps <= 0) throw ContractError("joint training needs an explicit positive step count");
  JointTrainer trainer(planner, generator, config);
  Rng rng(config.seed);
  JointTrainResult result;
  std::size_t step = 0;
  int epoch = 0;
  while (step < static_cast<std::size_t>(config.steps)) {
    for (const auto& batch : epoch_batches(examples.size(), config.batch_size, rng)) {
      if (step >= static_cast<std::size_t>(config.steps)) break;
      std::vector<const TrainingExample*> items;
      for (std::size_t i : batch) items.push_back(&examples[i]);
      const auto r = trainer.step(items);
      const double mean_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / static_cast<double>(r.f1.size());
      result.curve.push_back(
          LossRecord{epoch, step++, r.rl_loss + r.mle_loss, {{"rl", r.rl_loss}, {"mle", r.mle_loss}, {"f1", mean_f1}}});
    }
    ++epoch;
  }
  return result;
}

}  // namespace pdgd
