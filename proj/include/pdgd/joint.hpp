#pragma once

#include <memory>
#include <span>
#include <vector>

#include "pdgd/generator.hpp"
#include "pdgd/planner.hpp"
#include "pdgd/training.hpp"

namespace pdgd {

// a_i = f1_i - mean(f1) over the batch.
std::vector<double> compute_advantages(std::span<const double> f1_scores);

// -(1/N) sum_i a_i (log P(da_i) + log P(topic_i)); logits are 1 x classes.
Var rl_loss(std::span<const Var> da_logits, std::span<const Var> topic_logits, std::span<const PolicyLabel> chosen,
            std::span<const double> advantages);

struct JointConfig {
  double lr_planner = 5e-6;
  double lr_generator = 5e-5;
  std::size_t batch_size = 4;
  int steps = 0;  // no default; callers must choose
  std::uint64_t seed = 13;
  int max_new = 40;
  double clip_norm = 1.0;
  bool update_span_head = false;
  // Replace every advantage by 0 (leaves the planner untouched).
  bool zero_advantages = false;
};

struct RLBatchResult {
  std::vector<std::size_t> selected_entries;
  std::vector<PolicyLabel> predicted_policies;
  std::vector<std::vector<TokenId>> responses;
  std::vector<double> f1;
  std::vector<double> advantages;
  double rl_loss = 0.0;
  double mle_loss = 0.0;
  bool planner_updated = false;
};

// Owns the optimizer state of one joint fine-tuning run.
class JointTrainer {
 public:
  JointTrainer(PlannerModel& planner, GeneratorModel& generator, const JointConfig& config);

  RLBatchResult step(std::span<const TrainingExample* const> batch);
  const JointConfig& config() const { return config_; }

 private:
  PlannerModel& planner_;
  GeneratorModel& generator_;
  JointConfig config_;
  std::unique_ptr<Adam> planner_opt_;
  std::unique_ptr<Adam> generator_opt_;
  std::vector<Parameter*> planner_all_;
};

RLBatchResult joint_train_step(PlannerModel& planner, GeneratorModel& generator,
                               std::span<const TrainingExample* const> batch, const JointConfig& config);

struct JointTrainResult {
  LossCurve curve;
};

JointTrainResult joint_train(PlannerModel& planner, GeneratorModel& generator,
                             const std::vector<TrainingExample>& examples, const JointConfig& config);

}  // namespace pdgd
