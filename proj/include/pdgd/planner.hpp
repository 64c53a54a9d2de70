#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdgd/checkpoint.hpp"
#include "pdgd/corpus.hpp"
#include "pdgd/labels.hpp"
#include "pdgd/nn.hpp"
#include "pdgd/training.hpp"

namespace pdgd {

struct PlannerConfig {
  TransformerShape shape;
  int max_len = 512;
  std::size_t context_budget = 60;
  std::size_t max_span_len = 90;
  // Predict only an entry-final end position; the start is implied by the
  // entry (sentence-level selection without revision).
  bool sentence_mode = false;
};

struct PlannerOutputs {
  Var start_logits;  // 1 x L
  Var end_logits;    // 1 x L
  Var da_logits;     // 1 x 4
  Var topic_logits;  // 1 x 3
};

// Plain-value copy of the planner outputs for inference.
struct PlannerLogits {
  RowVector start;
  RowVector end;
  RowVector da;
  RowVector topic;
};

class PlannerModel {
 public:
  PlannerModel() = default;
  PlannerModel(int vocab_size, const PlannerConfig& config, std::uint64_t seed);

  // word + position + segment (+ DA + topic intent on context tokens).
  Var input_embeddings(Tape& tape, const PlannerInput& input);
  PlannerOutputs forward(Tape& tape, const PlannerInput& input);
  PlannerLogits predict(const PlannerInput& input) const;

  const PlannerConfig& config() const { return config_; }
  int vocab_size() const { return vocab_size_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  Parameter& log_mu1() { return log_mu1_; }
  Parameter& log_mu2() { return log_mu2_; }
  Parameter& da_embedding() { return da_embedding_; }
  Parameter& topic_embedding() { return topic_embedding_; }
  Parameter& token_embedding() { return token_embedding_; }
  Parameter& position_embedding() { return position_embedding_; }
  Parameter& segment_embedding() { return segment_embedding_; }

  void visit(const ParameterVisitor& f);
  // Embeddings, encoder and both policy heads (what the joint step tunes).
  void visit_policy_path(const ParameterVisitor& f);
  void visit_span_head(const ParameterVisitor& f);

  Checkpoint to_checkpoint(const Tokenizer& tokenizer) const;
  static PlannerModel from_checkpoint(const Checkpoint& ckpt);

 private:
  PlannerConfig config_;
  int vocab_size_ = 0;
  bool trained_ = false;
  Parameter token_embedding_;
  Parameter position_embedding_;
  Parameter segment_embedding_;
  Parameter da_embedding_;
  Parameter topic_embedding_;
  Encoder encoder_;
  Linear span_start_;
  Linear span_end_;
  MlpHead da_head_;
  MlpHead topic_head_;
  Parameter log_mu1_;
  Parameter log_mu2_;
};

// -(log P(start) + log P(end)) under per-position softmaxes.
Var ks_loss(Var start_logits, Var end_logits, Span gold);
// Entry-final-position variant used in sentence mode: -log P(end).
Var sentence_ks_loss(Var end_logits, std::size_t gold_end);

struct PolicyLosses {
  Var da;
  Var topic;
};
PolicyLosses policy_losses(Var da_logits, Var topic_logits, PolicyLabel gold);

// (1/mu1^2)(L_DA + L_Topic) + (1/mu2^2) L_KS + log(mu1 mu2), mu = exp(log_mu).
Var combined_loss(Var l_da, Var l_topic, Var l_ks, Var log_mu1, Var log_mu2);

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;  // log P(start) + log P(end)
};

// Best (s, e) with region_begin <= s <= e <= region_end and e - s + 1 <=
// max_span_len, earliest pair on ties. Falls back to the independent argmax
// of start and end inside the region when no such pair exists.
SpanPrediction select_span(std::span<const double> start_logits, std::span<const double> end_logits,
                           std::size_t region_begin, std::size_t region_end, std::size_t max_span_len = 90);

// Snaps a span to a whole entry; returns the index into `entry_spans`.
std::size_t revise_span(std::size_t start, std::size_t end, std::span<const Span> entry_spans);

struct ChunkResult {
  std::size_t entry = 0;  // global entry index
  SpanPrediction span;
  RowVector da_logits;
  RowVector topic_logits;
};

// Highest span score wins; earlier chunk on ties.
std::size_t pick_best_chunk(std::span<const ChunkResult> results);

// Per-chunk forward + select + revise for one chunk.
ChunkResult select_in_chunk(const PlannerModel& model, const PlannerInput& input);

struct KnowledgeSelection {
  std::size_t entry = 0;
  std::size_t chunk = 0;
  SpanPrediction span;
  RowVector da_logits;
  RowVector topic_logits;

  PolicyLabel predicted_policy() const;
};

KnowledgeSelection select_knowledge_over_chunks(const PlannerModel& model, const TrainingExample& example);

// The chunk holding the gold entry plus the gold positions inside it.
struct PlannerTrainingInput {
  PlannerInput input;
  Span gold;
  PolicyLabel policy;
};
PlannerTrainingInput planner_training_input(const TrainingExample& example, const PlannerConfig& config);

struct PlannerBatchLosses {
  Var ks;
  Var da;
  Var topic;
  Var total;
};
// Batch-averaged component losses and the uncertainty-weighted total.
PlannerBatchLosses planner_batch_loss(Tape& tape, PlannerModel& model,
                                      std::span<const PlannerTrainingInput* const> batch);

struct PlannerTrainResult {
  LossCurve curve;
};

PlannerTrainResult train_planner(PlannerModel& model, const std::vector<TrainingExample>& examples,
                                 const TrainingOptions& options);

}  // namespace pdgd
