#pragma once

#include <span>
#include <vector>

#include "pdgd/checkpoint.hpp"
#include "pdgd/corpus.hpp"
#include "pdgd/labels.hpp"
#include "pdgd/nn.hpp"
#include "pdgd/training.hpp"

namespace pdgd {

// Knowledge weights per policy component. The knowledge weight for a policy
// is da_weight + topic_weight; every context token gets `context`.
struct BiasTable {
  double inform = 2.0;
  double other_da = 1.0;
  double starting_new = 2.0;
  double mining_initial = 1.0;
  double following_new = 0.0;
  double context = 1.0;

  double knowledge_weight(PolicyLabel policy) const;
};

struct BiasWeightVector {
  std::vector<double> weights;
  std::size_t knowledge_len = 0;
  std::size_t context_len = 0;

  RowVector as_row() const;
};

BiasWeightVector build_bias_vector(PolicyLabel policy, std::size_t m, std::size_t n, const BiasTable& table = {});

// Softmax(q K^T / sqrt(d)) reweighted by `bias` and renormalized, applied to V.
// query: T x d, keys/values: (m+n) x d.
Var biased_cross_attention(Var query, Var keys, Var values, const BiasWeightVector& bias);

struct GeneratorConfig {
  TransformerShape shape;
  int max_len = 512;
  std::size_t context_budget = 60;
  bool use_bias = true;
  BiasTable bias;
};

// [K_i; C] prefix: selected entry tokens then truncated context tokens.
struct GeneratorInput {
  std::vector<TokenId> knowledge;
  std::vector<TokenId> context;
};

GeneratorInput generator_input(std::span<const TokenId> knowledge, const std::vector<ContextTurn>& context,
                               std::size_t context_budget);

class GeneratorModel {
 public:
  GeneratorModel() = default;
  GeneratorModel(int vocab_size, const GeneratorConfig& config, std::uint64_t seed);

  // Embedding of the prefix (word + position + segment, then layer norm).
  Var prefix_encoding(Tape& tape, const GeneratorInput& input);
  // Next-token logits for every decoder position (T x V). A null bias runs
  // the plain cross-attention.
  Var logits(Tape& tape, const GeneratorInput& input, std::span<const TokenId> decoder_tokens,
             const RowVector* bias,
             const std::function<void(const Matrix&)>& inspect_cross = {});
  // Bias row for `policy`, or none when the bias is disabled.
  std::optional<RowVector> bias_for(const GeneratorInput& input, PolicyLabel policy) const;
  // Log-probabilities of the next token after `decoder_tokens` (1 x V).
  RowVector next_log_probs(const GeneratorInput& input, std::span<const TokenId> decoder_tokens,
                           const RowVector* bias) const;

  const GeneratorConfig& config() const { return config_; }
  int vocab_size() const { return vocab_size_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  std::vector<DecoderLayer>& layers() { return layers_; }
  Linear& output_projection() { return output_; }

  void visit(const ParameterVisitor& f);
  Checkpoint to_checkpoint(const Tokenizer& tokenizer) const;
  static GeneratorModel from_checkpoint(const Checkpoint& ckpt);

 private:
  GeneratorConfig config_;
  int vocab_size_ = 0;
  bool trained_ = false;
  Parameter token_embedding_;
  Parameter position_embedding_;
  Parameter segment_embedding_;  // 0 context, 1 knowledge, 2 response
  LayerNorm prefix_norm_;
  std::vector<DecoderLayer> layers_;
  LayerNorm final_norm_;
  Linear output_;
};

// <bos> + response for the decoder input; response + <eos> as targets.
std::vector<TokenId> decoder_inputs(std::span<const TokenId> response);
std::vector<int> decoder_targets(std::span<const TokenId> response);

// Mean token NLL of `response` (plus <eos>) under teacher forcing, with the
// policy bias active when the model uses it.
Var generation_loss(Tape& tape, GeneratorModel& model, const GeneratorInput& input, PolicyLabel policy,
                    std::span<const TokenId> response);

struct TeacherForcedStats {
  std::vector<double> token_log_probs;  // log P(target) per target position
  std::size_t correct = 0;              // argmax == target
};
TeacherForcedStats teacher_forced(const GeneratorModel& model, const GeneratorInput& input, PolicyLabel policy,
                                  std::span<const TokenId> response);

struct DecodeOptions {
  int beam = 5;
  int max_new = 40;
};

// Beam search ranked by log-probability divided by the generated length
// (including <eos>). Returns tokens without <eos>.
std::vector<TokenId> generate(const GeneratorModel& model, const GeneratorInput& input, PolicyLabel policy,
                              const DecodeOptions& options = {});

struct GeneratorTrainResult {
  LossCurve curve;
};

// Teacher-forced MLE on the gold entry, gold policy, and gold response.
GeneratorTrainResult train_generator(GeneratorModel& model, const std::vector<TrainingExample>& examples,
                                     const TrainingOptions& options);

GeneratorInput gold_generator_input(const TrainingExample& example, std::size_t context_budget);

}  // namespace pdgd
