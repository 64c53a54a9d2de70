#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pdgd/checkpoint.hpp"
#include "pdgd/corpus.hpp"
#include "pdgd/labels.hpp"
#include "pdgd/nn.hpp"
#include "pdgd/training.hpp"

namespace pdgd {

// Fine-grained ISO 24617-2 communicative functions -> the four coarse acts.
class DAMappingTable {
 public:
  // The ISO general-purpose functions, plus the coarse names themselves.
  static DAMappingTable standard();
  // {fine_label: coarse_label}; coarse labels must be one of the four acts.
  static DAMappingTable from_json_file(const std::filesystem::path& path);

  void add(const std::string& fine_label, DialogueAct coarse);
  // Entries from `other` override ours.
  void merge(const DAMappingTable& other);
  DialogueAct map(const std::string& fine_label) const;
  bool contains(const std::string& fine_label) const;
  const std::map<std::string, DialogueAct>& entries() const { return table_; }

 private:
  std::map<std::string, DialogueAct> table_;
};

// Throws UnmappedLabelError for labels absent from the standard table.
DialogueAct map_iso_da(const std::string& fine_label);
DialogueAct map_iso_da(const std::string& fine_label, const DAMappingTable& table);

// Topic of every turn: grounded turns take their entry's topic, ungrounded
// turns inherit the closest preceding grounded turn's topic, or the initial
// topic when none precedes them.
std::vector<std::string> turn_topics(const Dialogue& dialogue);

// Rule-based topic-transfer intent for every turn.
std::vector<TopicIntent> annotate_topic_intents(const Dialogue& dialogue);
std::vector<TopicIntent> topic_intents_from_topics(const std::vector<std::string>& topics,
                                                   const std::string& initial_topic);

// Transformer encoder with an MLP over the first (<cls>) position.
struct ClassifierConfig {
  TransformerShape shape;
  int max_len = 128;
  std::size_t context_budget = 60;  // topic classifier only
  TrainingOptions training;
};

struct ClassifierExample {
  std::vector<TokenId> tokens;
  std::vector<int> segments;
  int label = 0;
};

class ClassifierModel {
 public:
  ClassifierModel() = default;
  ClassifierModel(std::string kind, std::vector<std::string> labels, int vocab_size,
                  const ClassifierConfig& config, std::uint64_t seed);

  Var logits(Tape& tape, const ClassifierExample& input);
  // Softmax over labels from a non-recording pass.
  std::vector<double> probabilities(const ClassifierExample& input) const;

  const std::string& kind() const { return kind_; }
  const std::vector<std::string>& labels() const { return labels_; }
  int max_len() const { return max_len_; }
  int vocab_size() const { return vocab_size_; }
  const TransformerShape& shape() const { return shape_; }

  void visit(const ParameterVisitor& f);
  Checkpoint to_checkpoint(const Tokenizer& tokenizer) const;
  static ClassifierModel from_checkpoint(const Checkpoint& ckpt);

 private:
  std::string kind_;
  std::vector<std::string> labels_;
  int vocab_size_ = 0;
  int max_len_ = 0;
  TransformerShape shape_;
  Parameter token_embedding_;
  Parameter position_embedding_;
  Parameter segment_embedding_;
  Encoder encoder_;
  MlpHead head_;
};

struct ClassifierTrainResult {
  LossCurve curve;
  std::vector<std::string> warnings;
};

// Cross-entropy training; batches are averaged. Throws DataError on an
// empty set and warns when only one label occurs.
ClassifierTrainResult train_classifier(ClassifierModel& model, const std::vector<ClassifierExample>& data,
                                       const TrainingOptions& options);

// ---- Dialogue-act tagger ---------------------------------------------------

struct LabeledUtterance {
  std::string text;
  DialogueAct da = DialogueAct::kInform;
};

// {"text", "da"} JSONL; `da` may be coarse or any label in `table`.
// Utterances with `min_words` or fewer words are dropped.
std::vector<LabeledUtterance> load_labeled_utterances(const std::filesystem::path& path,
                                                      const DAMappingTable& table, std::size_t min_words = 2);

ClassifierExample da_tagger_input(std::span<const TokenId> utterance, int max_len, DialogueAct label = {});

struct DATaggerTraining {
  ClassifierModel model;
  ClassifierTrainResult result;
};

DATaggerTraining train_da_tagger(const std::vector<LabeledUtterance>& corpus, const Tokenizer& tokenizer,
                                 const ClassifierConfig& config);

struct DAPrediction {
  DialogueAct label = DialogueAct::kInform;
  std::array<double, kNumDialogueActs> probabilities{};
};

DAPrediction predict_da(const ClassifierModel& model, std::span<const TokenId> utterance);

// ---- Topic-intent classifier -----------------------------------------------

// [<cls>; context turns; <sep>; one intent marker per context turn; <sep>; response]
ClassifierExample topic_classifier_input(const std::vector<std::vector<TokenId>>& context,
                                         const std::vector<TopicIntent>& context_intents,
                                         std::span<const TokenId> response, int max_len,
                                         std::size_t context_budget, TopicIntent label = {});

// One example per turn labeled by the rules (tokenized dialogue required).
std::vector<ClassifierExample> build_topic_examples(const Dialogue& dialogue, const ClassifierConfig& config,
                                                    std::size_t window = 3);

struct TopicClassifierTraining {
  ClassifierModel model;
  ClassifierTrainResult result;
};

TopicClassifierTraining train_topic_classifier(const std::vector<Dialogue>& dialogues,
                                               const Tokenizer& tokenizer, const ClassifierConfig& config);

struct TopicPrediction {
  TopicIntent label = TopicIntent::kMiningInitial;
  std::array<double, kNumTopicIntents> probabilities{};
};

TopicPrediction predict_topic_intent(const ClassifierModel& model, const std::vector<std::vector<TokenId>>& context,
                                     const std::vector<TopicIntent>& context_intents,
                                     std::span<const TokenId> response, std::size_t context_budget = 60);

}  // namespace pdgd
