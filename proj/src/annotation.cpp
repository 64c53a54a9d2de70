#include "pdgd/annotation.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "pdgd/error.hpp"

namespace pdgd {

using nlohmann::json;

namespace {

std::string normalize_label(const std::string& label) {
  std::string out;
  for (char ch : label) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  const auto b = out.find_first_not_of(" \t");
  const auto e = out.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : out.substr(b, e - b + 1);
}

}  // namespace

DAMappingTable DAMappingTable::standard() {
  DAMappingTable t;
  for (DialogueAct da : kAllDialogueActs) t.add(std::string(to_string(da)), da);
  // information-providing functions
  for (const char* l : {"answer", "agreement", "disagreement", "correction", "confirm", "disconfirm", "statement"})
    t.add(l, DialogueAct::kInform);
  // information-seeking functions
  for (const char* l : {"propositional question", "set question", "choice question", "check question"})
    t.add(l, DialogueAct::kQuestion);
  // directive functions
  for (const char* l : {"request", "instruct", "suggest", "address offer", "accept offer", "decline offer"})
    t.add(l, DialogueAct::kDirective);
  // commissive functions
  for (const char* l : {"offer", "promise", "address request", "accept request", "decline request",
                        "address suggest", "accept suggest", "decline suggest"})
    t.add(l, DialogueAct::kCommissive);
  return t;
}

DAMappingTable DAMappingTable::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open DA mapping '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("malformed DA mapping '" + path.string() + "': " + e.what());
  }
  if (!doc.is_object()) throw DataError("DA mapping must be a JSON object");
  DAMappingTable t;
  for (const auto& [fine, coarse] : doc.items()) {
    if (!coarse.is_string()) throw DataError("DA mapping value for '" + fine + "' is not a string");
    auto da = parse_dialogue_act(normalize_label(coarse.get<std::string>()));
    if (!da) throw DataError("DA mapping '" + fine + "' -> unknown coarse label '" + coarse.get<std::string>() + "'");
    t.add(fine, *da);
  }
  return t;
}

void DAMappingTable::add(const std::string& fine_label, DialogueAct coarse) {
  table_[normalize_label(fine_label)] = coarse;
}

void DAMappingTable::merge(const DAMappingTable& other) {
  for (const auto& [k, v] : other.table_) table_[k] = v;
}

DialogueAct DAMappingTable::map(const std::string& fine_label) const {
  auto it = table_.find(normalize_label(fine_label));
  if (it == table_.end()) throw UnmappedLabelError(fine_label);
  return it->second;
}

bool DAMappingTable::contains(const std::string& fine_label) const {
  return table_.count(normalize_label(fine_label)) > 0;
}

DialogueAct map_iso_da(const std::string& fine_label) {
  static const DAMappingTable table = DAMappingTable::standard();
  return table.map(fine_label);
}

DialogueAct map_iso_da(const std::string& fine_label, const DAMappingTable& table) { return table.map(fine_label); }

std::vector<std::string> turn_topics(const Dialogue& dialogue) {
  std::vector<std::string> topics;
  std::string current = dialogue.initial_topic;
  for (const auto& u : dialogue.turns) {
    if (u.grounding) current = dialogue.knowledge.entries.at(*u.grounding).topic;
    topics.push_back(current);
  }
  return topics;
}

std::vector<TopicIntent> topic_intents_from_topics(const std::vector<std::string>& topics,
                                                   const std::string& initial_topic) {
  std::vector<TopicIntent> out;
  out.reserve(topics.size());
  for (std::size_t i = 0; i < topics.size(); ++i) {
    if (i == 0 || topics[i] == initial_topic) {
      out.push_back(TopicIntent::kMiningInitial);
    } else if (topics[i] != topics[i - 1]) {
      out.push_back(TopicIntent::kStartingNew);
    } else {
      out.push_back(TopicIntent::kFollowingNew);
    }
  }
  return out;
}

std::vector<TopicIntent> annotate_topic_intents(const Dialogue& dialogue) {
  return topic_intents_from_topics(turn_topics(dialogue), dialogue.initial_topic);
}

// ---- ClassifierModel ----------------------------------------------------------

ClassifierModel::ClassifierModel(std::string kind, std::vector<std::string> labels, int vocab_size,
                                 const ClassifierConfig& config, std::uint64_t seed)
    : kind_(std::move(kind)),
      labels_(std::move(labels)),
      vocab_size_(vocab_size),
      max_len_(config.max_len),
      shape_(config.shape) {
  if (labels_.size() < 2) throw ContractError("a classifier needs at least two labels");
  if (vocab_size_ <= 0 || max_len_ <= 1) throw ContractError("invalid classifier dimensions");
  Rng rng(seed);
  const int d = shape_.dim;
  token_embedding_ = Parameter("embed.token", random_normal(vocab_size_, d, 0.02, rng));
  position_embedding_ = Parameter("embed.position", random_normal(max_len_, d, 0.02, rng));
  segment_embedding_ = Parameter("embed.segment", random_normal(2, d, 0.02, rng));
  encoder_ = Encoder("encoder", shape_, rng);
  head_ = MlpHead("head", d, static_cast<Eigen::Index>(labels_.size()), rng);
}

Var ClassifierModel::logits(Tape& tape, const ClassifierExample& input) {
  const auto n = input.tokens.size();
  if (n == 0 || n > static_cast<std::size_t>(max_len_))
    throw ContractError("classifier input length " + std::to_string(n) + " outside [1, " +
                        std::to_string(max_len_) + "]");
  if (input.segments.size() != n) throw ContractError("classifier input needs one segment id per token");
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  Var x = add(add(gather_rows(tape.param(token_embedding_), input.tokens),
                  gather_rows(tape.param(position_embedding_), positions)),
              gather_rows(tape.param(segment_embedding_), input.segments));
  Var h = encoder_(tape, x);
  return head_(tape, slice_rows(h, 0, 1));
}

std::vector<double> ClassifierModel::probabilities(const ClassifierExample& input) const {
  // A non-recording tape only reads parameter values.
  auto& self = const_cast<ClassifierModel&>(*this);
  Tape tape(false);
  Var p = softmax_rows(self.logits(tape, input));
  return std::vector<double>(p.value().data(), p.value().data() + p.value().size());
}

void ClassifierModel::visit(const ParameterVisitor& f) {
  f(token_embedding_);
  f(position_embedding_);
  f(segment_embedding_);
  encoder_.visit(f);
  head_.visit(f);
}

Checkpoint ClassifierModel::to_checkpoint(const Tokenizer& tokenizer) const {
  if (tokenizer.vocab_size() != static_cast<std::size_t>(vocab_size_))
    throw ContractError("tokenizer does not match the classifier vocabulary");
  Checkpoint ckpt;
  ckpt.kind = kind_;
  ckpt.meta["dim"] = std::to_string(shape_.dim);
  ckpt.meta["layers"] = std::to_string(shape_.layers);
  ckpt.meta["heads"] = std::to_string(shape_.heads);
  ckpt.meta["ffn_dim"] = std::to_string(shape_.ffn_dim);
  ckpt.meta["max_len"] = std::to_string(max_len_);
  ckpt.meta["vocab_size"] = std::to_string(vocab_size_);
  std::string joined;
  for (const auto& l : labels_) joined += (joined.empty() ? "" : ",") + l;
  ckpt.meta["labels"] = joined;
  ckpt.meta["tokenizer"] = tokenizer.identity();
  ckpt.vocabulary = tokenizer.vocabulary();
  auto& self = const_cast<ClassifierModel&>(*this);
  export_parameters(ckpt, [&](const ParameterVisitor& f) { self.visit(f); });
  return ckpt;
}

ClassifierModel ClassifierModel::from_checkpoint(const Checkpoint& ckpt) {
  ClassifierConfig cfg;
  cfg.shape.dim = ckpt.meta_int("dim");
  cfg.shape.layers = ckpt.meta_int("layers");
  cfg.shape.heads = ckpt.meta_int("heads");
  cfg.shape.ffn_dim = ckpt.meta_int("ffn_dim");
  cfg.max_len = ckpt.meta_int("max_len");
  std::vector<std::string> labels;
  std::string cur;
  for (char ch : ckpt.require_meta("labels")) {
    if (ch == ',') {
      labels.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  labels.push_back(cur);
  ClassifierModel model(ckpt.kind, std::move(labels), ckpt.meta_int("vocab_size"), cfg, 0);
  import_parameters(ckpt, [&](const ParameterVisitor& f) { model.visit(f); });
  return model;
}

ClassifierTrainResult train_classifier(ClassifierModel& model, const std::vector<ClassifierExample>& data,
                                       const TrainingOptions& options) {
  if (data.empty()) throw DataError("cannot train " + model.kind() + " on an empty corpus");
  ClassifierTrainResult result;
  std::set<int> seen;
  for (const auto& ex : data) seen.insert(ex.label);
  if (seen.size() == 1)
    result.warnings.push_back("degenerate labels: every training example has label '" +
                              model.labels().at(static_cast<std::size_t>(*seen.begin())) + "'");

  std::vector<Parameter*> params;
  model.visit([&](Parameter& p) { params.push_back(&p); });
  Adam adam(params, options.adam);
  Rng rng(options.seed);
  std::size_t step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(data.size(), options.batch_size, rng)) {
      Tape tape;
      std::vector<Var> losses;
      for (std::size_t i : batch) {
        const int label = data[i].label;
        losses.push_back(nll_rows(model.logits(tape, data[i]), std::span<const int>(&label, 1)));
      }
      Var loss = scale(add_all(losses), 1.0 / static_cast<double>(batch.size()));
      tape.backward(loss);
      adam.step();
      result.curve.push_back(LossRecord{epoch, step++, loss.scalar(), {}});
    }
  }
  return result;
}

// ---- DA tagger ------------------------------------------------------------------

std::vector<LabeledUtterance> load_labeled_utterances(const std::filesystem::path& path,
                                                      const DAMappingTable& table, std::size_t min_words) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labeled utterances '" + path.string() + "'");
  std::vector<LabeledUtterance> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    if (!record.is_object() || !record.contains("text") || !record["text"].is_string() ||
        !record.contains("da") || !record["da"].is_string())
      throw DataError("line " + std::to_string(line) + ": expected {\"text\": str, \"da\": str}");
    LabeledUtterance u;
    u.text = record["text"].get<std::string>();
    const auto label = record["da"].get<std::string>();
    try {
      u.da = table.map(label);
    } catch (const UnmappedLabelError&) {
      throw DataError("line " + std::to_string(line) + ": unmapped dialogue-act label '" + label + "'");
    }
    if (split_words(u.text).size() <= min_words) continue;
    out.push_back(std::move(u));
  }
  return out;
}

ClassifierExample da_tagger_input(std::span<const TokenId> utterance, int max_len, DialogueAct label) {
  ClassifierExample ex;
  ex.tokens.push_back(special_id(Special::kCls));
  const std::size_t room = static_cast<std::size_t>(max_len) - 1;
  if (utterance.empty()) {
    ex.tokens.push_back(special_id(Special::kUnk));
  } else {
    ex.tokens.insert(ex.tokens.end(), utterance.begin(),
                     utterance.begin() + static_cast<std::ptrdiff_t>(std::min(room, utterance.size())));
  }
  ex.segments.assign(ex.tokens.size(), 0);
  ex.label = index_of(label);
  return ex;
}

namespace {

std::vector<std::string> da_label_names() {
  std::vector<std::string> out;
  for (DialogueAct da : kAllDialogueActs) out.emplace_back(to_string(da));
  return out;
}

std::vector<std::string> topic_label_names() {
  std::vector<std::string> out;
  for (TopicIntent t : kAllTopicIntents) out.emplace_back(to_string(t));
  return out;
}

}  // namespace

DATaggerTraining train_da_tagger(const std::vector<LabeledUtterance>& corpus, const Tokenizer& tokenizer,
                                 const ClassifierConfig& config) {
  if (corpus.empty()) throw DataError("cannot train the DA tagger on an empty corpus");
  std::vector<ClassifierExample> data;
  data.reserve(corpus.size());
  for (const auto& u : corpus) data.push_back(da_tagger_input(tokenizer.encode(u.text), config.max_len, u.da));
  DATaggerTraining out{ClassifierModel("da-tagger", da_label_names(), static_cast<int>(tokenizer.vocab_size()),
                                       config, config.training.seed),
                       {}};
  out.result = train_classifier(out.model, data, config.training);
  return out;
}

DAPrediction predict_da(const ClassifierModel& model, std::span<const TokenId> utterance) {
  if (model.labels().size() != kNumDialogueActs) throw ContractError("model is not a 4-way DA tagger");
  const auto probs = model.probabilities(da_tagger_input(utterance, model.max_len()));
  DAPrediction out;
  std::copy(probs.begin(), probs.end(), out.probabilities.begin());
  const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
  out.label = kAllDialogueActs[static_cast<std::size_t>(best)];
  return out;
}

// ---- Topic classifier -----------------------------------------------------------

namespace {

Special intent_marker(TopicIntent t) {
  switch (t) {
    case TopicIntent::kMiningInitial: return Special::kMiningInitial;
    case TopicIntent::kStartingNew: return Special::kStartingNew;
    case TopicIntent::kFollowingNew: return Special::kFollowingNew;
  }
  return Special::kMiningInitial;
}

}  // namespace

ClassifierExample topic_classifier_input(const std::vector<std::vector<TokenId>>& context,
                                         const std::vector<TopicIntent>& context_intents,
                                         std::span<const TokenId> response, int max_len,
                                         std::size_t context_budget, TopicIntent label) {
  if (context.size() != context_intents.size()) throw ContractError("one topic intent per context turn required");
  std::vector<ContextTurn> turns;
  for (const auto& c : context) turns.push_back(ContextTurn{Speaker::kUser, c, {}});
  const std::size_t fixed = 3 + context_intents.size();  // <cls>, two <sep>, markers
  if (fixed + 1 > static_cast<std::size_t>(max_len)) throw ContractError("max_len too small for the topic input");
  std::size_t budget = std::min(context_budget, static_cast<std::size_t>(max_len) - fixed - 1);

  ClassifierExample ex;
  ex.tokens.push_back(special_id(Special::kCls));
  for (const auto& t : truncate_context(turns, budget)) ex.tokens.insert(ex.tokens.end(), t.tokens.begin(), t.tokens.end());
  ex.tokens.push_back(special_id(Special::kSep));
  for (TopicIntent t : context_intents) ex.tokens.push_back(special_id(intent_marker(t)));
  ex.segments.assign(ex.tokens.size(), 0);
  ex.tokens.push_back(special_id(Special::kSep));
  const std::size_t room = static_cast<std::size_t>(max_len) - ex.tokens.size();
  if (response.empty()) {
    ex.tokens.push_back(special_id(Special::kUnk));
  } else {
    ex.tokens.insert(ex.tokens.end(), response.begin(),
                     response.begin() + static_cast<std::ptrdiff_t>(std::min(room, response.size())));
  }
  ex.segments.resize(ex.tokens.size(), 1);
  ex.label = index_of(label);
  return ex;
}

std::vector<ClassifierExample> build_topic_examples(const Dialogue& dialogue, const ClassifierConfig& config,
                                                    std::size_t window) {
  const auto intents = annotate_topic_intents(dialogue);
  std::vector<ClassifierExample> out;
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    std::vector<std::vector<TokenId>> context;
    std::vector<TopicIntent> context_intents;
    const std::size_t first = i > window ? i - window : 0;
    for (std::size_t j = first; j < i; ++j) {
      context.push_back(dialogue.turns[j].tokens);
      context_intents.push_back(intents[j]);
    }
    if (context.empty()) {
      context.push_back(dialogue.initial_topic_tokens);
      context_intents.push_back(TopicIntent::kMiningInitial);
    }
    out.push_back(topic_classifier_input(context, context_intents, dialogue.turns[i].tokens, config.max_len,
                                         config.context_budget, intents[i]));
  }
  return out;
}

TopicClassifierTraining train_topic_classifier(const std::vector<Dialogue>& dialogues,
                                               const Tokenizer& tokenizer, const ClassifierConfig& config) {
  std::vector<ClassifierExample> data;
  for (const auto& d : dialogues) {
    auto part = build_topic_examples(d, config);
    data.insert(data.end(), part.begin(), part.end());
  }
  if (data.empty()) throw DataError("cannot train the topic classifier on an empty corpus");
  TopicClassifierTraining out{ClassifierModel("topic-classifier", topic_label_names(),
                                              static_cast<int>(tokenizer.vocab_size()), config, config.training.seed),
                              {}};
  out.result = train_classifier(out.model, data, config.training);
  return out;
}

TopicPrediction predict_topic_intent(const ClassifierModel& model, const std::vector<std::vector<TokenId>>& context,
                                     const std::vector<TopicIntent>& context_intents,
                                     std::span<const TokenId> response, std::size_t context_budget) {
  if (model.labels().size() != kNumTopicIntents) throw ContractError("model is not a 3-way topic classifier");
  const auto probs =
      model.probabilities(topic_classifier_input(context, context_intents, response, model.max_len(), context_budget));
  TopicPrediction out;
  std::copy(probs.begin(), probs.end(), out.probabilities.begin());
  const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
  out.label = kAllTopicIntents[static_cast<std::size_t>(best)];
  return out;
}

}  // namespace pdgd
