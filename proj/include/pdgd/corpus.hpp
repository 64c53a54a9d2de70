#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdgd/labels.hpp"
#include "pdgd/tokenizer.hpp"

namespace pdgd {

// Inclusive token range [start, end].
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end >= start ? end - start + 1 : 0; }
  friend bool operator==(const Span&, const Span&) = default;
};

enum class Speaker { kUser, kAgent };

struct Utterance {
  Speaker speaker = Speaker::kUser;
  std::string text;
  std::vector<TokenId> tokens;
  std::optional<DialogueAct> da;
  std::optional<TopicIntent> topic_intent;
  std::optional<std::size_t> grounding;

  std::optional<PolicyLabel> policy() const {
    if (!da || !topic_intent) return std::nullopt;
    return PolicyLabel{*da, *topic_intent};
  }
};

struct KnowledgeEntry {
  std::string topic;
  std::string text;
  std::vector<TokenId> tokens;
};

// Ordered entries plus the position of each entry in the concatenated
// knowledge token stream.
struct KnowledgeCollection {
  std::vector<KnowledgeEntry> entries;
  std::vector<Span> offsets;

  std::size_t size() const { return entries.size(); }
  std::size_t total_tokens() const;
  std::vector<TokenId> stream() const;
  // Recomputes offsets from the entry token lengths.
  void compute_offsets();
};

struct Dialogue {
  std::string id;
  std::string initial_topic;
  std::vector<TokenId> initial_topic_tokens;
  std::vector<Utterance> turns;
  KnowledgeCollection knowledge;
};

struct ContextTurn {
  Speaker speaker = Speaker::kUser;
  std::vector<TokenId> tokens;
  PolicyLabel policy;
};

struct TrainingExample {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::vector<ContextTurn> context;  // oldest first, 1..window turns
  KnowledgeCollection candidates;
  std::size_t gold_entry = 0;
  Span gold_span;  // offsets of gold_entry in the knowledge token stream
  std::vector<TokenId> response;
  PolicyLabel response_policy;
};

struct ExampleSet {
  std::vector<TrainingExample> examples;
  std::size_t skipped_ungrounded = 0;
};

// Parses one JSONL record; `line` is used in error messages. Does not tokenize.
Dialogue dialogue_from_json(const nlohmann::json& record, std::size_t line);

// Reads a JSONL corpus in file order. Blank lines are skipped.
std::vector<Dialogue> load_corpus(const std::filesystem::path& path);
// Same, then tokenizes every utterance and entry and fills the offset table.
std::vector<Dialogue> load_corpus(const std::filesystem::path& path, const Tokenizer& tokenizer);

void tokenize_dialogue(Dialogue& dialogue, const Tokenizer& tokenizer);

// All utterance and knowledge texts, for vocabulary building.
std::vector<std::string> corpus_texts(const std::vector<Dialogue>& dialogues);

// One example per grounded agent turn, context = up to `window` preceding
// turns. A dialogue opening with an agent turn gets the initial topic as a
// one-turn user context. Ungrounded agent turns are counted and skipped.
ExampleSet build_examples(const Dialogue& dialogue, std::size_t window = 3);
ExampleSet build_examples(const std::vector<Dialogue>& dialogues, std::size_t window = 3);

struct TruncatedTurn {
  std::vector<TokenId> tokens;
  PolicyLabel policy;
};

// Keeps the most recent context within `budget` tokens: whole oldest turns go
// first, then the oldest surviving turn loses tokens from its left.
std::vector<TruncatedTurn> truncate_context(const std::vector<ContextTurn>& context, std::size_t budget);

// Planner input: [<cls>; context (oldest first); <esp>; whole entries].
struct PlannerInput {
  std::vector<TokenId> tokens;
  std::vector<int> segments;                       // 0 = <cls>+context, 1 = <esp>+knowledge
  std::vector<std::optional<PolicyLabel>> policies;  // set on context tokens only
  std::size_t knowledge_begin = 0;                 // position of the first knowledge token
  std::size_t first_entry = 0;                     // index of the first entry in this chunk
  std::vector<Span> entry_spans;                   // sequence positions of each entry in the chunk

  std::size_t size() const { return tokens.size(); }
  std::size_t entry_count() const { return entry_spans.size(); }
  std::size_t knowledge_end() const { return entry_spans.empty() ? knowledge_begin : entry_spans.back().end; }
  bool contains_entry(std::size_t entry) const {
    return entry >= first_entry && entry < first_entry + entry_spans.size();
  }
};

// Packs as many whole entries starting at `first_entry` as fit in max_len.
// Throws DataError if even entry `first_entry` alone does not fit.
PlannerInput assemble_planner_input(const TrainingExample& example, std::size_t max_len = 512,
                                    std::size_t context_budget = 60, std::size_t first_entry = 0);

// Splits the candidates at entry boundaries into consecutive chunks, each
// repeating the context.
std::vector<PlannerInput> assemble_planner_chunks(const TrainingExample& example, std::size_t max_len = 512,
                                                  std::size_t context_budget = 60);

std::string_view to_string(Speaker s);

}  // namespace pdgd
