#include "pdgd/corpus.hpp"

#include <algorithm>
#include <fstream>

#include "pdgd/error.hpp"

namespace pdgd {

using nlohmann::json;

std::string_view to_string(Speaker s) { return s == Speaker::kAgent ? "agent" : "user"; }

std::size_t KnowledgeCollection::total_tokens() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tokens.size();
  return n;
}

std::vector<TokenId> KnowledgeCollection::stream() const {
  std::vector<TokenId> out;
  out.reserve(total_tokens());
  for (const auto& e : entries) out.insert(out.end(), e.tokens.begin(), e.tokens.end());
  return out;
}

void KnowledgeCollection::compute_offsets() {
  offsets.clear();
  std::size_t at = 0;
  for (const auto& e : entries) {
    if (e.tokens.empty()) throw DataError("knowledge entry has no tokens");
    offsets.push_back(Span{at, at + e.tokens.size() - 1});
    at += e.tokens.size();
  }
}

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

std::string require_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) fail(line, std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

bool is_null_or_absent(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() || it->is_null();
}

}  // namespace

Dialogue dialogue_from_json(const json& record, std::size_t line) {
  if (!record.is_object()) fail(line, "record is not a JSON object");
  Dialogue d;
  d.id = require_string(record, "id", line);
  d.initial_topic = require_string(record, "initial_topic", line);

  auto kit = record.find("knowledge");
  if (kit == record.end() || !kit->is_array()) fail(line, "missing array field 'knowledge'");
  for (const auto& k : *kit) {
    if (!k.is_object()) fail(line, "knowledge entry is not an object");
    KnowledgeEntry e;
    e.topic = require_string(k, "topic", line);
    e.text = require_string(k, "text", line);
    if (e.topic.empty()) fail(line, "knowledge entry with empty topic");
    d.knowledge.entries.push_back(std::move(e));
  }

  auto tit = record.find("turns");
  if (tit == record.end() || !tit->is_array()) fail(line, "missing array field 'turns'");
  if (tit->empty()) fail(line, "dialogue '" + d.id + "' has no turns");
  for (const auto& t : *tit) {
    if (!t.is_object()) fail(line, "turn is not an object");
    Utterance u;
    const std::string speaker = require_string(t, "speaker", line);
    if (speaker == "user") {
      u.speaker = Speaker::kUser;
    } else if (speaker == "agent") {
      u.speaker = Speaker::kAgent;
    } else {
      fail(line, "unknown speaker '" + speaker + "'");
    }
    u.text = require_string(t, "text", line);
    if (!is_null_or_absent(t, "grounding")) {
      const auto& g = t.at("grounding");
      if (!g.is_number_integer()) fail(line, "grounding must be an integer or null");
      const auto idx = g.get<long long>();
      if (idx < 0 || static_cast<std::size_t>(idx) >= d.knowledge.entries.size())
        fail(line, "grounding " + std::to_string(idx) + " out of range for " +
                       std::to_string(d.knowledge.entries.size()) + " knowledge entries");
      u.grounding = static_cast<std::size_t>(idx);
    }
    if (!is_null_or_absent(t, "da")) {
      const auto& v = t.at("da");
      if (!v.is_string()) fail(line, "da must be a string or null");
      u.da = parse_dialogue_act(v.get<std::string>());
      if (!u.da) fail(line, "unknown da label '" + v.get<std::string>() + "'");
    }
    if (!is_null_or_absent(t, "topic_intent")) {
      const auto& v = t.at("topic_intent");
      if (!v.is_string()) fail(line, "topic_intent must be a string or null");
      u.topic_intent = parse_topic_intent(v.get<std::string>());
      if (!u.topic_intent) fail(line, "unknown topic_intent label '" + v.get<std::string>() + "'");
    }
    d.turns.push_back(std::move(u));
  }
  return d;
}

std::vector<Dialogue> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path.string() + "'");
  std::vector<Dialogue> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(line, std::string("malformed JSON: ") + e.what());
    }
    out.push_back(dialogue_from_json(record, line));
  }
  return out;
}

std::vector<Dialogue> load_corpus(const std::filesystem::path& path, const Tokenizer& tokenizer) {
  auto dialogues = load_corpus(path);
  for (auto& d : dialogues) tokenize_dialogue(d, tokenizer);
  return dialogues;
}

void tokenize_dialogue(Dialogue& dialogue, const Tokenizer& tokenizer) {
  dialogue.initial_topic_tokens = tokenizer.encode(dialogue.initial_topic);
  for (auto& u : dialogue.turns) u.tokens = tokenizer.encode(u.text);
  for (auto& e : dialogue.knowledge.entries) e.tokens = tokenizer.encode(e.text);
  dialogue.knowledge.compute_offsets();
}

std::vector<std::string> corpus_texts(const std::vector<Dialogue>& dialogues) {
  std::vector<std::string> texts;
  for (const auto& d : dialogues) {
    texts.push_back(d.initial_topic);
    for (const auto& u : d.turns) texts.push_back(u.text);
    for (const auto& e : d.knowledge.entries) {
      texts.push_back(e.topic);
      texts.push_back(e.text);
    }
  }
  return texts;
}

ExampleSet build_examples(const Dialogue& dialogue, std::size_t window) {
  if (window == 0) throw ContractError("context window must be at least 1");
  if (dialogue.knowledge.offsets.size() != dialogue.knowledge.entries.size() ||
      dialogue.initial_topic_tokens.empty())
    throw ContractError("dialogue '" + dialogue.id + "' is not tokenized");
  ExampleSet out;
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    const Utterance& turn = dialogue.turns[i];
    if (turn.speaker != Speaker::kAgent) continue;
    if (!turn.grounding) {
      ++out.skipped_ungrounded;
      continue;
    }
    auto policy = turn.policy();
    if (!policy)
      throw DataError("dialogue '" + dialogue.id + "' turn " + std::to_string(i) +
                      " has no policy labels; annotate the corpus first");
    TrainingExample ex;
    ex.dialogue_id = dialogue.id;
    ex.turn_index = i;
    const std::size_t first = i > window ? i - window : 0;
    for (std::size_t j = first; j < i; ++j) {
      const Utterance& c = dialogue.turns[j];
      auto cp = c.policy();
      if (!cp)
        throw DataError("dialogue '" + dialogue.id + "' turn " + std::to_string(j) +
                        " has no policy labels; annotate the corpus first");
      ex.context.push_back(ContextTurn{c.speaker, c.tokens, *cp});
    }
    if (ex.context.empty()) {
      // Opening agent turn: the initial topic phrase stands in for the context.
      ContextTurn topic;
      topic.speaker = Speaker::kUser;
      topic.tokens = dialogue.initial_topic_tokens;
      topic.policy = PolicyLabel{DialogueAct::kInform, TopicIntent::kMiningInitial};
      ex.context.push_back(std::move(topic));
    }
    ex.candidates = dialogue.knowledge;
    ex.gold_entry = *turn.grounding;
    ex.gold_span = dialogue.knowledge.offsets[ex.gold_entry];
    ex.response = turn.tokens;
    ex.response_policy = *policy;
    if (ex.response.empty()) throw DataError("dialogue '" + dialogue.id + "' has an untokenized response");
    out.examples.push_back(std::move(ex));
  }
  return out;
}

ExampleSet build_examples(const std::vector<Dialogue>& dialogues, std::size_t window) {
  ExampleSet all;
  for (const auto& d : dialogues) {
    auto part = build_examples(d, window);
    all.skipped_ungrounded += part.skipped_ungrounded;
    for (auto& ex : part.examples) all.examples.push_back(std::move(ex));
  }
  return all;
}

std::vector<TruncatedTurn> truncate_context(const std::vector<ContextTurn>& context, std::size_t budget) {
  std::vector<TruncatedTurn> kept;
  std::size_t used = 0;
  for (auto it = context.rbegin(); it != context.rend() && used < budget; ++it) {
    const std::size_t room = budget - used;
    TruncatedTurn t;
    t.policy = it->policy;
    if (it->tokens.size() <= room) {
      t.tokens = it->tokens;
    } else {
      t.tokens.assign(it->tokens.end() - static_cast<std::ptrdiff_t>(room), it->tokens.end());
    }
    used += t.tokens.size();
    kept.push_back(std::move(t));
  }
  std::reverse(kept.begin(), kept.end());
  return kept;
}

PlannerInput assemble_planner_input(const TrainingExample& example, std::size_t max_len,
                                    std::size_t context_budget, std::size_t first_entry) {
  if (max_len < 3) throw ContractError("max_len too small for the special tokens");
  if (first_entry >= example.candidates.size()) throw ContractError("first_entry out of range");
  PlannerInput in;
  in.first_entry = first_entry;
  in.tokens.push_back(special_id(Special::kCls));
  in.segments.push_back(0);
  in.policies.emplace_back(std::nullopt);

  const std::size_t budget = std::min(context_budget, max_len - 3);
  for (const auto& turn : truncate_context(example.context, budget)) {
    for (TokenId id : turn.tokens) {
      in.tokens.push_back(id);
      in.segments.push_back(0);
      in.policies.emplace_back(turn.policy);
    }
  }
  in.tokens.push_back(special_id(Special::kEsp));
  in.segments.push_back(1);
  in.policies.emplace_back(std::nullopt);
  in.knowledge_begin = in.tokens.size();

  for (std::size_t e = first_entry; e < example.candidates.size(); ++e) {
    const auto& entry = example.candidates.entries[e];
    if (in.tokens.size() + entry.tokens.size() > max_len) {
      if (e == first_entry)
        throw DataError("knowledge entry " + std::to_string(e) + " (" + std::to_string(entry.tokens.size()) +
                        " tokens) does not fit in a planner input of " + std::to_string(max_len) + " tokens");
      break;
    }
    const std::size_t start = in.tokens.size();
    for (TokenId id : entry.tokens) {
      in.tokens.push_back(id);
      in.segments.push_back(1);
      in.policies.emplace_back(std::nullopt);
    }
    in.entry_spans.push_back(Span{start, in.tokens.size() - 1});
  }
  return in;
}

std::vector<PlannerInput> assemble_planner_chunks(const TrainingExample& example, std::size_t max_len,
                                                  std::size_t context_budget) {
  if (example.candidates.size() == 0) throw DataError("example has no knowledge candidates");
  std::vector<PlannerInput> chunks;
  std::size_t next = 0;
  while (next < example.candidates.size()) {
    chunks.push_back(assemble_planner_input(example, max_len, context_budget, next));
    next += chunks.back().entry_count();
  }
  return chunks;
}

}  // namespace pdgd
