#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pdgd/checkpoint.hpp"
#include "pdgd/corpus.hpp"
#include "pdgd/error.hpp"
#include "pdgd/labels.hpp"
#include "support.hpp"

using namespace pdgd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("pdgd_corpus_" + name);
  std::ofstream(p) << body;
  return p;
}

std::string words(std::size_t n, const std::string& stem) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

json labeled_turn(const std::string& speaker, const std::string& text, json grounding = nullptr) {
  return {{"speaker", speaker}, {"text", text}, {"grounding", grounding},
          {"da", speaker == "agent" ? "inform" : "question"}, {"topic_intent", "mining_initial"}};
}

Dialogue load_one(const json& record, const Tokenizer** tok_out = nullptr) {
  static std::vector<std::unique_ptr<WhitespaceTokenizer>> keep;
  Dialogue d = dialogue_from_json(record, 1);
  keep.push_back(std::make_unique<WhitespaceTokenizer>(testing::tokenizer_for({d})));
  tokenize_dialogue(d, *keep.back());
  if (tok_out) *tok_out = keep.back().get();
  return d;
}

}  // namespace

TEST_CASE("labels round trip through their names") {
  for (auto a : kAllDialogueActs) CHECK(parse_dialogue_act(std::string(to_string(a))) == a);
  for (auto t : kAllTopicIntents) CHECK(parse_topic_intent(std::string(to_string(t))) == t);
  CHECK_FALSE(parse_dialogue_act("greeting").has_value());
  CHECK(to_string(TopicIntent::kStartingNew) == "starting_new");
}

TEST_CASE("whitespace tokenizer") {
  const std::vector<std::string> texts{"b a a", "c B"};
  auto tok = WhitespaceTokenizer::build(texts);
  CHECK(tok.vocab_size() == kNumSpecials + 3);
  // frequency order, ties lexicographic: a(2) b(2) c(1)
  CHECK(tok.token(kNumSpecials) == "a");
  CHECK(tok.token(kNumSpecials + 1) == "b");
  CHECK(tok.encode("A  b\tzzz") ==
        std::vector<TokenId>{kNumSpecials, kNumSpecials + 1, special_id(Special::kUnk)});
  CHECK(tok.encode("   ") == std::vector<TokenId>{special_id(Special::kUnk)});
  CHECK(tok.decode(tok.encode("c a")) == "c a");
  auto copy = WhitespaceTokenizer::from_vocabulary(tok.vocabulary());
  CHECK(copy.identity() == tok.identity());
  const std::vector<std::string> other{"b a a", "c d"};
  CHECK(WhitespaceTokenizer::build(other).identity() != tok.identity());
  auto bad = tok.vocabulary();
  std::swap(bad[0], bad[1]);
  CHECK_THROWS_AS(WhitespaceTokenizer::from_vocabulary(bad), DataError);
}

TEST_CASE("load_corpus") {
  SUBCASE("one dialogue with two turns") {
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", {{{"topic", "t"}, {"text", "k"}}}},
           {"turns", {labeled_turn("user", "hi"), labeled_turn("agent", "k", 0)}}, {"extra", 1}};
    auto p = temp_file("one.jsonl", d.dump() + "\n");
    auto out = load_corpus(p);
    REQUIRE(out.size() == 1);
    CHECK(out[0].turns.size() == 2);
    CHECK(out[0].turns[1].grounding == std::size_t{0});
  }
  SUBCASE("empty file") { CHECK(load_corpus(temp_file("empty.jsonl", "")).empty()); }
  SUBCASE("grounding past the knowledge list") {
    json k = json::array();
    for (int i = 0; i < 5; ++i) k.push_back({{"topic", "t"}, {"text", "k" + std::to_string(i)}});
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", k}, {"turns", {labeled_turn("agent", "k", 7)}}};
    auto p = temp_file("range.jsonl", d.dump() + "\n");
    CHECK_THROWS_WITH_AS(load_corpus(p), doctest::Contains("line 1"), DataError);
  }
  SUBCASE("malformed line names its number") {
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", json::array()}, {"turns", {labeled_turn("user", "a")}}};
    auto p = temp_file("bad.jsonl", d.dump() + "\n\n{oops\n");
    CHECK_THROWS_WITH_AS(load_corpus(p), doctest::Contains("line 3"), DataError);
  }
  SUBCASE("unknown labels are rejected") {
    json t = labeled_turn("agent", "k", 0);
    t["da"] = "greeting";
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", {{{"topic", "t"}, {"text", "k"}}}}, {"turns", {t}}};
    CHECK_THROWS_AS(load_corpus(temp_file("label.jsonl", d.dump())), DataError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_corpus("/nonexistent/x.jsonl"), DataError); }
}

TEST_CASE("knowledge offsets partition the token stream") {
  json k = json::array();
  const std::vector<std::size_t> lengths{7, 3, 20, 12, 1};
  for (std::size_t i = 0; i < lengths.size(); ++i)
    k.push_back({{"topic", "t"}, {"text", words(lengths[i], "e" + std::to_string(i) + "w")}});
  json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", k}, {"turns", {labeled_turn("agent", "hello", 3)}}};
  Dialogue dlg = load_one(d);
  const auto& kc = dlg.knowledge;
  const auto stream = kc.stream();
  std::size_t expected_start = 0;
  for (std::size_t i = 0; i < kc.size(); ++i) {
    CHECK(kc.offsets[i].start == expected_start);
    CHECK(kc.offsets[i].length() == lengths[i]);
    std::vector<TokenId> slice(stream.begin() + kc.offsets[i].start, stream.begin() + kc.offsets[i].end + 1);
    CHECK(slice == kc.entries[i].tokens);
    expected_start = kc.offsets[i].end + 1;
  }
  CHECK(expected_start == stream.size());

  // Entry 3 starts after 7 + 3 + 20 = 30 tokens and spans 12.
  auto ex = build_examples(dlg).examples;
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].gold_span == Span{30, 41});
}

TEST_CASE("build_examples windows the context") {
  json k{{{"topic", "t"}, {"text", "alpha beta"}}, {{"topic", "t"}, {"text", "gamma"}}};
  SUBCASE("user agent user agent") {
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", k},
           {"turns", {labeled_turn("user", "u one"), labeled_turn("agent", "a one", 0), labeled_turn("user", "u two"),
                      labeled_turn("agent", "a two", 1)}}};
    Dialogue dlg = load_one(d);
    auto set = build_examples(dlg);
    REQUIRE(set.examples.size() == 2);
    const auto& second = set.examples[1];
    REQUIRE(second.context.size() == 3);
    CHECK(second.context[0].tokens == dlg.turns[0].tokens);
    CHECK(second.context[2].tokens == dlg.turns[2].tokens);
    CHECK(second.response == dlg.turns[3].tokens);
    CHECK(set.examples[0].context.size() == 1);
  }
  SUBCASE("a lone agent turn gets the initial topic as context") {
    json d{{"id", "x"}, {"initial_topic", "the topic"}, {"knowledge", k}, {"turns", {labeled_turn("agent", "a", 1)}}};
    Dialogue dlg = load_one(d);
    auto set = build_examples(dlg);
    REQUIRE(set.examples.size() == 1);
    REQUIRE(set.examples[0].context.size() == 1);
    CHECK(set.examples[0].context[0].tokens == dlg.initial_topic_tokens);
  }
  SUBCASE("ungrounded agent turns are skipped and counted") {
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", k},
           {"turns", {labeled_turn("user", "u"), labeled_turn("agent", "a"), labeled_turn("user", "v"),
                      labeled_turn("agent", "b", 0)}}};
    auto set = build_examples(load_one(d));
    CHECK(set.examples.size() == 1);
    CHECK(set.skipped_ungrounded == 1);
  }
  SUBCASE("unlabeled modeled turn is a data error") {
    json t = labeled_turn("agent", "a", 0);
    t["topic_intent"] = nullptr;
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", k}, {"turns", {t}}};
    CHECK_THROWS_AS(build_examples(load_one(d)), DataError);
  }
  SUBCASE("deterministic") {
    json d{{"id", "x"}, {"initial_topic", "t"}, {"knowledge", k},
           {"turns", {labeled_turn("user", "u"), labeled_turn("agent", "a", 1)}}};
    Dialogue dlg = load_one(d);
    auto a = build_examples(dlg).examples;
    auto b = build_examples(dlg).examples;
    REQUIRE(a.size() == b.size());
    CHECK(a[0].response == b[0].response);
    CHECK(a[0].gold_span == b[0].gold_span);
  }
}

TEST_CASE("context truncation keeps the most recent tokens") {
  std::vector<ContextTurn> ctx(3);
  for (std::size_t t = 0; t < 3; ++t)
    for (int i = 0; i < 34; ++i) ctx[t].tokens.push_back(static_cast<TokenId>(100 * (t + 1) + i));
  ctx[1].tokens.resize(32);  // 34 + 32 + 34 = 100 tokens
  auto out = truncate_context(ctx, 60);
  std::size_t total = 0;
  for (const auto& t : out) total += t.tokens.size();
  CHECK(total == 60);
  REQUIRE(out.size() == 2);
  CHECK(out[1].tokens == ctx[2].tokens);
  CHECK(out[0].tokens.size() == 26);
  CHECK(out[0].tokens.back() == ctx[1].tokens.back());
  CHECK(truncate_context(ctx, 1000).size() == 3);
}

TEST_CASE("planner input layout") {
  TrainingExample ex;
  ContextTurn turn;
  for (int i = 0; i < 10; ++i) turn.tokens.push_back(20 + i);
  turn.policy = PolicyLabel{DialogueAct::kQuestion, TopicIntent::kStartingNew};
  ex.context.push_back(turn);
  for (int e = 0; e < 4; ++e) {
    KnowledgeEntry k;
    k.topic = "t";
    for (int i = 0; i < 5; ++i) k.tokens.push_back(40 + e * 5 + i);
    ex.candidates.entries.push_back(k);
  }
  ex.candidates.compute_offsets();

  auto in = assemble_planner_input(ex);
  CHECK(in.size() == 10 + 20 + 2);
  CHECK(in.tokens[0] == special_id(Special::kCls));
  CHECK(std::count(in.tokens.begin(), in.tokens.end(), special_id(Special::kEsp)) == 1);
  CHECK(in.knowledge_begin == 12);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const bool context = i >= 1 && i <= 10;
    CHECK(in.policies[i].has_value() == context);
    CHECK(in.segments[i] == (i <= 10 ? 0 : 1));
  }
  CHECK(in.entry_spans[2] == Span{22, 26});

  SUBCASE("long knowledge is split at entry boundaries") {
    auto chunks = assemble_planner_chunks(ex, 20, 60);
    REQUIRE(chunks.size() == 4);
    std::size_t next = 0;
    for (const auto& c : chunks) {
      CHECK(c.size() <= 20);
      CHECK(c.first_entry == next);
      CHECK(std::equal(c.tokens.begin() + 1, c.tokens.begin() + 11, turn.tokens.begin()));
      next += c.entry_count();
    }
    CHECK(next == 4);
    CHECK(assemble_planner_chunks(ex, 24, 60).size() == 2);
    CHECK(assemble_planner_chunks(ex, 32, 60).size() == 1);
  }
  SUBCASE("an entry that cannot fit is a data error") {
    CHECK_THROWS_AS(assemble_planner_input(ex, 14, 60), DataError);
  }
  SUBCASE("context budget clips the context") {
    auto small = assemble_planner_input(ex, 512, 4);
    CHECK(small.knowledge_begin == 6);
  }
}

TEST_CASE("checkpoint round trip") {
  Checkpoint c;
  c.kind = "demo";
  c.meta["a"] = "1";
  c.vocabulary = {"<pad>", "x"};
  c.tensors.emplace_back("w", testing::random_matrix(2, 3, 1));
  const fs::path p = fs::temp_directory_path() / "pdgd_ckpt_roundtrip.bin";
  save_checkpoint(p, c);
  Checkpoint back = load_checkpoint(p);
  CHECK(back.kind == "demo");
  CHECK(back.meta_int("a") == 1);
  CHECK(back.vocabulary == c.vocabulary);
  REQUIRE(back.tensors.size() == 1);
  CHECK((back.tensors[0].second.array() == c.tensors[0].second.array()).all());
  CHECK(file_digest(p).size() == 64);
  CHECK_THROWS_AS(back.require_meta("missing"), DataError);
  std::ofstream(p) << "garbage";
  CHECK_THROWS_AS(load_checkpoint(p), DataError);
}
