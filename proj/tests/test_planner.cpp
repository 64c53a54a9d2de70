#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pdgd/error.hpp"
#include "pdgd/planner.hpp"
#include "support.hpp"

using namespace pdgd;
using testing::check_gradients;

namespace {

constexpr int kVocab = 60;

TrainingExample make_example(std::vector<std::size_t> entry_lengths, std::size_t gold, std::uint64_t seed,
                             PolicyLabel policy = {DialogueAct::kInform, TopicIntent::kStartingNew}) {
  Rng rng(seed);
  auto word = [&] { return static_cast<TokenId>(kNumSpecials + rng() % (kVocab - kNumSpecials)); };
  TrainingExample ex;
  ex.dialogue_id = "d" + std::to_string(seed);
  for (int t = 0; t < 2; ++t) {
    ContextTurn turn;
    turn.speaker = t == 0 ? Speaker::kUser : Speaker::kAgent;
    for (int i = 0; i < 4; ++i) turn.tokens.push_back(word());
    turn.policy = PolicyLabel{t == 0 ? DialogueAct::kQuestion : DialogueAct::kInform, TopicIntent::kMiningInitial};
    ex.context.push_back(turn);
  }
  for (std::size_t len : entry_lengths) {
    KnowledgeEntry e;
    e.topic = "t";
    for (std::size_t i = 0; i < len; ++i) e.tokens.push_back(word());
    ex.candidates.entries.push_back(e);
  }
  ex.candidates.compute_offsets();
  ex.gold_entry = gold;
  ex.gold_span = ex.candidates.offsets[gold];
  ex.response = {word(), word()};
  ex.response_policy = policy;
  return ex;
}

PlannerConfig tiny_planner(int max_len = 64) {
  PlannerConfig c;
  c.shape = testing::tiny_shape();
  c.max_len = max_len;
  return c;
}

Var row_logits(Tape& t, std::vector<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return t.constant(m);
}

}  // namespace

TEST_CASE("input embeddings are the sum of their tables") {
  PlannerModel model(kVocab, tiny_planner(), 1);
  const auto ex = make_example({3, 4}, 1, 2);
  const auto in = assemble_planner_input(ex, 64, 60);
  Tape t(false);
  const Matrix x = model.input_embeddings(t, in).value();
  const std::size_t ctx = 2;  // a context token
  const auto& pol = *in.policies[ctx];
  const Matrix expected_ctx = model.token_embedding().value.row(in.tokens[ctx]) +
                              model.position_embedding().value.row(ctx) + model.segment_embedding().value.row(0) +
                              model.da_embedding().value.row(index_of(pol.da)) +
                              model.topic_embedding().value.row(index_of(pol.topic_intent));
  CHECK(testing::max_abs_diff(x.row(ctx), expected_ctx) < 1e-15);
  const std::size_t k = in.knowledge_begin + 1;
  const Matrix expected_k = model.token_embedding().value.row(in.tokens[k]) + model.position_embedding().value.row(k) +
                            model.segment_embedding().value.row(1);
  CHECK(testing::max_abs_diff(x.row(k), expected_k) < 1e-15);
}

TEST_CASE("policy embeddings change the encoder output") {
  PlannerModel model(kVocab, tiny_planner(), 1);
  auto ex = make_example({3, 4}, 0, 3);
  const auto a = model.predict(assemble_planner_input(ex, 64, 60));
  ex.context[0].policy.da = DialogueAct::kCommissive;
  const auto b = model.predict(assemble_planner_input(ex, 64, 60));
  CHECK((a.start - b.start).cwiseAbs().maxCoeff() > 0.0);
  CHECK((a.da - b.da).cwiseAbs().maxCoeff() > 0.0);
  ex.context[0].policy.da = DialogueAct::kQuestion;
  const auto c = model.predict(assemble_planner_input(ex, 64, 60));
  CHECK((a.start.array() == c.start.array()).all());
}

TEST_CASE("planner rejects inputs longer than its position table") {
  PlannerModel model(kVocab, tiny_planner(16), 1);
  const auto ex = make_example({10, 10}, 0, 4);
  CHECK_THROWS_AS(model.predict(assemble_planner_input(ex, 64, 60)), ContractError);
}

TEST_CASE("knowledge selection loss") {
  Tape t;
  const std::vector<double> uniform(10, 0.0);
  CHECK(ks_loss(row_logits(t, uniform), row_logits(t, uniform), Span{2, 5}).scalar() ==
        doctest::Approx(-2.0 * std::log(0.1)).epsilon(1e-12));
  // logit ln(9) at the gold position among nine zeros: P = 9 / 18 = 0.5
  std::vector<double> half(10, 0.0);
  half[3] = std::log(9.0);
  CHECK(ks_loss(row_logits(t, half), row_logits(t, half), Span{3, 3}).scalar() ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  std::vector<double> sure(10, -1e4);
  sure[4] = 0.0;
  CHECK(ks_loss(row_logits(t, sure), row_logits(t, sure), Span{4, 4}).scalar() == doctest::Approx(0.0));
  CHECK_THROWS_AS(ks_loss(row_logits(t, uniform), row_logits(t, uniform), Span{2, 10}), ContractError);
}

TEST_CASE("policy losses") {
  Tape t;
  auto l = policy_losses(row_logits(t, {0, 0, 0, 0}), row_logits(t, {0, 0, 0}),
                         PolicyLabel{DialogueAct::kDirective, TopicIntent::kFollowingNew});
  CHECK(l.da.scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(l.topic.scalar() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  auto sure = policy_losses(row_logits(t, {-1e4, 0, -1e4, -1e4}), row_logits(t, {0, -1e4, -1e4}),
                            PolicyLabel{DialogueAct::kQuestion, TopicIntent::kMiningInitial});
  CHECK(sure.da.scalar() == doctest::Approx(0.0));
  CHECK(sure.topic.scalar() == doctest::Approx(0.0));
}

TEST_CASE("uncertainty-weighted combination") {
  Tape t;
  auto c = [&](double da, double topic, double ks, double mu1, double mu2) {
    return combined_loss(row_logits(t, {da}), row_logits(t, {topic}), row_logits(t, {ks}),
                         row_logits(t, {std::log(mu1)}), row_logits(t, {std::log(mu2)}))
        .scalar();
  };
  CHECK(c(0.5, 0.5, 1.0, 1, 1) == 2.0);
  CHECK(c(0, 0, 0, std::exp(1.0), 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(c(1.0, 1.0, 2.0, 2, 1) == doctest::Approx(0.25 * 2 + 2 + std::log(2.0)).epsilon(1e-12));
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const double a = (rng() % 1000) / 97.0, b = (rng() % 1000) / 89.0, k = (rng() % 1000) / 83.0;
    CHECK(c(a, b, k, 1, 1) == a + b + k);
  }
}

TEST_CASE("combined loss gradients and stationary point") {
  Parameter da("da", Matrix::Constant(1, 1, 0.7)), topic("topic", Matrix::Constant(1, 1, 0.4));
  Parameter ks("ks", Matrix::Constant(1, 1, 1.3));
  Parameter mu1("mu1", Matrix::Constant(1, 1, 0.3)), mu2("mu2", Matrix::Constant(1, 1, -0.2));
  auto r = check_gradients({&da, &topic, &ks, &mu1, &mu2}, [&](Tape& t) {
    return combined_loss(t.param(da), t.param(topic), t.param(ks), t.param(mu1), t.param(mu2));
  });
  CHECK(r.max_rel_error < 1e-6);

  // d/dmu2 vanishes at mu2^2 = 2 L_ks.
  mu2.value(0, 0) = 0.5 * std::log(2.0 * ks.value(0, 0));
  Tape t;
  Var l = combined_loss(t.param(da), t.param(topic), t.param(ks), t.param(mu1), t.param(mu2));
  t.backward(l);
  CHECK(std::abs(mu2.grad(0, 0)) < 1e-12);
}

TEST_CASE("ks loss gradient w.r.t. logits") {
  Parameter s("s", testing::random_matrix(1, 12, 4)), e("e", testing::random_matrix(1, 12, 5));
  auto r = check_gradients({&s, &e}, [&](Tape& t) { return ks_loss(t.param(s), t.param(e), Span{3, 7}); });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("span selection") {
  std::vector<double> start(30, 0.0), end(30, 0.0);
  SUBCASE("peaks inside the limit") {
    start[10] = 5;
    end[19] = 5;
    auto p = select_span(start, end, 2, 29, 90);
    CHECK(p.start == 10);
    CHECK(p.end == 19);
  }
  SUBCASE("single-token span") {
    start[5] = 5;
    end[5] = 5;
    auto p = select_span(start, end, 2, 29, 90);
    CHECK(p.start == 5);
    CHECK(p.end == 5);
  }
  SUBCASE("ties go to the earliest pair") {
    auto p = select_span(start, end, 4, 29, 90);
    CHECK(p.start == 4);
    CHECK(p.end == 4);
  }
  SUBCASE("length limit") {
    start[3] = 5;
    end[20] = 5;
    auto p = select_span(start, end, 0, 29, 5);
    CHECK(p.end - p.start + 1 <= 5);
    CHECK(p.start <= p.end);
  }
  SUBCASE("empty region") { CHECK_THROWS_AS(select_span(start, end, 5, 40, 90), ContractError); }
  SUBCASE("random logits agree with pair enumeration") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> s(20), e(20);
      for (auto& v : s) v = static_cast<double>(rng() % 7);
      for (auto& v : e) v = static_cast<double>(rng() % 7);
      const std::size_t lo = rng() % 10, hi = lo + rng() % 10, lim = 1 + rng() % 6;
      double best = -1e300;
      std::size_t bs = 0, be = 0;
      for (std::size_t a = lo; a <= hi; ++a)
        for (std::size_t b = a; b <= hi && b - a + 1 <= lim; ++b)
          if (s[a] + e[b] > best) {
            best = s[a] + e[b];
            bs = a;
            be = b;
          }
      auto p = select_span(s, e, lo, hi, lim);
      CHECK(p.start == bs);
      CHECK(p.end == be);
    }
  }
}

TEST_CASE("span revision") {
  const std::vector<Span> entries{{0, 9}, {10, 19}};
  CHECK(revise_span(10, 19, entries) == 1);
  CHECK(revise_span(12, 17, entries) == 1);
  CHECK(revise_span(3, 14, entries) == 0);
  CHECK(revise_span(5, 14, entries) == 0);   // 5 vs 5: earlier entry
  CHECK(revise_span(15, 3, entries) == 1);   // start after end: the start's entry
  CHECK_THROWS_AS(revise_span(25, 30, entries), ContractError);

  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const auto seg = testing::random_segmentation(rng, 3, 1 + rng() % 6, 8);
    const std::size_t limit = seg.back().end + 3;
    const std::size_t s = rng() % limit, e = rng() % limit;
    const auto expected = testing::oracle_revise(s, e, seg);
    if (!expected) {
      CHECK_THROWS_AS(revise_span(s, e, seg), ContractError);
      continue;
    }
    CHECK(revise_span(s, e, seg) == *expected);
  }
}

TEST_CASE("chunk choice") {
  std::vector<ChunkResult> r(3);
  r[0].span.score = -3.0;
  r[1].span.score = -1.0;
  r[2].span.score = -2.0;
  CHECK(pick_best_chunk(r) == 1);
  r[2].span.score = -1.0;
  CHECK(pick_best_chunk(r) == 1);
  CHECK_THROWS_AS(pick_best_chunk(std::vector<ChunkResult>{}), ContractError);
}

TEST_CASE("selection over chunks") {
  PlannerModel model(kVocab, tiny_planner(64), 5);
  SUBCASE("one chunk equals a single pass") {
    const auto ex = make_example({4, 5, 3}, 1, 6);
    const auto sel = select_knowledge_over_chunks(model, ex);
    const auto direct = select_in_chunk(model, assemble_planner_input(ex, 64, 60));
    CHECK(sel.entry == direct.entry);
    CHECK(sel.chunk == 0);
    CHECK(sel.span.score == direct.span.score);
  }
  SUBCASE("many chunks: the winner has the best score") {
    const auto ex = make_example({12, 12, 12, 12, 12}, 3, 7);
    const auto chunks = assemble_planner_chunks(ex, 40, 60);
    REQUIRE(chunks.size() > 1);
    PlannerConfig cfg = tiny_planner(40);
    PlannerModel small(kVocab, cfg, 5);
    const auto sel = select_knowledge_over_chunks(small, ex);
    double best = -1e300;
    for (const auto& c : chunks) best = std::max(best, select_in_chunk(small, c).span.score);
    CHECK(sel.span.score == best);
    CHECK(chunks[sel.chunk].contains_entry(sel.entry));
  }
}

TEST_CASE("sentence mode restricts the end to entry-final positions") {
  PlannerConfig cfg = tiny_planner();
  cfg.sentence_mode = true;
  PlannerModel model(kVocab, cfg, 9);
  const auto ex = make_example({3, 4, 2}, 2, 10);
  const auto in = assemble_planner_input(ex, 64, 60);
  const auto logits = model.predict(in);
  for (std::size_t i = 0; i < in.size(); ++i) {
    bool final_pos = false;
    for (const auto& s : in.entry_spans) final_pos = final_pos || s.end == i;
    CHECK((logits.end(static_cast<Eigen::Index>(i)) > -1e8) == final_pos);
  }
  const auto sel = select_in_chunk(model, in);
  CHECK(sel.span.start == in.entry_spans[sel.entry].start);
}

TEST_CASE("planner training") {
  std::vector<TrainingExample> data;
  for (std::uint64_t s = 0; s < 6; ++s)
    data.push_back(make_example({3, 4, 3}, s % 3, 20 + s,
                                PolicyLabel{kAllDialogueActs[s % 4], kAllTopicIntents[s % 3]}));
  TrainingOptions opt;
  opt.epochs = 2;
  opt.adam.lr = 1e-3;
  SUBCASE("empty set") {
    PlannerModel m(kVocab, tiny_planner(), 1);
    CHECK_THROWS_AS(train_planner(m, {}, opt), DataError);
  }
  SUBCASE("deterministic given the seed, and records every part") {
    PlannerModel a(kVocab, tiny_planner(), 1), b(kVocab, tiny_planner(), 1);
    auto ra = train_planner(a, data, opt);
    auto rb = train_planner(b, data, opt);
    CHECK(a.trained());
    REQUIRE(ra.curve.size() == 4);
    for (std::size_t i = 0; i < ra.curve.size(); ++i) CHECK(ra.curve[i].loss == rb.curve[i].loss);
    for (const char* part : {"ks", "da", "topic", "mu1", "mu2"}) CHECK(ra.curve[0].parts.count(part) == 1);
    std::vector<Matrix> va, vb;
    a.visit([&](Parameter& p) { va.push_back(p.value); });
    b.visit([&](Parameter& p) { vb.push_back(p.value); });
    for (std::size_t i = 0; i < va.size(); ++i) CHECK((va[i].array() == vb[i].array()).all());
  }
  SUBCASE("checkpoint round trip") {
    PlannerModel m(kVocab, tiny_planner(), 1);
    train_planner(m, data, opt);
    const auto tok = testing::tokenizer_of_size(kVocab);
    REQUIRE(static_cast<int>(tok.vocab_size()) == kVocab);
    const auto path = std::filesystem::temp_directory_path() / "pdgd_planner_roundtrip.ckpt";
    save_checkpoint(path, m.to_checkpoint(tok));
    auto back = PlannerModel::from_checkpoint(load_checkpoint(path));
    std::filesystem::remove(path);
    CHECK(back.trained());
    const auto in = assemble_planner_input(data[0], 64, 60);
    const auto a = m.predict(in), b = back.predict(in);
    CHECK((a.start.array() == b.start.array()).all());
    CHECK((a.da.array() == b.da.array()).all());
    CHECK((a.topic.array() == b.topic.array()).all());
    const auto wrong = WhitespaceTokenizer::build(std::vector<std::string>{"x"});
    CHECK_THROWS_AS(m.to_checkpoint(wrong), ContractError);
  }
}
