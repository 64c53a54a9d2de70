#include "pdgd/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "pdgd/error.hpp"

namespace pdgd {

PlannerModel::PlannerModel(int vocab_size, const PlannerConfig& config, std::uint64_t seed)
    : config_(config), vocab_size_(vocab_size) {
  if (vocab_size_ <= 0 || config_.max_len < 3) throw ContractError("invalid planner dimensions");
  Rng rng(seed);
  const int d = config_.shape.dim;
  token_embedding_ = Parameter("embed.token", random_normal(vocab_size_, d, 0.02, rng));
  position_embedding_ = Parameter("embed.position", random_normal(config_.max_len, d, 0.02, rng));
  segment_embedding_ = Parameter("embed.segment", random_normal(2, d, 0.02, rng));
  da_embedding_ = Parameter("embed.da", random_normal(kNumDialogueActs, d, 0.02, rng));
  topic_embedding_ = Parameter("embed.topic_intent", random_normal(kNumTopicIntents, d, 0.02, rng));
  encoder_ = Encoder("encoder", config_.shape, rng);
  span_start_ = Linear("span.start", d, 1, rng);
  span_end_ = Linear("span.end", d, 1, rng);
  da_head_ = MlpHead("head.da", d, kNumDialogueActs, rng);
  topic_head_ = MlpHead("head.topic_intent", d, kNumTopicIntents, rng);
  log_mu1_ = Parameter("uncertainty.log_mu1", Matrix::Zero(1, 1));
  log_mu2_ = Parameter("uncertainty.log_mu2", Matrix::Zero(1, 1));
}

Var PlannerModel::input_embeddings(Tape& tape, const PlannerInput& input) {
  const std::size_t n = input.size();
  if (n == 0) throw ContractError("empty planner input");
  if (n > static_cast<std::size_t>(config_.max_len))
    throw ContractError("planner input of " + std::to_string(n) + " tokens exceeds max_len " +
                        std::to_string(config_.max_len) + "; split it into chunks");
  if (input.segments.size() != n || input.policies.size() != n)
    throw ContractError("planner input annotations do not match its length");
  std::vector<int> positions(n), da(n, -1), topic(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    positions[i] = static_cast<int>(i);
    if (input.policies[i]) {
      da[i] = index_of(input.policies[i]->da);
      topic[i] = index_of(input.policies[i]->topic_intent);
    }
  }
  Var x = add(gather_rows(tape.param(token_embedding_), input.tokens),
              gather_rows(tape.param(position_embedding_), positions));
  x = add(x, gather_rows(tape.param(segment_embedding_), input.segments));
  x = add(x, gather_rows(tape.param(da_embedding_), da));
  return add(x, gather_rows(tape.param(topic_embedding_), topic));
}

PlannerOutputs PlannerModel::forward(Tape& tape, const PlannerInput& input) {
  Var h = encoder_(tape, input_embeddings(tape, input));
  PlannerOutputs out;
  out.start_logits = transpose(span_start_(tape, h));
  out.end_logits = transpose(span_end_(tape, h));
  if (config_.sentence_mode) {
    // Only entry-final positions are selectable.
    Matrix mask = Matrix::Constant(1, static_cast<Eigen::Index>(input.size()), -1e9);
    for (const Span& s : input.entry_spans) mask(0, static_cast<Eigen::Index>(s.end)) = 0.0;
    out.end_logits = add(out.end_logits, tape.constant(std::move(mask)));
  }
  Var cls = slice_rows(h, 0, 1);
  out.da_logits = da_head_(tape, cls);
  out.topic_logits = topic_head_(tape, cls);
  return out;
}

PlannerLogits PlannerModel::predict(const PlannerInput& input) const {
  // A non-recording tape only reads parameter values.
  auto& self = const_cast<PlannerModel&>(*this);
  Tape tape(false);
  auto out = self.forward(tape, input);
  return PlannerLogits{out.start_logits.value().row(0), out.end_logits.value().row(0),
                       out.da_logits.value().row(0), out.topic_logits.value().row(0)};
}

void PlannerModel::visit_policy_path(const ParameterVisitor& f) {
  f(token_embedding_);
  f(position_embedding_);
  f(segment_embedding_);
  f(da_embedding_);
  f(topic_embedding_);
  encoder_.visit(f);
  da_head_.visit(f);
  topic_head_.visit(f);
}

void PlannerModel::visit_span_head(const ParameterVisitor& f) {
  span_start_.visit(f);
  span_end_.visit(f);
}

void PlannerModel::visit(const ParameterVisitor& f) {
  visit_policy_path(f);
  visit_span_head(f);
  f(log_mu1_);
  f(log_mu2_);
}

Checkpoint PlannerModel::to_checkpoint(const Tokenizer& tokenizer) const {
  if (tokenizer.vocab_size() != static_cast<std::size_t>(vocab_size_))
    throw ContractError("tokenizer does not match the planner vocabulary");
  Checkpoint ckpt;
  ckpt.kind = "planner";
  ckpt.meta["dim"] = std::to_string(config_.shape.dim);
  ckpt.meta["layers"] = std::to_string(config_.shape.layers);
  ckpt.meta["heads"] = std::to_string(config_.shape.heads);
  ckpt.meta["ffn_dim"] = std::to_string(config_.shape.ffn_dim);
  ckpt.meta["max_len"] = std::to_string(config_.max_len);
  ckpt.meta["context_budget"] = std::to_string(config_.context_budget);
  ckpt.meta["max_span_len"] = std::to_string(config_.max_span_len);
  ckpt.meta["sentence_mode"] = config_.sentence_mode ? "1" : "0";
  ckpt.meta["vocab_size"] = std::to_string(vocab_size_);
  ckpt.meta["trained"] = trained_ ? "1" : "0";
  ckpt.meta["tokenizer"] = tokenizer.identity();
  ckpt.vocabulary = tokenizer.vocabulary();
  auto& self = const_cast<PlannerModel&>(*this);
  export_parameters(ckpt, [&](const ParameterVisitor& f) { self.visit(f); });
  return ckpt;
}

PlannerModel PlannerModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "planner") throw DataError("checkpoint holds a '" + ckpt.kind + "', not a planner");
  PlannerConfig cfg;
  cfg.shape.dim = ckpt.meta_int("dim");
  cfg.shape.layers = ckpt.meta_int("layers");
  cfg.shape.heads = ckpt.meta_int("heads");
  cfg.shape.ffn_dim = ckpt.meta_int("ffn_dim");
  cfg.max_len = ckpt.meta_int("max_len");
  cfg.context_budget = static_cast<std::size_t>(ckpt.meta_int("context_budget"));
  cfg.max_span_len = static_cast<std::size_t>(ckpt.meta_int("max_span_len"));
  cfg.sentence_mode = ckpt.meta_int("sentence_mode") != 0;
  PlannerModel model(ckpt.meta_int("vocab_size"), cfg, 0);
  import_parameters(ckpt, [&](const ParameterVisitor& f) { model.visit(f); });
  model.trained_ = ckpt.meta_int("trained") != 0;
  return model;
}

// ---- Losses -------------------------------------------------------------------

Var ks_loss(Var start_logits, Var end_logits, Span gold) {
  const auto n = static_cast<std::size_t>(start_logits.cols());
  if (start_logits.rows() != 1 || end_logits.rows() != 1 || static_cast<std::size_t>(end_logits.cols()) != n)
    throw ContractError("ks_loss expects 1 x L start and end logits");
  if (gold.start >= n || gold.end >= n)
    throw ContractError("gold span (" + std::to_string(gold.start) + ", " + std::to_string(gold.end) +
                        ") outside a sequence of " + std::to_string(n));
  const int s = static_cast<int>(gold.start);
  const int e = static_cast<int>(gold.end);
  return add(nll_rows(start_logits, std::span<const int>(&s, 1)), nll_rows(end_logits, std::span<const int>(&e, 1)));
}

Var sentence_ks_loss(Var end_logits, std::size_t gold_end) {
  if (gold_end >= static_cast<std::size_t>(end_logits.cols())) throw ContractError("gold end position out of range");
  const int e = static_cast<int>(gold_end);
  return nll_rows(end_logits, std::span<const int>(&e, 1));
}

PolicyLosses policy_losses(Var da_logits, Var topic_logits, PolicyLabel gold) {
  const int da = index_of(gold.da);
  const int topic = index_of(gold.topic_intent);
  return PolicyLosses{nll_rows(da_logits, std::span<const int>(&da, 1)),
                      nll_rows(topic_logits, std::span<const int>(&topic, 1))};
}

Var combined_loss(Var l_da, Var l_topic, Var l_ks, Var log_mu1, Var log_mu2) {
  Var inv_mu1_sq = exp(scale(log_mu1, -2.0));
  Var inv_mu2_sq = exp(scale(log_mu2, -2.0));
  Var policy = hadamard(inv_mu1_sq, add(l_da, l_topic));
  Var ks = hadamard(inv_mu2_sq, l_ks);
  return add(add(policy, ks), add(log_mu1, log_mu2));
}

// ---- Span selection -----------------------------------------------------------

namespace {

std::vector<double> log_softmax(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  const double lse = m + std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

std::span<const double> row_span(const RowVector& r) { return {r.data(), static_cast<std::size_t>(r.size())}; }

}  // namespace

SpanPrediction select_span(std::span<const double> start_logits, std::span<const double> end_logits,
                           std::size_t region_begin, std::size_t region_end, std::size_t max_span_len) {
  if (start_logits.size() != end_logits.size()) throw ContractError("start and end logits differ in length");
  if (start_logits.empty() || region_begin > region_end || region_end >= start_logits.size())
    throw ContractError("empty knowledge region");
  const auto ls = log_softmax(start_logits);
  const auto le = log_softmax(end_logits);
  SpanPrediction best;
  bool found = false;
  if (max_span_len >= 1) {
    for (std::size_t s = region_begin; s <= region_end; ++s) {
      const std::size_t last = std::min(region_end, s + max_span_len - 1);
      for (std::size_t e = s; e <= last; ++e) {
        const double score = ls[s] + le[e];
        if (!found || score > best.score) {
          best = SpanPrediction{s, e, score};
          found = true;
        }
      }
    }
  }
  if (found) return best;
  std::size_t s_best = region_begin, e_best = region_begin;
  for (std::size_t i = region_begin; i <= region_end; ++i) {
    if (ls[i] > ls[s_best]) s_best = i;
    if (le[i] > le[e_best]) e_best = i;
  }
  return SpanPrediction{s_best, e_best, ls[s_best] + le[e_best]};
}

std::size_t revise_span(std::size_t start, std::size_t end, std::span<const Span> entry_spans) {
  if (entry_spans.empty()) throw ContractError("no knowledge entries to revise against");
  auto containing = [&](std::size_t pos) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < entry_spans.size(); ++i)
      if (pos >= entry_spans[i].start && pos <= entry_spans[i].end) return i;
    return std::nullopt;
  };
  if (start > end) {
    // move: an unrevisable pair snaps to the entry holding its start
    if (auto i = containing(start)) return *i;
    if (auto i = containing(end)) return *i;
    throw ContractError("span lies outside the knowledge region");
  }
  std::size_t best = 0;
  std::size_t best_overlap = 0;
  for (std::size_t i = 0; i < entry_spans.size(); ++i) {
    const std::size_t lo = std::max(start, entry_spans[i].start);
    const std::size_t hi = std::min(end, entry_spans[i].end);
    const std::size_t overlap = hi >= lo ? hi - lo + 1 : 0;
    if (overlap > best_overlap) {
      best = i;
      best_overlap = overlap;
    }
  }
  if (best_overlap == 0) throw ContractError("span lies outside the knowledge region");
  return best;
}

std::size_t pick_best_chunk(std::span<const ChunkResult> results) {
  if (results.empty()) throw ContractError("no chunk results");
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i)
    if (results[i].span.score > results[best].span.score) best = i;
  return best;
}

ChunkResult select_in_chunk(const PlannerModel& model, const PlannerInput& input) {
  if (input.entry_spans.empty()) throw ContractError("empty knowledge region");
  const PlannerLogits logits = model.predict(input);
  ChunkResult r;
  r.da_logits = logits.da;
  r.topic_logits = logits.topic;
  const std::size_t region_end = input.entry_spans.back().end;
  if (model.config().sentence_mode) {
    const auto le = log_softmax(row_span(logits.end));
    std::size_t best = 0;
    for (std::size_t i = 1; i < input.entry_spans.size(); ++i)
      if (le[input.entry_spans[i].end] > le[input.entry_spans[best].end]) best = i;
    r.span = SpanPrediction{input.entry_spans[best].start, input.entry_spans[best].end, le[input.entry_spans[best].end]};
    r.entry = input.first_entry + best;
    return r;
  }
  r.span = select_span(row_span(logits.start), row_span(logits.end), input.knowledge_begin, region_end,
                       model.config().max_span_len);
  r.entry = input.first_entry + revise_span(r.span.start, r.span.end, input.entry_spans);
  return r;
}

PolicyLabel KnowledgeSelection::predicted_policy() const {
  Eigen::Index da = 0, topic = 0;
  da_logits.maxCoeff(&da);
  topic_logits.maxCoeff(&topic);
  return PolicyLabel{kAllDialogueActs[static_cast<std::size_t>(da)], kAllTopicIntents[static_cast<std::size_t>(topic)]};
}

KnowledgeSelection select_knowledge_over_chunks(const PlannerModel& model, const TrainingExample& example) {
  const auto chunks = assemble_planner_chunks(example, static_cast<std::size_t>(model.config().max_len),
                                              model.config().context_budget);
  std::vector<ChunkResult> results;
  results.reserve(chunks.size());
  for (const auto& c : chunks) results.push_back(select_in_chunk(model, c));
  const std::size_t best = pick_best_chunk(results);
  return KnowledgeSelection{results[best].entry, best, results[best].span, results[best].da_logits,
                            results[best].topic_logits};
}

// ---- Training -----------------------------------------------------------------

PlannerTrainingInput planner_training_input(const TrainingExample& example, const PlannerConfig& config) {
  for (auto& chunk : assemble_planner_chunks(example, static_cast<std::size_t>(config.max_len), config.context_budget)) {
    if (!chunk.contains_entry(example.gold_entry)) continue;
    const Span gold = chunk.entry_spans[example.gold_entry - chunk.first_entry];
    return PlannerTrainingInput{std::move(chunk), gold, example.response_policy};
  }
  throw DataError("gold entry not found in any chunk");
}

PlannerBatchLosses planner_batch_loss(Tape& tape, PlannerModel& model,
                                      std::span<const PlannerTrainingInput* const> batch) {
  if (batch.empty()) throw ContractError("empty planner batch");
  std::vector<Var> ks, da, topic;
  for (const PlannerTrainingInput* item : batch) {
    auto out = model.forward(tape, item->input);
    ks.push_back(model.config().sentence_mode ? sentence_ks_loss(out.end_logits, item->gold.end)
                                              : ks_loss(out.start_logits, out.end_logits, item->gold));
    auto pl = policy_losses(out.da_logits, out.topic_logits, item->policy);
    da.push_back(pl.da);
    topic.push_back(pl.topic);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  PlannerBatchLosses out;
  out.ks = scale(add_all(ks), inv);
  out.da = scale(add_all(da), inv);
  out.topic = scale(add_all(topic), inv);
  out.total = combined_loss(out.da, out.topic, out.ks, tape.param(model.log_mu1()), tape.param(model.log_mu2()));
  return out;
}

PlannerTrainResult train_planner(PlannerModel& model, const std::vector<TrainingExample>& examples,
                                 const TrainingOptions& options) {
  if (examples.empty()) throw DataError("cannot train the planner on an empty example set");
  std::vector<PlannerTrainingInput> inputs;
  inputs.reserve(examples.size());
  for (const auto& ex : examples) inputs.push_back(planner_training_input(ex, model.config()));

  std::vector<Parameter*> params;
  model.visit([&](Parameter& p) { params.push_back(&p); });
  Adam adam(params, options.adam);
  Rng rng(options.seed);
  PlannerTrainResult result;
  std::size_t step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(inputs.size(), options.batch_size, rng)) {
      std::vector<const PlannerTrainingInput*> items;
      for (std::size_t i : batch) items.push_back(&inputs[i]);
      Tape tape;
      auto losses = planner_batch_loss(tape, model, items);
      tape.backward(losses.total);
      adam.step();
      result.curve.push_back(LossRecord{epoch,
                                        step++,
                                        losses.total.scalar(),
                                        {{"ks", losses.ks.scalar()},
                                         {"da", losses.da.scalar()},
                                         {"topic", losses.topic.scalar()},
                                         {"mu1", std::exp(model.log_mu1().value(0, 0))},
                                         {"mu2", std::exp(model.log_mu2().value(0, 0))}}});
    }
  }
  model.mark_trained();
  return result;
}

}  // namespace pdgd
