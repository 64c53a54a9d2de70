#include "pdgd/generator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pdgd/error.hpp"
#include "pdgd/tokenizer.hpp"

namespace pdgd {

double BiasTable::knowledge_weight(PolicyLabel policy) const {
  const double da = policy.da == DialogueAct::kInform ? inform : other_da;
  double topic = 0.0;
  switch (policy.topic_intent) {
    case TopicIntent::kMiningInitial: topic = mining_initial; break;
    case TopicIntent::kStartingNew: topic = starting_new; break;
    case TopicIntent::kFollowingNew: topic = following_new; break;
  }
  return da + topic;
}

RowVector BiasWeightVector::as_row() const {
  RowVector r(static_cast<Eigen::Index>(weights.size()));
  for (std::size_t i = 0; i < weights.size(); ++i) r(static_cast<Eigen::Index>(i)) = weights[i];
  return r;
}

BiasWeightVector build_bias_vector(PolicyLabel policy, std::size_t m, std::size_t n, const BiasTable& table) {
  if (m == 0 || n == 0) throw ContractError("bias vector needs at least one knowledge and one context token");
  BiasWeightVector b;
  b.knowledge_len = m;
  b.context_len = n;
  b.weights.assign(m, table.knowledge_weight(policy));
  b.weights.insert(b.weights.end(), n, table.context);
  return b;
}

Var biased_cross_attention(Var query, Var keys, Var values, const BiasWeightVector& bias) {
  if (keys.rows() != values.rows()) throw ContractError("keys and values differ in length");
  if (static_cast<Eigen::Index>(bias.weights.size()) != keys.rows())
    throw ContractError("bias length " + std::to_string(bias.weights.size()) + " does not match " +
                        std::to_string(keys.rows()) + " keys");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  const RowVector row = bias.as_row();
  Var probs = apply_attention_bias(scale(matmul_transposed(query, keys), inv_sqrt_d), &row);
  return matmul(probs, values);
}

GeneratorInput generator_input(std::span<const TokenId> knowledge, const std::vector<ContextTurn>& context,
                               std::size_t context_budget) {
  GeneratorInput in;
  in.knowledge.assign(knowledge.begin(), knowledge.end());
  for (const auto& turn : truncate_context(context, context_budget))
    in.context.insert(in.context.end(), turn.tokens.begin(), turn.tokens.end());
  if (in.knowledge.empty()) in.knowledge.push_back(special_id(Special::kUnk));
  if (in.context.empty()) in.context.push_back(special_id(Special::kUnk));
  return in;
}

GeneratorInput gold_generator_input(const TrainingExample& example, std::size_t context_budget) {
  const auto& entries = example.candidates.entries;
  if (example.gold_entry >= entries.size()) throw DataError("gold entry index out of range");
  return generator_input(entries[example.gold_entry].tokens, example.context, context_budget);
}

GeneratorModel::GeneratorModel(int vocab_size, const GeneratorConfig& config, std::uint64_t seed)
    : config_(config), vocab_size_(vocab_size) {
  if (vocab_size_ <= 0 || config_.max_len < 3) throw ContractError("invalid generator dimensions");
  Rng rng(seed);
  const int d = config_.shape.dim;
  token_embedding_ = Parameter("embed.token", random_normal(vocab_size_, d, 0.02, rng));
  position_embedding_ = Parameter("embed.position", random_normal(config_.max_len, d, 0.02, rng));
  segment_embedding_ = Parameter("embed.segment", random_normal(3, d, 0.02, rng));
  prefix_norm_ = LayerNorm("embed.prefix_norm", d);
  for (int i = 0; i < config_.shape.layers; ++i)
    layers_.emplace_back("decoder.layer" + std::to_string(i), config_.shape, rng);
  final_norm_ = LayerNorm("decoder.final_norm", d);
  output_ = Linear("output", d, vocab_size_, rng);
}

Var GeneratorModel::prefix_encoding(Tape& tape, const GeneratorInput& input) {
  const std::size_t m = input.knowledge.size();
  const std::size_t n = input.context.size();
  if (m == 0 || n == 0) throw ContractError("generator prefix needs knowledge and context tokens");
  if (m + n > static_cast<std::size_t>(config_.max_len))
    throw ContractError("generator prefix of " + std::to_string(m + n) + " tokens exceeds max_len");
  std::vector<int> tokens(input.knowledge.begin(), input.knowledge.end());
  tokens.insert(tokens.end(), input.context.begin(), input.context.end());
  std::vector<int> positions(m + n), segments(m + n, 0);
  for (std::size_t i = 0; i < m + n; ++i) positions[i] = static_cast<int>(i);
  std::fill(segments.begin(), segments.begin() + static_cast<std::ptrdiff_t>(m), 1);
  Var x = add(gather_rows(tape.param(token_embedding_), tokens), gather_rows(tape.param(position_embedding_), positions));
  x = add(x, gather_rows(tape.param(segment_embedding_), segments));
  return prefix_norm_(tape, x);
}

Var GeneratorModel::logits(Tape& tape, const GeneratorInput& input, std::span<const TokenId> decoder_tokens,
                           const RowVector* bias, const std::function<void(const Matrix&)>& inspect_cross) {
  if (decoder_tokens.empty()) throw ContractError("decoder needs at least one input token");
  const std::size_t offset = input.knowledge.size() + input.context.size();
  const std::size_t t = decoder_tokens.size();
  if (offset + t > static_cast<std::size_t>(config_.max_len))
    throw ContractError("prefix plus response exceeds max_len " + std::to_string(config_.max_len));
  Var memory = prefix_encoding(tape, input);
  std::vector<int> tokens(decoder_tokens.begin(), decoder_tokens.end());
  std::vector<int> positions(t), segments(t, 2);
  for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(offset + i);
  Var x = add(gather_rows(tape.param(token_embedding_), tokens), gather_rows(tape.param(position_embedding_), positions));
  x = add(x, gather_rows(tape.param(segment_embedding_), segments));
  for (auto& layer : layers_) x = layer(tape, x, memory, bias, inspect_cross);
  return output_(tape, final_norm_(tape, x));
}

std::optional<RowVector> GeneratorModel::bias_for(const GeneratorInput& input, PolicyLabel policy) const {
  if (!config_.use_bias) return std::nullopt;
  return build_bias_vector(policy, input.knowledge.size(), input.context.size(), config_.bias).as_row();
}

RowVector GeneratorModel::next_log_probs(const GeneratorInput& input, std::span<const TokenId> decoder_tokens,
                                         const RowVector* bias) const {
  auto& self = const_cast<GeneratorModel&>(*this);
  Tape tape(false);
  Var out = self.logits(tape, input, decoder_tokens, bias);
  RowVector last = out.value().row(out.rows() - 1);
  const double mx = last.maxCoeff();
  const double lse = mx + std::log((last.array() - mx).exp().sum());
  return last.array() - lse;
}

void GeneratorModel::visit(const ParameterVisitor& f) {
  f(token_embedding_);
  f(position_embedding_);
  f(segment_embedding_);
  prefix_norm_.visit(f);
  for (auto& l : layers_) l.visit(f);
  final_norm_.visit(f);
  output_.visit(f);
}

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Checkpoint GeneratorModel::to_checkpoint(const Tokenizer& tokenizer) const {
  if (tokenizer.vocab_size() != static_cast<std::size_t>(vocab_size_))
    throw ContractError("tokenizer does not match the generator vocabulary");
  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.meta["dim"] = std::to_string(config_.shape.dim);
  ckpt.meta["layers"] = std::to_string(config_.shape.layers);
  ckpt.meta["heads"] = std::to_string(config_.shape.heads);
  ckpt.meta["ffn_dim"] = std::to_string(config_.shape.ffn_dim);
  ckpt.meta["max_len"] = std::to_string(config_.max_len);
  ckpt.meta["context_budget"] = std::to_string(config_.context_budget);
  ckpt.meta["use_bias"] = config_.use_bias ? "1" : "0";
  ckpt.meta["bias.inform"] = format_double(config_.bias.inform);
  ckpt.meta["bias.other_da"] = format_double(config_.bias.other_da);
  ckpt.meta["bias.starting_new"] = format_double(config_.bias.starting_new);
  ckpt.meta["bias.mining_initial"] = format_double(config_.bias.mining_initial);
  ckpt.meta["bias.following_new"] = format_double(config_.bias.following_new);
  ckpt.meta["bias.context"] = format_double(config_.bias.context);
  ckpt.meta["vocab_size"] = std::to_string(vocab_size_);
  ckpt.meta["trained"] = trained_ ? "1" : "0";
  ckpt.meta["tokenizer"] = tokenizer.identity();
  ckpt.vocabulary = tokenizer.vocabulary();
  auto& self = const_cast<GeneratorModel&>(*this);
  export_parameters(ckpt, [&](const ParameterVisitor& f) { self.visit(f); });
  return ckpt;
}

GeneratorModel GeneratorModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "generator") throw DataError("checkpoint holds a '" + ckpt.kind + "', not a generator");
  GeneratorConfig cfg;
  cfg.shape.dim = ckpt.meta_int("dim");
  cfg.shape.layers = ckpt.meta_int("layers");
  cfg.shape.heads = ckpt.meta_int("heads");
  cfg.shape.ffn_dim = ckpt.meta_int("ffn_dim");
  cfg.max_len = ckpt.meta_int("max_len");
  cfg.context_budget = static_cast<std::size_t>(ckpt.meta_int("context_budget"));
  cfg.use_bias = ckpt.meta_int("use_bias") != 0;
  cfg.bias.inform = ckpt.meta_double("bias.inform");
  cfg.bias.other_da = ckpt.meta_double("bias.other_da");
  cfg.bias.starting_new = ckpt.meta_double("bias.starting_new");
  cfg.bias.mining_initial = ckpt.meta_double("bias.mining_initial");
  cfg.bias.following_new = ckpt.meta_double("bias.following_new");
  cfg.bias.context = ckpt.meta_double("bias.context");
  GeneratorModel model(ckpt.meta_int("vocab_size"), cfg, 0);
  import_parameters(ckpt, [&](const ParameterVisitor& f) { model.visit(f); });
  model.trained_ = ckpt.meta_int("trained") != 0;
  return model;
}

std::vector<TokenId> decoder_inputs(std::span<const TokenId> response) {
  std::vector<TokenId> in{special_id(Special::kBos)};
  in.insert(in.end(), response.begin(), response.end());
  return in;
}

std::vector<int> decoder_targets(std::span<const TokenId> response) {
  std::vector<int> out(response.begin(), response.end());
  out.push_back(special_id(Special::kEos));
  return out;
}

namespace {

// Keeps the response inside the position table (drops its tail).
std::span<const TokenId> fit_response(const GeneratorModel& model, const GeneratorInput& input,
                                      std::span<const TokenId> response) {
  if (response.empty()) throw ContractError("empty response");
  const std::size_t prefix = input.knowledge.size() + input.context.size();
  const std::size_t room = static_cast<std::size_t>(model.config().max_len);
  if (prefix + 1 >= room) throw ContractError("generator prefix leaves no room for a response");
  return response.first(std::min(response.size(), room - prefix - 1));
}

}  // namespace

Var generation_loss(Tape& tape, GeneratorModel& model, const GeneratorInput& input, PolicyLabel policy,
                    std::span<const TokenId> response) {
  response = fit_response(model, input, response);
  const auto bias = model.bias_for(input, policy);
  const auto in = decoder_inputs(response);
  const auto targets = decoder_targets(response);
  Var out = model.logits(tape, input, in, bias ? &*bias : nullptr);
  return nll_rows(out, targets);
}

TeacherForcedStats teacher_forced(const GeneratorModel& model, const GeneratorInput& input, PolicyLabel policy,
                                  std::span<const TokenId> response) {
  response = fit_response(model, input, response);
  const auto bias = model.bias_for(input, policy);
  const auto in = decoder_inputs(response);
  const auto targets = decoder_targets(response);
  auto& self = const_cast<GeneratorModel&>(model);
  Tape tape(false);
  const Matrix logits = self.logits(tape, input, in, bias ? &*bias : nullptr).value();
  TeacherForcedStats stats;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    const int target = targets[static_cast<std::size_t>(r)];
    stats.token_log_probs.push_back(row(target) - lse);
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    if (best == target) ++stats.correct;
  }
  return stats;
}

std::vector<TokenId> generate(const GeneratorModel& model, const GeneratorInput& input, PolicyLabel policy,
                              const DecodeOptions& options) {
  if (options.beam < 1) throw ContractError("beam size must be at least 1");
  const std::size_t prefix = input.knowledge.size() + input.context.size();
  const auto max_len = static_cast<std::size_t>(model.config().max_len);
  if (prefix >= max_len) throw ContractError("generator prefix exceeds max_len");
  // Step s feeds <bos> plus s tokens at positions prefix .. prefix + s.
  const std::size_t max_steps =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(options.max_new, 0)), max_len - prefix);
  const auto bias = model.bias_for(input, policy);
  const RowVector* bias_ptr = bias ? &*bias : nullptr;
  const auto beam = static_cast<std::size_t>(options.beam);

  struct Hyp {
    std::vector<TokenId> tokens;  // generated tokens, <eos> excluded
    double log_prob = 0.0;
    std::size_t length = 0;  // scored tokens, <eos> included
  };
  auto normalized = [](const Hyp& h) { return h.length == 0 ? 0.0 : h.log_prob / static_cast<double>(h.length); };

  std::vector<Hyp> live{Hyp{}};
  std::vector<Hyp> finished;
  for (std::size_t step = 0; step < max_steps && !live.empty(); ++step) {
    const bool last_step = step + 1 == max_steps;
    std::vector<Hyp> candidates;
    for (const Hyp& h : live) {
      std::vector<TokenId> in{special_id(Special::kBos)};
      in.insert(in.end(), h.tokens.begin(), h.tokens.end());
      const RowVector lp = model.next_log_probs(input, in, bias_ptr);
      std::vector<int> order(static_cast<std::size_t>(lp.size()));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      const std::size_t k = std::min(beam, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](int a, int b) { return lp(a) > lp(b) || (lp(a) == lp(b) && a < b); });
      for (std::size_t j = 0; j < k; ++j) {
        Hyp next = h;
        next.log_prob += lp(order[j]);
        next.length += 1;
        if (order[j] != special_id(Special::kEos)) next.tokens.push_back(order[j]);
        candidates.push_back(std::move(next));
      }
    }
    // Hypotheses of equal length: raw and normalized ranking coincide.
    std::vector<std::size_t> idx(candidates.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return candidates[a].log_prob > candidates[b].log_prob; });
    std::vector<Hyp> next_live;
    for (std::size_t r = 0; r < std::min(beam, idx.size()); ++r) {
      Hyp& c = candidates[idx[r]];
      const bool ended = c.tokens.size() < c.length;  // the last scored token was <eos>
      if (ended || last_step)
        finished.push_back(std::move(c));
      else
        next_live.push_back(std::move(c));
    }
    live = std::move(next_live);
  }
  if (finished.empty()) return {};
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (normalized(finished[i]) > normalized(finished[best])) best = i;
  return finished[best].tokens;
}

GeneratorTrainResult train_generator(GeneratorModel& model, const std::vector<TrainingExample>& examples,
                                     const TrainingOptions& options) {
  if (examples.empty()) throw DataError("cannot train the generator on an empty example set");
  std::vector<GeneratorInput> inputs;
  inputs.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.response.empty()) throw DataError("example " + ex.dialogue_id + " has an empty response");
    inputs.push_back(gold_generator_input(ex, model.config().context_budget));
  }
  std::vector<Parameter*> params;
  model.visit([&](Parameter& p) { params.push_back(&p); });
  Adam adam(params, options.adam);
  Rng rng(options.seed);
  GeneratorTrainResult result;
  std::size_t step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(inputs.size(), options.batch_size, rng)) {
      Tape tape;
      std::vector<Var> losses;
      for (std::size_t i : batch)
        losses.push_back(generation_loss(tape, model, inputs[i], examples[i].response_policy, examples[i].response));
      Var loss = scale(add_all(losses), 1.0 / static_cast<double>(losses.size()));
      tape.backward(loss);
      adam.step();
      result.curve.push_back(LossRecord{epoch, step++, loss.scalar(), {{"mle", loss.scalar()}}});
    }
  }
  model.mark_trained();
  return result;
}

}  // namespace pdgd
