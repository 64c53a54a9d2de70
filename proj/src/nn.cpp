#include "pdgd/nn.hpp"

#include <cmath>

#include "pdgd/error.hpp"

namespace pdgd {

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  // Fill row by row so the draw order does not depend on storage order.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
    : weight(name + ".weight",
             random_normal(in, out, std::sqrt(2.0 / static_cast<double>(in + out)), rng)),
      bias(name + ".bias", Matrix::Zero(1, out)) {}

Var Linear::operator()(Tape& tape, Var x) {
  return add_row(matmul(x, tape.param(weight)), tape.param(bias));
}

LayerNorm::LayerNorm(const std::string& name, Eigen::Index dim)
    : gain(name + ".gain", Matrix::Ones(1, dim)), bias(name + ".bias", Matrix::Zero(1, dim)) {}

Var LayerNorm::operator()(Tape& tape, Var x) {
  return layer_norm(x, tape.param(gain), tape.param(bias));
}

FeedForward::FeedForward(const std::string& name, Eigen::Index dim, Eigen::Index hidden, Rng& rng)
    : up(name + ".up", dim, hidden, rng), down(name + ".down", hidden, dim, rng) {}

Var FeedForward::operator()(Tape& tape, Var x) { return down(tape, gelu(up(tape, x))); }

MlpHead::MlpHead(const std::string& name, Eigen::Index dim, Eigen::Index classes, Rng& rng)
    : hidden(name + ".hidden", dim, dim, rng), out(name + ".out", dim, classes, rng) {}

Var MlpHead::operator()(Tape& tape, Var x) { return out(tape, tanh(hidden(tape, x))); }

Var apply_attention_bias(Var scores, const RowVector* bias) {
  if (bias == nullptr || (bias->array() == 1.0).all()) {
    if (bias != nullptr && bias->size() != scores.cols())
      throw ContractError("attention bias length must equal the number of keys");
    return softmax_rows(scores);
  }
  if (bias->size() != scores.cols())
    throw ContractError("attention bias length must equal the number of keys");
  return biased_softmax_rows(scores, *bias);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, Eigen::Index dim, int heads_,
                                       Rng& rng)
    : query(name + ".query", dim, dim, rng),
      key(name + ".key", dim, dim, rng),
      value(name + ".value", dim, dim, rng),
      output(name + ".output", dim, dim, rng),
      heads(heads_) {
  if (heads <= 0 || dim % heads != 0) throw ContractError("attention heads must divide the model dimension");
}

Var MultiHeadAttention::operator()(Tape& tape, Var queries, Var memory, const AttentionOptions& opts) {
  const Eigen::Index dim = queries.cols();
  const Eigen::Index head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var q = query(tape, queries);
  Var k = key(tape, memory);
  Var v = value(tape, memory);

  std::optional<Var> mask;
  if (opts.causal) {
    if (queries.rows() != memory.rows()) throw ContractError("causal attention needs a square score matrix");
    Matrix m = Matrix::Zero(queries.rows(), memory.rows());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = r + 1; c < m.cols(); ++c) m(r, c) = -1e9;
    mask = tape.constant(std::move(m));
  }

  std::vector<Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * head_dim, head_dim);
    Var kh = slice_cols(k, h * head_dim, head_dim);
    Var vh = slice_cols(v, h * head_dim, head_dim);
    Var scores = scale(matmul_transposed(qh, kh), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    Var probs = apply_attention_bias(scores, opts.key_bias);
    if (opts.inspect) opts.inspect(probs.value());
    outputs.push_back(matmul(probs, vh));
  }
  Var joined = heads == 1 ? outputs.front() : concat_cols(outputs);
  return output(tape, joined);
}

EncoderLayer::EncoderLayer(const std::string& name, const TransformerShape& shape, Rng& rng)
    : attn_norm(name + ".attn_norm", shape.dim),
      attention(name + ".attention", shape.dim, shape.heads, rng),
      ffn_norm(name + ".ffn_norm", shape.dim),
      ffn(name + ".ffn", shape.dim, shape.ffn_dim, rng) {}

Var EncoderLayer::operator()(Tape& tape, Var x) {
  Var h = attn_norm(tape, x);
  x = add(x, attention(tape, h, h));
  return add(x, ffn(tape, ffn_norm(tape, x)));
}

Encoder::Encoder(const std::string& name, const TransformerShape& shape, Rng& rng)
    : final_norm(name + ".final_norm", shape.dim) {
  for (int i = 0; i < shape.layers; ++i)
    layers.emplace_back(name + ".layer" + std::to_string(i), shape, rng);
}

Var Encoder::operator()(Tape& tape, Var x) {
  for (auto& layer : layers) x = layer(tape, x);
  return final_norm(tape, x);
}

DecoderLayer::DecoderLayer(const std::string& name, const TransformerShape& shape, Rng& rng)
    : self_norm(name + ".self_norm", shape.dim),
      self_attention(name + ".self_attention", shape.dim, shape.heads, rng),
      cross_norm(name + ".cross_norm", shape.dim),
      cross_attention(name + ".cross_attention", shape.dim, shape.heads, rng),
      ffn_norm(name + ".ffn_norm", shape.dim),
      ffn(name + ".ffn", shape.dim, shape.ffn_dim, rng) {}

Var DecoderLayer::operator()(Tape& tape, Var x, Var memory, const RowVector* memory_bias,
                             const std::function<void(const Matrix&)>& inspect_cross) {
  Var h = self_norm(tape, x);
  AttentionOptions self_opts;
  self_opts.causal = true;
  x = add(x, self_attention(tape, h, h, self_opts));
  AttentionOptions cross_opts;
  cross_opts.key_bias = memory_bias;
  cross_opts.inspect = inspect_cross;
  x = add(x, cross_attention(tape, cross_norm(tape, x), memory, cross_opts));
  return add(x, ffn(tape, ffn_norm(tape, x)));
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (Parameter* p : params_) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) {
      const double s = config_.clip_norm / norm;
      for (Parameter* p : params_) p->grad *= s;
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= config_.lr * (m_[i].array() / c1) /
                       ((v_[i].array() / c2).sqrt() + config_.eps);
  }
  zero_grad();
}

}  // namespace pdgd
