#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pdgd/autograd.hpp"

namespace pdgd {

using Rng = std::mt19937_64;
using ParameterVisitor = std::function<void(Parameter&)>;
using ConstParameterVisitor = std::function<void(const Parameter&)>;

// N(0, std) initialized matrix.
Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);
  Var operator()(Tape& tape, Var x);
  void visit(const ParameterVisitor& f) {
    f(weight);
    f(bias);
  }
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim);
  Var operator()(Tape& tape, Var x);
  void visit(const ParameterVisitor& f) {
    f(gain);
    f(bias);
  }
};

struct FeedForward {
  Linear up;
  Linear down;

  FeedForward() = default;
  FeedForward(const std::string& name, Eigen::Index dim, Eigen::Index hidden, Rng& rng);
  Var operator()(Tape& tape, Var x);
  void visit(const ParameterVisitor& f) {
    up.visit(f);
    down.visit(f);
  }
};

// Two-layer MLP with tanh, used for classification heads over <cls>.
struct MlpHead {
  Linear hidden;
  Linear out;

  MlpHead() = default;
  MlpHead(const std::string& name, Eigen::Index dim, Eigen::Index classes, Rng& rng);
  Var operator()(Tape& tape, Var x);
  void visit(const ParameterVisitor& f) {
    hidden.visit(f);
    out.visit(f);
  }
};

// Options for one attention call.
struct AttentionOptions {
  bool causal = false;
  // Per-key multiplicative weight applied to the attention probabilities
  // of every head, followed by renormalization.
  const RowVector* key_bias = nullptr;
  // Invoked with each head's final attention rows (tests and diagnostics).
  std::function<void(const Matrix&)> inspect;
};

// Multiply post-softmax attention rows by `bias` and renormalize. An all-ones
// bias is the identity, so the plain softmax is returned unchanged.
Var apply_attention_bias(Var scores, const RowVector* bias);

struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Eigen::Index dim, int heads, Rng& rng);
  // queries: Tq x d, memory: Tk x d
  Var operator()(Tape& tape, Var queries, Var memory, const AttentionOptions& opts = {});
  void visit(const ParameterVisitor& f) {
    query.visit(f);
    key.visit(f);
    value.visit(f);
    output.visit(f);
  }
};

struct TransformerShape {
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ffn_dim = 128;
};

// Pre-norm bidirectional self-attention block.
struct EncoderLayer {
  LayerNorm attn_norm;
  MultiHeadAttention attention;
  LayerNorm ffn_norm;
  FeedForward ffn;

  EncoderLayer() = default;
  EncoderLayer(const std::string& name, const TransformerShape& shape, Rng& rng);
  Var operator()(Tape& tape, Var x);
  void visit(const ParameterVisitor& f) {
    attn_norm.visit(f);
    attention.visit(f);
    ffn_norm.visit(f);
    ffn.visit(f);
  }
};

struct Encoder {
  std::vector<EncoderLayer> layers;
  LayerNorm final_norm;

  Encoder() = default;
  Encoder(const std::string& name, const TransformerShape& shape, Rng& rng);
  Var operator()(Tape& tape, Var x);
  void visit(const ParameterVisitor& f) {
    for (auto& l : layers) l.visit(f);
    final_norm.visit(f);
  }
};

// Pre-norm decoder block: causal self-attention, cross-attention over a
// memory sequence (optionally biased), feed-forward.
struct DecoderLayer {
  LayerNorm self_norm;
  MultiHeadAttention self_attention;
  LayerNorm cross_norm;
  MultiHeadAttention cross_attention;
  LayerNorm ffn_norm;
  FeedForward ffn;

  DecoderLayer() = default;
  DecoderLayer(const std::string& name, const TransformerShape& shape, Rng& rng);
  Var operator()(Tape& tape, Var x, Var memory, const RowVector* memory_bias,
                 const std::function<void(const Matrix&)>& inspect_cross = {});
  void visit(const ParameterVisitor& f) {
    self_norm.visit(f);
    self_attention.visit(f);
    cross_norm.visit(f);
    cross_attention.visit(f);
    ffn_norm.visit(f);
    ffn.visit(f);
  }
};

// Adam with optional global-norm gradient clipping.
struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);
  // Applies one update from the accumulated grads, then zeroes them.
  void step();
  void zero_grad();
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  long steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig config_;
  long t_ = 0;
};

}  // namespace pdgd
