#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars in creation order, which
// is already a topological order, so backward() is a single reverse sweep.
// Parameters live outside the tape; a leaf created with Tape::param() adds its
// gradient into Parameter::grad when the sweep reaches it.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pdgd {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // With record=false no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and sweeps backwards.
  void backward(Var loss);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Low-level: create an op node. `backward` receives the node's output grad
  // and must accumulate into the inputs via accumulate().
  Var make(Matrix value, std::vector<std::size_t> inputs,
           std::function<void(const Matrix& grad)> backward);
  void accumulate(Var input, const Matrix& grad);
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(const Matrix&)> backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value_of(id_); }

// ---- Elementwise and linear algebra -------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// a (r x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
// a * b^T
Var matmul_transposed(Var a, Var b);
Var transpose(Var a);

Var tanh(Var a);
Var gelu(Var a);
Var exp(Var a);

// ---- Row-wise normalizations --------------------------------------------

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
// Multiplies each row's softmax probabilities by `bias` (one weight per
// column) and renormalizes the row to sum to one.
Var biased_softmax_rows(Var a, const RowVector& bias);
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);

// ---- Indexing ------------------------------------------------------------

// Row i of the result is table.row(indices[i]); a negative index yields a
// zero row that receives no gradient.
Var gather_rows(Var table, std::span<const int> indices);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var pick(Var a, Eigen::Index row, Eigen::Index col);

// ---- Reductions and losses -----------------------------------------------

Var sum(Var a);
Var mean(Var a);
Var add_all(std::span<const Var> scalars);
// Mean over rows of -log softmax(logits.row(i))[targets[i]].
Var nll_rows(Var logits, std::span<const int> targets);

}  // namespace pdgd
