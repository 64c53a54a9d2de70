#include "pdgd/autograd.hpp"

#include <cmath>

#include "pdgd/error.hpp"

namespace pdgd {

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node node;
  node.value = p.value;
  node.requires_grad = record_;
  node.param = record_ ? &p : nullptr;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::make(Matrix value, std::vector<std::size_t> inputs,
               std::function<void(const Matrix&)> backward) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (std::size_t id : inputs) {
      if (nodes_[id].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
    if (node.requires_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var input, const Matrix& grad) {
  Node& node = nodes_[input.id_];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = grad;
  } else {
    node.grad += grad;
  }
}

void Tape::backward(Var loss) {
  if (!record_) throw ContractError("backward() on a tape that does not record");
  if (loss.tape_ != this) throw ContractError("backward() with a Var from another tape");
  Node& root = nodes_[loss.id_];
  if (root.value.rows() != 1 || root.value.cols() != 1)
    throw ContractError("backward() requires a 1x1 loss");
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(node.grad);
    if (node.param != nullptr) node.param->grad += node.grad;
    // Intermediate grads are not needed after the sweep passes them.
    node.grad.resize(0, 0);
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape& t = a.tape();
  return t.make(a.value() + b.value(), {a.id(), b.id()}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape& t = a.tape();
  return t.make(a.value() - b.value(), {a.id(), b.id()}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var hadamard(Var a, Var b) {
  check_same_shape(a, b, "hadamard");
  Tape& t = a.tape();
  return t.make(a.value().cwiseProduct(b.value()), {a.id(), b.id()},
                [&t, a, b](const Matrix& g) {
                  t.accumulate(a, g.cwiseProduct(b.value()));
                  t.accumulate(b, g.cwiseProduct(a.value()));
                });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  return t.make(a.value() * s, {a.id()}, [&t, a, s](const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  Tape& t = a.tape();
  return t.make(a.value().array() + s, {a.id()},
                [&t, a](const Matrix& g) { t.accumulate(a, g); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row: shape mismatch");
  Tape& t = a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.make(std::move(out), {a.id(), row.id()}, [&t, a, row](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
  Tape& t = a.tape();
  return t.make(a.value() * b.value(), {a.id(), b.id()}, [&t, a, b](const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_transposed(Var a, Var b) {
  if (a.cols() != b.cols()) throw ContractError("matmul_transposed: inner dimension mismatch");
  Tape& t = a.tape();
  return t.make(a.value() * b.value().transpose(), {a.id(), b.id()},
                [&t, a, b](const Matrix& g) {
                  if (t.requires_grad(a)) t.accumulate(a, g * b.value());
                  if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
                });
}

Var transpose(Var a) {
  Tape& t = a.tape();
  return t.make(a.value().transpose(), {a.id()},
                [&t, a](const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var tanh(Var a) {
  Tape& t = a.tape();
  Matrix out = a.value().array().tanh();
  const std::size_t out_id = t.size();
  return t.make(std::move(out), {a.id()}, [&t, a, out_id](const Matrix& g) {
    const Matrix& y = t.value_of(out_id);
    t.accumulate(a, g.array() * (1.0 - y.array().square()));
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

// tanh approximation
Var gelu(Var a) {
  const double kC = kGeluC;
  const double kA = kGeluA;
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix inner = (kC * (x.array() + kA * x.array().cube())).matrix();
  Matrix th = inner.array().tanh();
  Matrix out = 0.5 * x.array() * (1.0 + th.array());
  return t.make(std::move(out), {a.id()}, [&t, a, th = std::move(th), kC, kA](const Matrix& g) {
    const auto xa = a.value().array();
    auto d = 0.5 * (1.0 + th.array()) +
             0.5 * xa * (1.0 - th.array().square()) * kC * (1.0 + 3.0 * kA * xa.square());
    t.accumulate(a, (g.array() * d).matrix());
  });
}

Var exp(Var a) {
  Tape& t = a.tape();
  Matrix out = a.value().array().exp();
  const std::size_t out_id = t.size();
  return t.make(std::move(out), {a.id()}, [&t, a, out_id](const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(t.value_of(out_id)));
  });
}

namespace {

Matrix row_softmax(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// dx = p * (g - rowsum(g * p))
Matrix softmax_backward(const Matrix& p, const Matrix& g) {
  Matrix dx(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double dot = g.row(r).dot(p.row(r));
    dx.row(r) = p.row(r).array() * (g.row(r).array() - dot);
  }
  return dx;
}

}  // namespace

Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const std::size_t out_id = t.size();
  return t.make(row_softmax(a.value()), {a.id()}, [&t, a, out_id](const Matrix& g) {
    t.accumulate(a, softmax_backward(t.value_of(out_id), g));
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  const std::size_t out_id = t.size();
  return t.make(std::move(out), {a.id()}, [&t, a, out_id](const Matrix& g) {
    const Matrix p = t.value_of(out_id).array().exp();
    Matrix dx = g;
    for (Eigen::Index r = 0; r < g.rows(); ++r) dx.row(r) -= p.row(r) * g.row(r).sum();
    t.accumulate(a, dx);
  });
}

Var biased_softmax_rows(Var a, const RowVector& bias) {
  if (bias.size() != a.cols()) throw ContractError("biased_softmax_rows: bias length mismatch");
  Tape& t = a.tape();
  Matrix p = row_softmax(a.value());
  Matrix q = p.array().rowwise() * bias.array();
  RowVector totals(q.rows());
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    totals(r) = q.row(r).sum();
    if (!(totals(r) > 0.0)) throw ContractError("biased_softmax_rows: bias removes all mass");
    q.row(r) /= totals(r);
  }
  const std::size_t out_id = t.size();
  return t.make(std::move(q), {a.id()},
                [&t, a, out_id, bias, p = std::move(p), totals](const Matrix& g) {
                  const Matrix& q = t.value_of(out_id);
                  // through the renormalization, then the elementwise weight
                  Matrix du(q.rows(), q.cols());
                  for (Eigen::Index r = 0; r < q.rows(); ++r) {
                    const double dot = g.row(r).dot(q.row(r));
                    du.row(r) = (g.row(r).array() - dot) / totals(r);
                  }
                  Matrix dp = du.array().rowwise() * bias.array();
                  t.accumulate(a, softmax_backward(p, dp));
                });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  const Eigen::Index n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw ContractError("layer_norm: parameter shape mismatch");
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return t.make(std::move(out), {a.id(), gain.id(), bias.id()},
                [&t, a, gain, bias, xhat = std::move(xhat), inv_std, n](const Matrix& g) {
                  t.accumulate(bias, g.colwise().sum());
                  t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                  if (!t.requires_grad(a)) return;
                  Matrix dxhat = g.array().rowwise() * gain.value().row(0).array();
                  Matrix dx(g.rows(), n);
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(n);
                    dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                  }
                  t.accumulate(a, dx);
                });
}

Var gather_rows(Var table, std::span<const int> indices) {
  Tape& t = table.tape();
  const Matrix& tv = table.value();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx >= tv.rows()) throw ContractError("gather_rows: index out of range");
    if (idx >= 0) out.row(static_cast<Eigen::Index>(i)) = tv.row(idx);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return t.make(std::move(out), {table.id()}, [&t, table, idx = std::move(idx)](const Matrix& g) {
    Matrix dt = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) dt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    t.accumulate(table, dt);
  });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw ContractError("slice_rows: out of range");
  Tape& t = a.tape();
  return t.make(a.value().middleRows(begin, count), {a.id()},
                [&t, a, begin, count](const Matrix& g) {
                  Matrix d = Matrix::Zero(a.rows(), a.cols());
                  d.middleRows(begin, count) = g;
                  t.accumulate(a, d);
                });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ContractError("slice_cols: out of range");
  Tape& t = a.tape();
  return t.make(a.value().middleCols(begin, count), {a.id()},
                [&t, a, begin, count](const Matrix& g) {
                  Matrix d = Matrix::Zero(a.rows(), a.cols());
                  d.middleCols(begin, count) = g;
                  t.accumulate(a, d);
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ContractError("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.make(std::move(out), std::move(ids), [&t, inputs = std::move(inputs)](const Matrix& g) {
    Eigen::Index at = 0;
    for (const Var& p : inputs) {
      t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var pick(Var a, Eigen::Index row, Eigen::Index col) {
  if (row < 0 || col < 0 || row >= a.rows() || col >= a.cols()) throw ContractError("pick: out of range");
  Tape& t = a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value()(row, col);
  return t.make(std::move(out), {a.id()}, [&t, a, row, col](const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d(row, col) = g(0, 0);
    t.accumulate(a, d);
  });
}

Var sum(Var a) {
  Tape& t = a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.make(std::move(out), {a.id()}, [&t, a](const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var add_all(std::span<const Var> scalars) {
  if (scalars.empty()) throw ContractError("add_all: no inputs");
  Tape& t = scalars.front().tape();
  Matrix out = Matrix::Zero(1, 1);
  std::vector<std::size_t> ids;
  for (const Var& s : scalars) {
    if (s.rows() != 1 || s.cols() != 1) throw ContractError("add_all: inputs must be 1x1");
    out(0, 0) += s.scalar();
    ids.push_back(s.id());
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return t.make(std::move(out), std::move(ids), [&t, inputs = std::move(inputs)](const Matrix& g) {
    for (const Var& s : inputs) t.accumulate(s, g);
  });
}

Var nll_rows(Var logits, std::span<const int> targets) {
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows() || targets.empty())
    throw ContractError("nll_rows: one target per row required");
  Tape& t = logits.tape();
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0 || y >= x.cols()) throw ContractError("nll_rows: target out of range");
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    total += lse - x(r, y);
    probs.row(r) = (x.row(r).array() - lse).exp();
  }
  const double n = static_cast<double>(x.rows());
  Matrix out(1, 1);
  out(0, 0) = total / n;
  std::vector<int> ys(targets.begin(), targets.end());
  return t.make(std::move(out), {logits.id()},
                [&t, logits, probs = std::move(probs), ys = std::move(ys), n](const Matrix& g) {
                  Matrix d = probs;
                  for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Eigen::Index>(r), ys[r]) -= 1.0;
                  t.accumulate(logits, d * (g(0, 0) / n));
                });
}

}  // namespace pdgd
