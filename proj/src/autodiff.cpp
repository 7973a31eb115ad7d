#include "hoi/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace hoi::ad {

namespace {

thread_local Tape* g_tape = nullptr;

bool recording(std::initializer_list<const Var*> inputs) {
  if (g_tape == nullptr) return false;
  for (const Var* v : inputs) {
    if (v->requires_grad()) return true;
  }
  return false;
}

template <class Backward>
Var emit(Matrix value, bool record, Backward bw) {
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  if (record) {
    out->requires_grad = true;
    Node* self = out.get();
    out->backward = [self, bw = std::move(bw)]() {
      if (self->grad.size() == 0) return;
      bw(self->grad);
    };
    g_tape->record(out);
  }
  return Var(std::move(out));
}

void push(const std::shared_ptr<Node>& n, const Matrix& g) {
  if (n->requires_grad) n->accumulate(g);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
}

double stable_log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var Var::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a 1x1 scalar");
  }
  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = previous_; }

Tape* active_tape() { return g_tape; }

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value() + b.value(), recording({&a, &b}), [an, bn](const Matrix& g) {
    push(an, g);
    push(bn, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value() - b.value(), recording({&a, &b}), [an, bn](const Matrix& g) {
    push(an, g);
    push(bn, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value().cwiseProduct(b.value()), recording({&a, &b}), [an, bn](const Matrix& g) {
    push(an, g.cwiseProduct(bn->value));
    push(bn, g.cwiseProduct(an->value));
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value().cwiseQuotient(b.value()), recording({&a, &b}), [an, bn](const Matrix& g) {
    push(an, g.cwiseQuotient(bn->value));
    push(bn, -g.cwiseProduct(an->value).cwiseQuotient(bn->value.cwiseProduct(bn->value)));
  });
}

Var scale(const Var& a, double s) {
  auto an = a.shared();
  return emit(a.value() * s, recording({&a}), [an, s](const Matrix& g) { push(an, g * s); });
}

Var add_scalar(const Var& a, double s) {
  auto an = a.shared();
  return emit((a.value().array() + s).matrix(), recording({&a}),
              [an](const Matrix& g) { push(an, g); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: row vector width mismatch");
  }
  auto an = a.shared(), rn = row.shared();
  Matrix v = a.value().rowwise() + row.value().row(0);
  return emit(std::move(v), recording({&a, &row}), [an, rn](const Matrix& g) {
    push(an, g);
    push(rn, g.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("mul_col: column vector height mismatch");
  }
  auto an = a.shared(), cn = col.shared();
  Matrix v = a.value().array().colwise() * col.value().col(0).array();
  return emit(std::move(v), recording({&a, &col}), [an, cn](const Matrix& g) {
    push(an, (g.array().colwise() * cn->value.col(0).array()).matrix());
    push(cn, g.cwiseProduct(an->value).rowwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value() * b.value(), recording({&a, &b}), [an, bn](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * g);
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_bt: inner dimension mismatch");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value() * b.value().transpose(), recording({&a, &b}), [an, bn](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g * bn->value);
    if (bn->requires_grad) bn->accumulate(g.transpose() * an->value);
  });
}

Var relu(const Var& a) {
  auto an = a.shared();
  return emit(a.value().cwiseMax(0.0), recording({&a}), [an](const Matrix& g) {
    push(an, (an->value.array() > 0.0).select(g, 0.0));
  });
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  auto an = a.shared();
  Matrix s = v;
  return emit(std::move(v), recording({&a}), [an, s = std::move(s)](const Matrix& g) {
    push(an, g.cwiseProduct((s.array() * (1.0 - s.array())).matrix()));
  });
}

Var abs(const Var& a) {
  auto an = a.shared();
  return emit(a.value().cwiseAbs(), recording({&a}), [an](const Matrix& g) {
    push(an, g.cwiseProduct(an->value.unaryExpr([](double x) {
      return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    })));
  });
}

Var log(const Var& a) {
  auto an = a.shared();
  return emit(a.value().array().log().matrix(), recording({&a}),
              [an](const Matrix& g) { push(an, g.cwiseQuotient(an->value)); });
}

Var minimum(const Var& a, const Var& b) {
  check_same_shape(a, b, "minimum");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value().cwiseMin(b.value()), recording({&a, &b}), [an, bn](const Matrix& g) {
    auto pick_a = (an->value.array() <= bn->value.array());
    push(an, pick_a.select(g, 0.0));
    push(bn, pick_a.select(Matrix::Zero(g.rows(), g.cols()), g));
  });
}

Var maximum(const Var& a, const Var& b) {
  check_same_shape(a, b, "maximum");
  auto an = a.shared(), bn = b.shared();
  return emit(a.value().cwiseMax(b.value()), recording({&a, &b}), [an, bn](const Matrix& g) {
    auto pick_a = (an->value.array() >= bn->value.array());
    push(an, pick_a.select(g, 0.0));
    push(bn, pick_a.select(Matrix::Zero(g.rows(), g.cols()), g));
  });
}

Var clamp_min(const Var& a, double lo) {
  auto an = a.shared();
  return emit(a.value().cwiseMax(lo), recording({&a}), [an, lo](const Matrix& g) {
    push(an, (an->value.array() > lo).select(g, 0.0));
  });
}

Var sum(const Var& a) {
  auto an = a.shared();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  const auto r = a.rows(), c = a.cols();
  return emit(std::move(v), recording({&a}), [an, r, c](const Matrix& g) {
    push(an, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  auto an = a.shared();
  const auto c = a.cols();
  return emit(a.value().rowwise().sum(), recording({&a}), [an, c](const Matrix& g) {
    push(an, g.col(0).replicate(1, c));
  });
}

Var row_max(const Var& a) {
  if (a.cols() == 0) throw std::invalid_argument("row_max: no columns");
  std::vector<Eigen::Index> arg(a.rows());
  Matrix v(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::Index j = 0;
    v(i, 0) = a.value().row(i).maxCoeff(&j);
    arg[i] = j;
  }
  auto an = a.shared();
  const auto c = a.cols();
  return emit(std::move(v), recording({&a}), [an, c, arg = std::move(arg)](const Matrix& g) {
    Matrix ga = Matrix::Zero(static_cast<Eigen::Index>(arg.size()), c);
    for (std::size_t i = 0; i < arg.size(); ++i) ga(i, arg[i]) = g(i, 0);
    push(an, ga);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range outside matrix");
  }
  auto an = a.shared();
  const auto r = a.rows(), c = a.cols();
  return emit(a.value().middleCols(start, count), recording({&a}),
              [an, r, c, start, count](const Matrix& g) {
                Matrix ga = Matrix::Zero(r, c);
                ga.middleCols(start, count) = g;
                push(an, ga);
              });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range outside matrix");
  }
  auto an = a.shared();
  const auto r = a.rows(), c = a.cols();
  return emit(a.value().middleRows(start, count), recording({&a}),
              [an, r, c, start, count](const Matrix& g) {
                Matrix ga = Matrix::Zero(r, c);
                ga.middleRows(start, count) = g;
                push(an, ga);
              });
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows) {
  Matrix v(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: bad index");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  auto an = a.shared();
  const auto r = a.rows(), c = a.cols();
  return emit(std::move(v), recording({&a}), [an, r, c, rows](const Matrix& g) {
    Matrix ga = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    push(an, ga);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const auto r = parts.front().rows();
  Eigen::Index total = 0;
  bool rec = false;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.cols();
    rec = rec || recording({&p});
  }
  Matrix v(r, total);
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    nodes.push_back(p.shared());
    offsets.push_back(off);
    off += p.cols();
  }
  return emit(std::move(v), rec, [nodes, offsets](const Matrix& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      push(nodes[i], g.middleCols(offsets[i], nodes[i]->value.cols()));
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const auto c = parts.front().cols();
  Eigen::Index total = 0;
  bool rec = false;
  for (const auto& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
    total += p.rows();
    rec = rec || recording({&p});
  }
  Matrix v(total, c);
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    nodes.push_back(p.shared());
    offsets.push_back(off);
    off += p.rows();
  }
  return emit(std::move(v), rec, [nodes, offsets](const Matrix& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      push(nodes[i], g.middleRows(offsets[i], nodes[i]->value.rows()));
    }
  });
}

Var masked_softmax_rows(const Var& logits, const Matrix& mask) {
  const bool masked = mask.size() != 0;
  if (masked && (mask.rows() != logits.rows() || mask.cols() != logits.cols())) {
    throw std::invalid_argument("masked_softmax_rows: mask shape mismatch");
  }
  Matrix s = logits.value();
  if (masked) s = (mask.array() != 0.0).select(s, -kMaskSentinel);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= s.row(i).sum();
  }
  auto ln = logits.shared();
  Matrix out = s;
  return emit(std::move(out), recording({&logits}), [ln, s = std::move(s)](const Matrix& g) {
    // d logits = s ⊙ (g - rowsum(g ⊙ s))
    Eigen::VectorXd dot = g.cwiseProduct(s).rowwise().sum();
    Matrix gl = s.cwiseProduct(g - dot.replicate(1, g.cols()));
    push(ln, gl);
  });
}

Var softmax_rows(const Var& logits) { return masked_softmax_rows(logits, Matrix()); }

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps) {
  const auto n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw std::invalid_argument("layer_norm_rows: gain/bias width mismatch");
  }
  Matrix xhat(a.rows(), n);
  Eigen::VectorXd inv_std(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mu = a.value().row(i).mean();
    const auto centered = (a.value().row(i).array() - mu).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(n);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  auto an = a.shared(), gn = gain.shared(), bn = bias.shared();
  return emit(std::move(y), recording({&a, &gain, &bias}),
              [an, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), n](const Matrix& g) {
                push(gn, g.cwiseProduct(xhat).colwise().sum());
                push(bn, g.colwise().sum());
                if (!an->requires_grad) return;
                Matrix gx = (g.array().rowwise() * gn->value.row(0).array()).matrix();
                Matrix ga(gx.rows(), gx.cols());
                const double dn = static_cast<double>(n);
                for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                  const double m1 = gx.row(i).mean();
                  const double m2 = gx.row(i).dot(xhat.row(i)) / dn;
                  ga.row(i) = inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
                }
                an->accumulate(ga);
              });
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw std::invalid_argument("bce_with_logits: target shape mismatch");
  }
  const double n = static_cast<double>(logits.value().size());
  if (n == 0) return Var::constant(Matrix::Zero(1, 1));
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double x = logits.value()(i, j), t = targets(i, j);
      total -= t * stable_log_sigmoid(x) + (1.0 - t) * stable_log_sigmoid(-x);
    }
  }
  Matrix v(1, 1);
  v(0, 0) = total / n;
  auto ln = logits.shared();
  return emit(std::move(v), recording({&logits}), [ln, targets, n](const Matrix& g) {
    Matrix s = ln->value.unaryExpr([](double x) {
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    push(ln, (s - targets) * (g(0, 0) / n));
  });
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets,
                       const std::vector<double>& class_weights) {
  const auto rows = logits.rows(), cols = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != rows) {
    throw std::invalid_argument("cross_entropy_rows: one target per row required");
  }
  if (!class_weights.empty() && static_cast<Eigen::Index>(class_weights.size()) != cols) {
    throw std::invalid_argument("cross_entropy_rows: class weight count mismatch");
  }
  Matrix probs(rows, cols);
  double total = 0.0, wsum = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= cols) throw std::out_of_range("cross_entropy_rows: target out of range");
    const double m = logits.value().row(i).maxCoeff();
    const auto e = (logits.value().row(i).array() - m).exp();
    const double z = e.sum();
    probs.row(i) = e / z;
    const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(t)];
    total += w * -(logits.value()(i, t) - m - std::log(z));
    wsum += w;
  }
  Matrix v(1, 1);
  v(0, 0) = wsum > 0 ? total / wsum : 0.0;
  auto ln = logits.shared();
  return emit(std::move(v), recording({&logits}),
              [ln, probs = std::move(probs), targets, class_weights, wsum](const Matrix& g) {
                if (wsum <= 0) return;
                Matrix gl = probs;
                for (Eigen::Index i = 0; i < gl.rows(); ++i) {
                  const int t = targets[static_cast<std::size_t>(i)];
                  const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(t)];
                  gl(i, t) -= 1.0;
                  gl.row(i) *= w * g(0, 0) / wsum;
                }
                push(ln, gl);
              });
}

}  // namespace hoi::ad
