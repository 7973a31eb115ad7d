// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// Every value is an Eigen::MatrixXd. Operations executed while a Tape is
// active (see TapeScope) record a backward closure; Tape::backward replays
// them in reverse creation order. Without an active tape the same operations
// run as plain forward evaluation with no bookkeeping.
#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hoi::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
  std::function<void()> backward;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Matrix value);
  static Var parameter(Matrix value);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  double scalar() const { return node_->value(0, 0); }

  void zero_grad() { node_->grad.resize(0, 0); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

class Tape {
 public:
  void record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }
  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(const Var& loss);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
};

// Makes `tape` the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Substitute for -inf in masked softmax rows.
inline constexpr double kMaskSentinel = 4294967295.0;  // 2^32 - 1

// ---- elementwise and linear algebra ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);        // broadcast 1×n over rows
Var mul_col(const Var& a, const Var& col);        // broadcast m×1 over columns
Var matmul(const Var& a, const Var& b);
Var matmul_bt(const Var& a, const Var& b);        // a · bᵀ
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);
Var log(const Var& a);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var clamp_min(const Var& a, double lo);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);                         // m×n -> m×1
Var row_max(const Var& a);                         // m×n -> m×1, gradient to first argmax

// ---- structural ----
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);

// ---- neural network primitives ----
// Row softmax where entries with mask(i,j) == 0 are replaced by -kMaskSentinel.
// An empty mask (0×0) means every entry is active.
Var masked_softmax_rows(const Var& logits, const Matrix& mask);
Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
// Weighted mean of binary cross-entropy computed from logits.
Var bce_with_logits(const Var& logits, const Matrix& targets);
// Weighted multi-class cross-entropy over rows of logits:
// Σ_i w[t_i]·(-log softmax(l_i)[t_i]) / Σ_i w[t_i].
Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets,
                       const std::vector<double>& class_weights);
Var softmax_rows(const Var& logits);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace hoi::ad
