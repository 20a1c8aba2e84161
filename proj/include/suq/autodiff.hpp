#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace suq::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Named trainable matrix. Parameters live outside any tape; a tape refers to
// them through leaf nodes.
struct Parameter {
  std::string name;
  Matrix value;
};

// Result of a backward pass: gradients for every parameter leaf and every
// variable leaf. Leaves that did not influence the loss get exact zeros.
class Gradients {
 public:
  const Matrix& of(const Parameter& p) const;
  const Matrix& of(const Var& leaf) const;
  bool contains(const Parameter& p) const { return by_param_.count(&p) != 0; }

 private:
  friend class Tape;
  std::unordered_map<const Parameter*, Matrix> by_param_;
  std::unordered_map<int, Matrix> by_leaf_;
  mutable std::unordered_map<const Parameter*, Matrix> zeros_;
};

class Tape {
 public:
  // Receives the gradient of the loss with respect to the node's value and
  // pushes contributions to its parents via accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf requiring gradient, for tests and oracle checks.
  Var variable(Matrix value);
  // Leaf bound to a parameter. Repeated calls return the same node.
  Var parameter(const Parameter& p);

  // Records an op result. `fn` is dropped when no parent needs gradients.
  Var record(Matrix value, std::vector<int> parents, BackwardFn fn, const char* op);

  bool requires_grad(const Var& v) const;
  void accumulate(int id, const Matrix& grad);
  void accumulate(const Var& v, const Matrix& grad) { accumulate(v.id(), grad); }

  // Reverse pass from a scalar loss. Each node is visited once, in reverse
  // creation order (which is a topological order).
  Gradients backward(const Var& loss);

  // Rejects NaN/Inf values at record time.
  void set_check_finite(bool on) { check_finite_ = on; }

  const Matrix& value(int id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    bool leaf = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool check_finite_ = false;
};

// ---- elementwise and linear algebra ----------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var div(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
// Multiplies every entry of `a` by the 1x1 variable `s`.
Var scale_by(const Var& a, const Var& s);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Broadcasting helpers: row is 1 x cols, col is rows x 1.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
Var mul_col(const Var& a, const Var& col);
Var div_col(const Var& a, const Var& col);
Var sub_col(const Var& a, const Var& col);

Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);

// ---- reductions and reshaping -----------------------------------------------

Var sum(const Var& a);   // 1x1
Var mean(const Var& a);  // 1x1
Var row_sum(const Var& a);
Var row_norm(const Var& a);
Var normalize_rows(const Var& a);
Var row_dot(const Var& a, const Var& b);
Var row_logsumexp(const Var& a);
// log of the mean of exp over each row.
Var row_logmeanexp(const Var& a);
// out(i) = a(i, index[i]).
Var pick(const Var& a, const std::vector<int>& index);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
// Copy of the square matrix a with its diagonal replaced by the column v.
Var set_diagonal(const Var& a, const Var& v);
// Stacks `a` on itself `times` times along rows.
Var repeat_rows(const Var& a, int times);

// Forward identity; nothing flows back through the result.
Var stop_gradient(const Var& a);

// Elementwise log C_d(kappa) with derivative -A_d(kappa).
Var log_vmf_normalizer(const Var& kappa, int d);

}  // namespace suq::ad
