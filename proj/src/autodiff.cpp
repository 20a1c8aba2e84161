#include "suq/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "suq/sphere.hpp"

namespace suq::ad {

const Matrix& Var::value() const {
  if (!tape_) throw std::logic_error("Var: empty handle");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar: not a 1x1 value");
  return v(0, 0);
}

const Matrix& Gradients::of(const Parameter& p) const {
  auto it = by_param_.find(&p);
  if (it != by_param_.end()) return it->second;
  auto& z = zeros_[&p];
  if (z.rows() != p.value.rows() || z.cols() != p.value.cols()) {
    z = Matrix::Zero(p.value.rows(), p.value.cols());
  }
  return z;
}

const Matrix& Gradients::of(const Var& leaf) const {
  auto it = by_leaf_.find(leaf.id());
  if (it == by_leaf_.end()) throw std::invalid_argument("Gradients: not a leaf of this pass");
  return it->second;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  Var v = constant(std::move(value));
  nodes_[v.id()].requires_grad = true;
  return v;
}

Var Tape::parameter(const Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Var v = variable(p.value);
  nodes_[v.id()].param = &p;
  param_nodes_[&p] = v.id();
  return v;
}

Var Tape::record(Matrix value, std::vector<int> parents, BackwardFn fn, const char* op) {
  if (check_finite_ && !value.allFinite()) {
    throw std::runtime_error(std::string("non-finite value produced by ") + op);
  }
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

bool Tape::requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

void Tape::accumulate(int id, const Matrix& grad) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = grad;
    n.has_grad = true;
  } else {
    n.grad += grad;
  }
}

Gradients Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  if (loss.value().size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  Gradients out;
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
    Node& n = nodes_[id];
    if (!n.leaf || !n.requires_grad) continue;
    Matrix g = n.has_grad ? n.grad : Matrix::Zero(n.value.rows(), n.value.cols());
    if (n.param) out.by_param_[n.param] = g;
    out.by_leaf_[id] = std::move(g);
  }
  return out;
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("ops on different tapes");
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  int ia = a.id(), ib = b.id();
  return a.tape()->record(
      a.value() + b.value(), {ia, ib},
      [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  int ia = a.id(), ib = b.id();
  return a.tape()->record(
      a.value() - b.value(), {ia, ib},
      [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  int ia = a.id(), ib = b.id();
  return a.tape()->record(
      a.value().cwiseProduct(b.value()), {ia, ib},
      [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        t.accumulate(ib, g.cwiseProduct(t.value(ia)));
      },
      "mul");
}

Var div(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "div");
  int ia = a.id(), ib = b.id();
  return a.tape()->record(
      a.value().cwiseQuotient(b.value()), {ia, ib},
      [ia, ib](Tape& t, const Matrix& g) {
        const Matrix& bv = t.value(ib);
        t.accumulate(ia, g.cwiseQuotient(bv));
        t.accumulate(ib, -(g.cwiseProduct(t.value(ia)).array() / bv.array().square()).matrix());
      },
      "div");
}

Var scale(const Var& a, double s) {
  int ia = a.id();
  return a.tape()->record(
      a.value() * s, {ia}, [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); },
      "scale");
}

Var add_scalar(const Var& a, double s) {
  int ia = a.id();
  return a.tape()->record(
      (a.value().array() + s).matrix(), {ia},
      [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); }, "add_scalar");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale_by(const Var& a, const Var& s) {
  require_same_tape(a, s);
  if (s.value().size() != 1) throw std::invalid_argument("scale_by: scale must be 1x1");
  int ia = a.id(), is = s.id();
  return a.tape()->record(
      a.value() * s.scalar(), {ia, is},
      [ia, is](Tape& t, const Matrix& g) {
        t.accumulate(ia, g * t.value(is)(0, 0));
        t.accumulate(is, Matrix::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
      },
      "scale_by");
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  int ia = a.id(), ib = b.id();
  return a.tape()->record(
      a.value() * b.value(), {ia, ib},
      [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g * t.value(ib).transpose());
        t.accumulate(ib, t.value(ia).transpose() * g);
      },
      "matmul");
}

Var transpose(const Var& a) {
  int ia = a.id();
  return a.tape()->record(
      a.value().transpose(), {ia},
      [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.transpose()); }, "transpose");
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape");
  int ia = a.id(), ir = row.id();
  return a.tape()->record(
      a.value().rowwise() + row.value().row(0), {ia, ir},
      [ia, ir](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ir, g.colwise().sum());
      },
      "add_row");
}

Var mul_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: shape");
  int ia = a.id(), ir = row.id();
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape()->record(
      std::move(out), {ia, ir},
      [ia, ir](Tape& t, const Matrix& g) {
        const Matrix& r = t.value(ir);
        t.accumulate(ia, (g.array().rowwise() * r.row(0).array()).matrix());
        t.accumulate(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
      },
      "mul_row");
}

Var mul_col(const Var& a, const Var& col) {
  require_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: shape");
  int ia = a.id(), ic = col.id();
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape()->record(
      std::move(out), {ia, ic},
      [ia, ic](Tape& t, const Matrix& g) {
        const Matrix& c = t.value(ic);
        t.accumulate(ia, (g.array().colwise() * c.col(0).array()).matrix());
        t.accumulate(ic, g.cwiseProduct(t.value(ia)).rowwise().sum());
      },
      "mul_col");
}

Var div_col(const Var& a, const Var& col) {
  require_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("div_col: shape");
  int ia = a.id(), ic = col.id();
  Matrix out = a.value().array().colwise() / col.value().col(0).array();
  return a.tape()->record(
      std::move(out), {ia, ic},
      [ia, ic](Tape& t, const Matrix& g) {
        const Eigen::ArrayXd c = t.value(ic).col(0).array();
        t.accumulate(ia, (g.array().colwise() / c).matrix());
        const Eigen::ArrayXd s = g.cwiseProduct(t.value(ia)).rowwise().sum().array();
        t.accumulate(ic, (-s / c.square()).matrix());
      },
      "div_col");
}

Var sub_col(const Var& a, const Var& col) {
  require_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("sub_col: shape");
  int ia = a.id(), ic = col.id();
  Matrix out = a.value().colwise() - col.value().col(0);
  return a.tape()->record(
      std::move(out), {ia, ic},
      [ia, ic](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ic, -g.rowwise().sum());
      },
      "sub_col");
}

Var exp(const Var& a) {
  int ia = a.id();
  return a.tape()->record(
      a.value().array().exp().matrix(), {ia},
      [ia](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct(Matrix(t.value(ia).array().exp())));
      },
      "exp");
}

Var log(const Var& a) {
  int ia = a.id();
  return a.tape()->record(
      a.value().array().log().matrix(), {ia},
      [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.cwiseQuotient(t.value(ia))); }, "log");
}

Var tanh(const Var& a) {
  int ia = a.id();
  return a.tape()->record(
      a.value().array().tanh().matrix(), {ia},
      [ia](Tape& t, const Matrix& g) {
        const Eigen::ArrayXXd th = t.value(ia).array().tanh();
        t.accumulate(ia, (g.array() * (1.0 - th.square())).matrix());
      },
      "tanh");
}

namespace {
double softplus_scalar(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var softplus(const Var& a) {
  int ia = a.id();
  return a.tape()->record(
      a.value().unaryExpr(&softplus_scalar), {ia},
      [ia](Tape& t, const Matrix& g) {
        t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr(&sigmoid_scalar)));
      },
      "softplus");
}

Var sqrt(const Var& a) {
  int ia = a.id();
  return a.tape()->record(
      a.value().array().sqrt().matrix(), {ia},
      [ia](Tape& t, const Matrix& g) {
        t.accumulate(ia, (g.array() * 0.5 / t.value(ia).array().sqrt()).matrix());
      },
      "sqrt");
}

Var square(const Var& a) {
  int ia = a.id();
  return a.tape()->record(
      a.value().array().square().matrix(), {ia},
      [ia](Tape& t, const Matrix& g) {
        t.accumulate(ia, (2.0 * g.array() * t.value(ia).array()).matrix());
      },
      "square");
}

Var sum(const Var& a) {
  int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(
      Matrix::Constant(1, 1, a.value().sum()), {ia},
      [ia, r, c](Tape& t, const Matrix& g) { t.accumulate(ia, Matrix::Constant(r, c, g(0, 0))); },
      "sum");
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  int ia = a.id();
  const Eigen::Index c = a.cols();
  return a.tape()->record(
      a.value().rowwise().sum(), {ia},
      [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, g.col(0).replicate(1, c)); },
      "row_sum");
}

Var row_norm(const Var& a) {
  int ia = a.id();
  Matrix norms = a.value().rowwise().norm();
  return a.tape()->record(
      std::move(norms), {ia},
      [ia](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        const Eigen::ArrayXd n = x.rowwise().norm().array();
        t.accumulate(ia, (x.array().colwise() * (g.col(0).array() / n)).matrix());
      },
      "row_norm");
}

Var normalize_rows(const Var& a) { return div_col(a, row_norm(a)); }

Var row_dot(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "row_dot");
  int ia = a.id(), ib = b.id();
  return a.tape()->record(
      a.value().cwiseProduct(b.value()).rowwise().sum(), {ia, ib},
      [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, (t.value(ib).array().colwise() * g.col(0).array()).matrix());
        t.accumulate(ib, (t.value(ia).array().colwise() * g.col(0).array()).matrix());
      },
      "row_dot");
}

Var row_logsumexp(const Var& a) {
  int ia = a.id();
  const Matrix& x = a.value();
  const Eigen::VectorXd peak = x.rowwise().maxCoeff();
  Matrix shifted = x.colwise() - peak;
  const Eigen::VectorXd s = shifted.array().exp().rowwise().sum();
  Matrix out = (peak.array() + s.array().log()).matrix();
  return a.tape()->record(
      std::move(out), {ia},
      [ia](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        const Eigen::VectorXd peak = x.rowwise().maxCoeff();
        Eigen::ArrayXXd e = (x.colwise() - peak).array().exp();
        const Eigen::ArrayXd s = e.rowwise().sum();
        e.colwise() *= g.col(0).array() / s;
        t.accumulate(ia, e.matrix());
      },
      "row_logsumexp");
}

Var row_logmeanexp(const Var& a) {
  return add_scalar(row_logsumexp(a), -std::log(static_cast<double>(a.cols())));
}

Var pick(const Var& a, const std::vector<int>& index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) {
    throw std::invalid_argument("pick: index length must equal rows");
  }
  for (int j : index) {
    if (j < 0 || j >= a.cols()) throw std::out_of_range("pick: column index out of range");
  }
  int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix out(r, 1);
  for (Eigen::Index i = 0; i < r; ++i) out(i, 0) = a.value()(i, index[i]);
  return a.tape()->record(
      std::move(out), {ia},
      [ia, index, r, c](Tape& t, const Matrix& g) {
        Matrix ga = Matrix::Zero(r, c);
        for (Eigen::Index i = 0; i < r; ++i) ga(i, index[i]) = g(i, 0);
        t.accumulate(ia, ga);
      },
      "pick");
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw std::out_of_range("slice_rows: range outside matrix");
  }
  int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(
      a.value().middleRows(begin, count), {ia},
      [ia, begin, count, r, c](Tape& t, const Matrix& g) {
        Matrix ga = Matrix::Zero(r, c);
        ga.middleRows(begin, count) = g;
        t.accumulate(ia, ga);
      },
      "slice_rows");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    require_same_tape(parts[0], p);
    offsets.push_back(rows);
    rows += p.rows();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.middleRows(offsets[k], parts[k].rows()) = parts[k].value();
  }
  return parts[0].tape()->record(
      std::move(out), ids,
      [ids, offsets](Tape& t, const Matrix& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          t.accumulate(ids[k], g.middleRows(offsets[k], t.value(ids[k]).rows()));
        }
      },
      "concat_rows");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    require_same_tape(parts[0], p);
    offsets.push_back(cols);
    cols += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.middleCols(offsets[k], parts[k].cols()) = parts[k].value();
  }
  return parts[0].tape()->record(
      std::move(out), ids,
      [ids, offsets](Tape& t, const Matrix& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          t.accumulate(ids[k], g.middleCols(offsets[k], t.value(ids[k]).cols()));
        }
      },
      "concat_cols");
}

Var set_diagonal(const Var& a, const Var& v) {
  require_same_tape(a, v);
  if (a.rows() != a.cols() || v.rows() != a.rows() || v.cols() != 1) {
    throw std::invalid_argument("set_diagonal: need square a and matching column v");
  }
  int ia = a.id(), iv = v.id();
  Matrix out = a.value();
  out.diagonal() = v.value().col(0);
  return a.tape()->record(
      std::move(out), {ia, iv},
      [ia, iv](Tape& t, const Matrix& g) {
        Matrix ga = g;
        ga.diagonal().setZero();
        t.accumulate(ia, ga);
        t.accumulate(iv, g.diagonal());
      },
      "set_diagonal");
}

Var repeat_rows(const Var& a, int times) {
  int ia = a.id();
  const Eigen::Index r = a.rows();
  return a.tape()->record(
      a.value().replicate(times, 1), {ia},
      [ia, r, times](Tape& t, const Matrix& g) {
        Matrix ga = g.topRows(r);
        for (int k = 1; k < times; ++k) ga += g.middleRows(k * r, r);
        t.accumulate(ia, ga);
      },
      "repeat_rows");
}

Var stop_gradient(const Var& a) { return a.tape()->record(a.value(), {}, nullptr, "stop_gradient"); }

Var log_vmf_normalizer(const Var& kappa, int d) {
  int ik = kappa.id();
  Matrix out = kappa.value().unaryExpr([d](double k) { return log_normalizer(d, k); });
  return kappa.tape()->record(
      std::move(out), {ik},
      [ik, d](Tape& t, const Matrix& g) {
        const Matrix dk =
            t.value(ik).unaryExpr([d](double k) { return -mean_resultant_length(d, k); });
        t.accumulate(ik, g.cwiseProduct(dk));
      },
      "log_vmf_normalizer");
}

}  // namespace suq::ad
