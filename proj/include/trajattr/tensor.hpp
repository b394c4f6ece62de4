#pragma once

// Dense 2-D tensors with a reverse-mode tape.
//
// Every tensor is a row-major matrix (vectors are 1 x n rows, scalars 1 x 1).
// Operations append a node to the tape that owns their operands; nodes are
// stored in creation order, which is a topological order, so the backward
// sweep is a single reverse pass over the node list.
//
// Broadcasting is limited to a 1 x n row operand against an m x n operand
// (the leading-batch dimension).

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trajattr {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = RowMatrix<double>;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

template <typename Scalar>
class BasicTape;

template <typename Scalar>
class BasicTensor {
 public:
  using MatrixType = RowMatrix<Scalar>;

  BasicTensor() = default;

  const MatrixType& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  Index size() const { return value().size(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Scalar item() const {
    if (size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_string(rows(), cols()));
    }
    return value()(0, 0);
  }

  BasicTape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class BasicTape<Scalar>;
  BasicTensor(BasicTape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using MatrixType = RowMatrix<Scalar>;
  using Tensor = BasicTensor<Scalar>;
  // Receives the gradient of the node's output and scatters it to parents.
  using BackwardFn = std::function<void(BasicTape&, const MatrixType& out_grad)>;

  // A tape that does not record backward closures is an inference context.
  explicit BasicTape(bool record = true, bool check_finite =
#ifdef NDEBUG
                                             false
#else
                                             true
#endif
                     )
      : record_(record), check_finite_(check_finite) {}

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Tensor constant(MatrixType value) { return push(std::move(value), false, {}); }

  Tensor variable(MatrixType value) { return push(std::move(value), record_, {}); }

  // Leaf whose gradient is reported under `name` by parameter_grads(). The
  // value is referenced, not copied: it must outlive the tape and stay
  // unchanged until backward() has run.
  Tensor parameter(const std::string& name, const MatrixType& value) {
    Node node;
    node.external = &value;
    node.requires_grad = record_;
    nodes_.push_back(std::move(node));
    const std::size_t id = nodes_.size() - 1;
    if (record_) {
      nodes_[id].name = name;
      param_ids_.push_back(id);
    }
    return Tensor(this, id);
  }

  const MatrixType& value(std::size_t id) const {
    const Node& node = nodes_[id];
    return node.external ? *node.external : node.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  Tensor push(MatrixType value, bool requires_grad, BackwardFn backward) {
    if (check_finite_ && !value.allFinite()) {
      throw NumericError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
    }
    Node node;
    node.value = std::move(value);
    node.requires_grad = record_ && requires_grad;
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Tensor(this, nodes_.size() - 1);
  }

  void accumulate(std::size_t id, const MatrixType& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  void backward(const Tensor& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: tensor belongs to another tape");
    if (loss.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_string(loss.rows(), loss.cols()));
    }
    if (!record_) throw std::invalid_argument("backward: tape is not recording");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = MatrixType::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
      // The closure may append to other nodes' grads but never to this one.
      const MatrixType g = node.grad;
      node.backward(*this, g);
    }
  }

  // Gradient of the last backward() w.r.t. a node; zeros if unreached.
  MatrixType grad(const Tensor& t) const {
    const Node& node = nodes_[t.id()];
    if (node.grad.size() == 0) return MatrixType::Zero(value(t.id()).rows(), value(t.id()).cols());
    return node.grad;
  }

  std::map<std::string, MatrixType> parameter_grads() const {
    std::map<std::string, MatrixType> out;
    for (std::size_t id : param_ids_) {
      const Node& node = nodes_[id];
      MatrixType g = node.grad.size() == 0 ? MatrixType::Zero(value(id).rows(), value(id).cols()) : node.grad;
      auto [it, inserted] = out.emplace(node.name, g);
      if (!inserted) it->second += g;
    }
    return out;
  }

 private:
  struct Node {
    MatrixType value;
    const MatrixType* external = nullptr;
    MatrixType grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::string name;
  };

  bool record_;
  bool check_finite_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> param_ids_;
};

using Tape = BasicTape<double>;
using Tensor = BasicTensor<double>;

namespace detail {

template <typename Scalar>
BasicTape<Scalar>& common_tape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b,
                               const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(b.rows(), b.cols()));
  }
}

// b is either the same shape as a or a 1 x cols row broadcast over a's rows.
template <typename Scalar>
bool require_broadcastable(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return false;
  if (b.rows() == 1 && a.cols() == b.cols()) return true;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) + " vs " +
                   shape_string(b.rows(), b.cols()));
}

template <typename Scalar, typename Forward, typename Derivative>
BasicTensor<Scalar> unary(const BasicTensor<Scalar>& a, Forward f, Derivative df) {
  auto& tape = *a.tape();
  RowMatrix<Scalar> out = a.value().unaryExpr(f);
  const std::size_t ia = a.id();
  return tape.push(std::move(out), a.requires_grad(),
                   [ia, df](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& x = t.value(ia);
                     RowMatrix<Scalar> local = x.unaryExpr(df);
                     t.accumulate(ia, g.cwiseProduct(local));
                   });
}

}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  auto& tape = detail::common_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_string(a.rows(), a.cols()) + " x " +
                     shape_string(b.rows(), b.cols()));
  }
  RowMatrix<Scalar> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ia, ib](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     if (t.requires_grad(ia)) {
                       RowMatrix<Scalar> ga(g.rows(), t.value(ib).rows());
                       ga.noalias() = g * t.value(ib).transpose();
                       t.accumulate(ia, ga);
                     }
                     if (t.requires_grad(ib)) {
                       RowMatrix<Scalar> gb(t.value(ia).cols(), g.cols());
                       gb.noalias() = t.value(ia).transpose() * g;
                       t.accumulate(ib, gb);
                     }
                   });
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  auto& tape = detail::common_tape(a, b, "add");
  const bool bcast = detail::require_broadcastable(a, b, "add");
  RowMatrix<Scalar> out = a.value();
  if (bcast) {
    out.rowwise() += b.value().row(0);
  } else {
    out += b.value();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ia, ib, bcast](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     t.accumulate(ia, g);
                     if (bcast) {
                       t.accumulate(ib, g.colwise().sum());
                     } else {
                       t.accumulate(ib, g);
                     }
                   });
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  auto& tape = detail::common_tape(a, b, "sub");
  const bool bcast = detail::require_broadcastable(a, b, "sub");
  RowMatrix<Scalar> out = a.value();
  if (bcast) {
    out.rowwise() -= b.value().row(0);
  } else {
    out -= b.value();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ia, ib, bcast](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     t.accumulate(ia, g);
                     if (bcast) {
                       t.accumulate(ib, -g.colwise().sum());
                     } else {
                       t.accumulate(ib, -g);
                     }
                   });
}

template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  auto& tape = detail::common_tape(a, b, "mul");
  const bool bcast = detail::require_broadcastable(a, b, "mul");
  RowMatrix<Scalar> out = a.value();
  if (bcast) {
    out.array().rowwise() *= b.value().row(0).array();
  } else {
    out.array() *= b.value().array();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ia, ib, bcast](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& va = t.value(ia);
                     const auto& vb = t.value(ib);
                     if (bcast) {
                       RowMatrix<Scalar> ga = g;
                       ga.array().rowwise() *= vb.row(0).array();
                       t.accumulate(ia, ga);
                       t.accumulate(ib, g.cwiseProduct(va).colwise().sum());
                     } else {
                       t.accumulate(ia, g.cwiseProduct(vb));
                       t.accumulate(ib, g.cwiseProduct(va));
                     }
                   });
}

template <typename Scalar>
BasicTensor<Scalar> div(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  auto& tape = detail::common_tape(a, b, "div");
  detail::require_same_shape(a, b, "div");
  RowMatrix<Scalar> out = a.value().cwiseQuotient(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ia, ib](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& va = t.value(ia);
                     const auto& vb = t.value(ib);
                     t.accumulate(ia, g.cwiseQuotient(vb));
                     t.accumulate(ib, -g.cwiseProduct(va).cwiseQuotient(vb.cwiseProduct(vb)));
                   });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar s) {
  const std::size_t ia = a.id();
  return a.tape()->push(a.value() * s, a.requires_grad(),
                        [ia, s](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) { t.accumulate(ia, g * s); });
}

template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar s) {
  const std::size_t ia = a.id();
  RowMatrix<Scalar> out = a.value().array() + s;
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) { t.accumulate(ia, g); });
}

template <typename Scalar>
BasicTensor<Scalar> tanh(const BasicTensor<Scalar>& a) {
  auto& tape = *a.tape();
  RowMatrix<Scalar> out = a.value().array().tanh();
  const std::size_t ia = a.id();
  const std::size_t io = tape.size();
  return tape.push(std::move(out), a.requires_grad(),
                   [ia, io](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& y = t.value(io);
                     t.accumulate(ia, (g.array() * (Scalar(1) - y.array().square())).matrix());
                   });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  return detail::unary(
      a, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); },
      [](Scalar x) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a) {
  auto& tape = *a.tape();
  RowMatrix<Scalar> out = a.value().array().exp();
  const std::size_t ia = a.id();
  const std::size_t io = tape.size();
  return tape.push(std::move(out), a.requires_grad(),
                   [ia, io](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     t.accumulate(ia, g.cwiseProduct(t.value(io)));
                   });
}

template <typename Scalar>
BasicTensor<Scalar> log(const BasicTensor<Scalar>& a) {
  return detail::unary(
      a, [](Scalar x) { return std::log(x); }, [](Scalar x) { return Scalar(1) / x; });
}

template <typename Scalar>
BasicTensor<Scalar> square(const BasicTensor<Scalar>& a) {
  return detail::unary(
      a, [](Scalar x) { return x * x; }, [](Scalar x) { return Scalar(2) * x; });
}

// log(1 + e^x), evaluated without overflow.
template <typename Scalar>
BasicTensor<Scalar> softplus(const BasicTensor<Scalar>& a) {
  return detail::unary(
      a,
      [](Scalar x) { return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); });
}

namespace detail {

template <typename Scalar>
RowMatrix<Scalar> rowwise_logsumexp(const RowMatrix<Scalar>& x) {
  RowMatrix<Scalar> out(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    if (!std::isfinite(m)) {
      out(r, 0) = m;
      continue;
    }
    out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  return out;
}

}  // namespace detail

// Row-wise log-sum-exp; returns rows x 1.
template <typename Scalar>
BasicTensor<Scalar> logsumexp(const BasicTensor<Scalar>& a) {
  auto& tape = *a.tape();
  RowMatrix<Scalar> out = detail::rowwise_logsumexp(a.value());
  const std::size_t ia = a.id();
  const std::size_t io = tape.size();
  return tape.push(std::move(out), a.requires_grad(),
                   [ia, io](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& x = t.value(ia);
                     const auto& y = t.value(io);
                     RowMatrix<Scalar> ga(x.rows(), x.cols());
                     for (Index r = 0; r < x.rows(); ++r) {
                       ga.row(r) = (x.row(r).array() - y(r, 0)).exp() * g(r, 0);
                     }
                     t.accumulate(ia, ga);
                   });
}

// Row-wise softmax.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& a) {
  auto& tape = *a.tape();
  const auto lse = detail::rowwise_logsumexp(a.value());
  RowMatrix<Scalar> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) out.row(r) = (a.value().row(r).array() - lse(r, 0)).exp();
  const std::size_t ia = a.id();
  const std::size_t io = tape.size();
  return tape.push(std::move(out), a.requires_grad(),
                   [ia, io](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& p = t.value(io);
                     RowMatrix<Scalar> ga(p.rows(), p.cols());
                     for (Index r = 0; r < p.rows(); ++r) {
                       const Scalar dot = g.row(r).dot(p.row(r));
                       ga.row(r) = p.row(r).array() * (g.row(r).array() - dot);
                     }
                     t.accumulate(ia, ga);
                   });
}

// Row-wise log-softmax.
template <typename Scalar>
BasicTensor<Scalar> log_softmax(const BasicTensor<Scalar>& a) {
  auto& tape = *a.tape();
  const auto lse = detail::rowwise_logsumexp(a.value());
  RowMatrix<Scalar> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) out.row(r) = a.value().row(r).array() - lse(r, 0);
  const std::size_t ia = a.id();
  const std::size_t io = tape.size();
  return tape.push(std::move(out), a.requires_grad(),
                   [ia, io](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& y = t.value(io);
                     RowMatrix<Scalar> ga(y.rows(), y.cols());
                     for (Index r = 0; r < y.rows(); ++r) {
                       ga.row(r) = g.row(r).array() - y.row(r).array().exp() * g.row(r).sum();
                     }
                     t.accumulate(ia, ga);
                   });
}

// Diagonal Gaussian log density, summed over columns: rows x 1.
template <typename Scalar>
BasicTensor<Scalar> gaussian_log_pdf(const BasicTensor<Scalar>& y, const BasicTensor<Scalar>& mu,
                                     const BasicTensor<Scalar>& sigma) {
  detail::require_same_shape(y, mu, "gaussian_log_pdf");
  detail::require_same_shape(y, sigma, "gaussian_log_pdf");
  auto& tape = detail::common_tape(y, mu, "gaussian_log_pdf");
  detail::common_tape(y, sigma, "gaussian_log_pdf");
  const Scalar half_log_2pi = Scalar(0.5) * std::log(Scalar(2) * Scalar(EIGEN_PI));
  const auto z = ((y.value() - mu.value()).array() / sigma.value().array()).eval();
  RowMatrix<Scalar> out =
      (-Scalar(0.5) * z.square() - sigma.value().array().log() - half_log_2pi).matrix().rowwise().sum();
  const std::size_t iy = y.id(), im = mu.id(), is = sigma.id();
  return tape.push(std::move(out), y.requires_grad() || mu.requires_grad() || sigma.requires_grad(),
                   [iy, im, is](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& s = t.value(is);
                     const auto zz = ((t.value(iy) - t.value(im)).array() / s.array()).eval();
                     // d/dmu = z / sigma, d/dy = -z / sigma, d/dsigma = (z^2 - 1) / sigma
                     RowMatrix<Scalar> dmu = (zz / s.array()).matrix();
                     dmu.array().colwise() *= g.col(0).array();
                     RowMatrix<Scalar> ds = ((zz.square() - Scalar(1)) / s.array()).matrix();
                     ds.array().colwise() *= g.col(0).array();
                     t.accumulate(im, dmu);
                     t.accumulate(iy, -dmu);
                     t.accumulate(is, ds);
                   });
}

template <typename Scalar>
BasicTensor<Scalar> concat_cols(const std::vector<BasicTensor<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  auto& tape = *parts.front().tape();
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw std::invalid_argument("concat_cols: operands on different tapes");
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: shape mismatch " + shape_string(rows, parts.front().cols()) + " vs " +
                       shape_string(p.rows(), p.cols()));
    }
    cols += p.cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  RowMatrix<Scalar> out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return tape.push(std::move(out), rg, [ids, widths](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
    Index c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      t.accumulate(ids[k], g.middleCols(c0, widths[k]));
      c0 += widths[k];
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> concat_rows(const std::vector<BasicTensor<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  auto& tape = *parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  std::vector<Index> heights;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw std::invalid_argument("concat_rows: operands on different tapes");
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: shape mismatch " + shape_string(parts.front().rows(), cols) + " vs " +
                       shape_string(p.rows(), p.cols()));
    }
    rows += p.rows();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  RowMatrix<Scalar> out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return tape.push(std::move(out), rg, [ids, heights](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
    Index r0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      t.accumulate(ids[k], g.middleRows(r0, heights[k]));
      r0 += heights[k];
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for shape " + shape_string(a.rows(), a.cols()));
  }
  const std::size_t ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->push(a.value().middleCols(start, count), a.requires_grad(),
                        [ia, rows, cols, start, count](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                          RowMatrix<Scalar> ga = RowMatrix<Scalar>::Zero(rows, cols);
                          ga.middleCols(start, count) = g;
                          t.accumulate(ia, ga);
                        });
}

template <typename Scalar>
BasicTensor<Scalar> slice_rows(const BasicTensor<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for shape " + shape_string(a.rows(), a.cols()));
  }
  const std::size_t ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->push(a.value().middleRows(start, count), a.requires_grad(),
                        [ia, rows, cols, start, count](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                          RowMatrix<Scalar> ga = RowMatrix<Scalar>::Zero(rows, cols);
                          ga.middleRows(start, count) = g;
                          t.accumulate(ia, ga);
                        });
}

// out.row(k) = a.row(index[k]); gradients scatter-add back.
template <typename Scalar>
BasicTensor<Scalar> gather_rows(const BasicTensor<Scalar>& a, const std::vector<Index>& index) {
  RowMatrix<Scalar> out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(index[k]) + " out of range for shape " +
                       shape_string(a.rows(), a.cols()));
    }
    out.row(static_cast<Index>(k)) = a.value().row(index[k]);
  }
  const std::size_t ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia, rows, cols, index](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                          RowMatrix<Scalar> ga = RowMatrix<Scalar>::Zero(rows, cols);
                          for (std::size_t k = 0; k < index.size(); ++k) ga.row(index[k]) += g.row(static_cast<Index>(k));
                          t.accumulate(ia, ga);
                        });
}

// Row-major reinterpretation with the same element count.
template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Index rows, Index cols) {
  if (rows * cols != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.rows(), a.cols()) + " as " + shape_string(rows, cols));
  }
  RowMatrix<Scalar> out = Eigen::Map<const RowMatrix<Scalar>>(a.value().data(), rows, cols);
  const std::size_t ia = a.id();
  const Index r0 = a.rows(), c0 = a.cols();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia, r0, c0](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                          t.accumulate(ia, Eigen::Map<const RowMatrix<Scalar>>(g.data(), r0, c0));
                        });
}

template <typename Scalar>
BasicTensor<Scalar> reduce_sum(const BasicTensor<Scalar>& a) {
  RowMatrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const std::size_t ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia, rows, cols](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                          t.accumulate(ia, RowMatrix<Scalar>::Constant(rows, cols, g(0, 0)));
                        });
}

// Sum across columns: rows x 1.
template <typename Scalar>
BasicTensor<Scalar> reduce_sum_cols(const BasicTensor<Scalar>& a) {
  RowMatrix<Scalar> out = a.value().rowwise().sum();
  const std::size_t ia = a.id();
  const Index cols = a.cols();
  return a.tape()->push(std::move(out), a.requires_grad(),
                        [ia, cols](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                          t.accumulate(ia, g.col(0).replicate(1, cols));
                        });
}

template <typename Scalar>
BasicTensor<Scalar> reduce_mean(const BasicTensor<Scalar>& a) {
  if (a.size() == 0) throw ShapeError("reduce_mean: empty tensor");
  return scale(reduce_sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

// Contiguous block of key/value rows attended by one query row.
struct Segment {
  Index offset = 0;
  Index count = 0;
};

// Multi-head scaled dot-product attention where query row b attends over key/value
// rows [segments[b].offset, segments[b].offset + segments[b].count). An empty
// segment yields a zero output row. Weights are not shared between segments, so
// each query sees exactly its own set.
//
// With a 1 x d `null_key`, every non-empty segment also holds a null slot whose
// value is fixed at zero; weight on it scales the output towards the
// empty-segment result.
template <typename Scalar>
BasicTensor<Scalar> segment_attention(const BasicTensor<Scalar>& q, const BasicTensor<Scalar>& k,
                                      const BasicTensor<Scalar>& v, const std::vector<Segment>& segments,
                                      int n_heads, const std::optional<BasicTensor<Scalar>>& null_key = std::nullopt) {
  auto& tape = detail::common_tape(q, k, "segment_attention");
  detail::common_tape(q, v, "segment_attention");
  detail::require_same_shape(k, v, "segment_attention");
  const bool has_null = null_key.has_value();
  if (has_null) {
    detail::common_tape(q, *null_key, "segment_attention");
    if (null_key->rows() != 1 || null_key->cols() != q.cols()) {
      throw ShapeError("segment_attention: null key must be " + shape_string(1, q.cols()) + ", got " +
                       shape_string(null_key->rows(), null_key->cols()));
    }
  }
  if (q.cols() != k.cols()) {
    throw ShapeError("segment_attention: shape mismatch " + shape_string(q.rows(), q.cols()) + " vs " +
                     shape_string(k.rows(), k.cols()));
  }
  if (static_cast<Index>(segments.size()) != q.rows()) {
    throw ShapeError("segment_attention: " + std::to_string(segments.size()) + " segments for " +
                     std::to_string(q.rows()) + " query rows");
  }
  const Index d = q.cols();
  if (n_heads <= 0 || d % n_heads != 0) throw ShapeError("segment_attention: width not divisible by heads");
  const Index dh = d / n_heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (const auto& s : segments) {
    if (s.offset < 0 || s.count < 0 || s.offset + s.count > k.rows()) {
      throw ShapeError("segment_attention: segment out of range for " + shape_string(k.rows(), k.cols()));
    }
  }

  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(q.rows(), d);
  // weights(row j, head h) for the segment that owns key row j; null_weights(b, h)
  // for the null slot of segment b.
  RowMatrix<Scalar> weights = RowMatrix<Scalar>::Zero(K.rows(), n_heads);
  RowMatrix<Scalar> null_weights = RowMatrix<Scalar>::Zero(q.rows(), n_heads);
  for (Index b = 0; b < q.rows(); ++b) {
    const auto& s = segments[static_cast<std::size_t>(b)];
    if (s.count == 0) continue;
    const Index slots = s.count + (has_null ? 1 : 0);
    for (int h = 0; h < n_heads; ++h) {
      const Index c0 = h * dh;
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scores(slots);
      for (Index j = 0; j < s.count; ++j) {
        scores(j) = Q.row(b).segment(c0, dh).dot(K.row(s.offset + j).segment(c0, dh)) * inv_sqrt;
      }
      if (has_null) scores(s.count) = Q.row(b).segment(c0, dh).dot(null_key->value().row(0).segment(c0, dh)) * inv_sqrt;
      const Scalar m = scores.maxCoeff();
      scores = (scores.array() - m).exp();
      scores /= scores.sum();
      for (Index j = 0; j < s.count; ++j) {
        weights(s.offset + j, h) = scores(j);
        out.row(b).segment(c0, dh) += scores(j) * V.row(s.offset + j).segment(c0, dh);
      }
      if (has_null) null_weights(b, h) = scores(s.count);
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  const std::size_t in = has_null ? null_key->id() : 0;
  const bool needs_grad =
      q.requires_grad() || k.requires_grad() || v.requires_grad() || (has_null && null_key->requires_grad());
  return tape.push(
      std::move(out), needs_grad,
      [iq, ik, iv, in, has_null, segments, n_heads, dh, inv_sqrt, weights, null_weights](
          BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
        const auto& Qv = t.value(iq);
        const auto& Kv = t.value(ik);
        const auto& Vv = t.value(iv);
        RowMatrix<Scalar> gq = RowMatrix<Scalar>::Zero(Qv.rows(), Qv.cols());
        RowMatrix<Scalar> gk = RowMatrix<Scalar>::Zero(Kv.rows(), Kv.cols());
        RowMatrix<Scalar> gv = RowMatrix<Scalar>::Zero(Vv.rows(), Vv.cols());
        RowMatrix<Scalar> gn = RowMatrix<Scalar>::Zero(1, Qv.cols());
        for (Index b = 0; b < Qv.rows(); ++b) {
          const auto& s = segments[static_cast<std::size_t>(b)];
          if (s.count == 0) continue;
          for (int h = 0; h < n_heads; ++h) {
            const Index c0 = h * dh;
            const auto go = g.row(b).segment(c0, dh);
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> da(s.count);
            Scalar weighted = 0;
            for (Index j = 0; j < s.count; ++j) {
              const Scalar a = weights(s.offset + j, h);
              gv.row(s.offset + j).segment(c0, dh) += a * go;
              da(j) = go.dot(Vv.row(s.offset + j).segment(c0, dh));
              weighted += a * da(j);
            }
            for (Index j = 0; j < s.count; ++j) {
              const Scalar ds = weights(s.offset + j, h) * (da(j) - weighted) * inv_sqrt;
              gq.row(b).segment(c0, dh) += ds * Kv.row(s.offset + j).segment(c0, dh);
              gk.row(s.offset + j).segment(c0, dh) += ds * Qv.row(b).segment(c0, dh);
            }
            if (has_null) {
              // The null slot's value is zero, so its score gradient is -w * weighted.
              const Scalar ds = -null_weights(b, h) * weighted * inv_sqrt;
              gq.row(b).segment(c0, dh) += ds * t.value(in).row(0).segment(c0, dh);
              gn.row(0).segment(c0, dh) += ds * Qv.row(b).segment(c0, dh);
            }
          }
        }
        t.accumulate(iq, gq);
        t.accumulate(ik, gk);
        t.accumulate(iv, gv);
        if (has_null) t.accumulate(in, gn);
      });
}

// Per-head sigmoid-gated sum: query row b gets sum_j sigmoid(q_b . k_j / sqrt(dh)) v_j
// over its segment. Gates do not compete, so dropping one key leaves the other
// terms untouched. An empty segment yields a zero row.
template <typename Scalar>
BasicTensor<Scalar> segment_gated_sum(const BasicTensor<Scalar>& q, const BasicTensor<Scalar>& k,
                                      const BasicTensor<Scalar>& v, const std::vector<Segment>& segments,
                                      int n_heads) {
  auto& tape = detail::common_tape(q, k, "segment_gated_sum");
  detail::common_tape(q, v, "segment_gated_sum");
  detail::require_same_shape(k, v, "segment_gated_sum");
  if (q.cols() != k.cols()) {
    throw ShapeError("segment_gated_sum: shape mismatch " + shape_string(q.rows(), q.cols()) + " vs " +
                     shape_string(k.rows(), k.cols()));
  }
  if (static_cast<Index>(segments.size()) != q.rows()) {
    throw ShapeError("segment_gated_sum: " + std::to_string(segments.size()) + " segments for " +
                     std::to_string(q.rows()) + " query rows");
  }
  const Index d = q.cols();
  if (n_heads <= 0 || d % n_heads != 0) throw ShapeError("segment_gated_sum: width not divisible by heads");
  const Index dh = d / n_heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (const auto& s : segments) {
    if (s.offset < 0 || s.count < 0 || s.offset + s.count > k.rows()) {
      throw ShapeError("segment_gated_sum: segment out of range for " + shape_string(k.rows(), k.cols()));
    }
  }

  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(q.rows(), d);
  RowMatrix<Scalar> gates = RowMatrix<Scalar>::Zero(K.rows(), n_heads);
  for (Index b = 0; b < q.rows(); ++b) {
    const auto& s = segments[static_cast<std::size_t>(b)];
    for (int h = 0; h < n_heads; ++h) {
      const Index c0 = h * dh;
      for (Index j = 0; j < s.count; ++j) {
        const Scalar z = Q.row(b).segment(c0, dh).dot(K.row(s.offset + j).segment(c0, dh)) * inv_sqrt;
        const Scalar gate = z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
        gates(s.offset + j, h) = gate;
        out.row(b).segment(c0, dh) += gate * V.row(s.offset + j).segment(c0, dh);
      }
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  const bool needs_grad = q.requires_grad() || k.requires_grad() || v.requires_grad();
  return tape.push(std::move(out), needs_grad,
                   [iq, ik, iv, segments, n_heads, dh, inv_sqrt, gates](BasicTape<Scalar>& t, const RowMatrix<Scalar>& g) {
                     const auto& Qv = t.value(iq);
                     const auto& Kv = t.value(ik);
                     const auto& Vv = t.value(iv);
                     RowMatrix<Scalar> gq = RowMatrix<Scalar>::Zero(Qv.rows(), Qv.cols());
                     RowMatrix<Scalar> gk = RowMatrix<Scalar>::Zero(Kv.rows(), Kv.cols());
                     RowMatrix<Scalar> gv = RowMatrix<Scalar>::Zero(Vv.rows(), Vv.cols());
                     for (Index b = 0; b < Qv.rows(); ++b) {
                       const auto& s = segments[static_cast<std::size_t>(b)];
                       for (int h = 0; h < n_heads; ++h) {
                         const Index c0 = h * dh;
                         const auto go = g.row(b).segment(c0, dh);
                         for (Index j = 0; j < s.count; ++j) {
                           const Scalar a = gates(s.offset + j, h);
                           gv.row(s.offset + j).segment(c0, dh) += a * go;
                           const Scalar ds = go.dot(Vv.row(s.offset + j).segment(c0, dh)) * a * (1 - a) * inv_sqrt;
                           gq.row(b).segment(c0, dh) += ds * Kv.row(s.offset + j).segment(c0, dh);
                           gk.row(s.offset + j).segment(c0, dh) += ds * Qv.row(b).segment(c0, dh);
                         }
                       }
                     }
                     t.accumulate(iq, gq);
                     t.accumulate(ik, gk);
                     t.accumulate(iv, gv);
                   });
}

}  // namespace trajattr
