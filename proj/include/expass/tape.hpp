#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "expass/tensor.hpp"

namespace expass {

using NodeId = std::int32_t;

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Binary entropy of sigmoid(m), computed from the logit so it stays finite
/// for saturated masks: H(sigmoid(m)) = log1p(e^-|m|) + |m| * sigmoid(-|m|).
inline double binary_entropy_logit_value(double m) {
  const double a = std::fabs(m);
  const double q = sigmoid_value(-a);
  return std::log1p(std::exp(-a)) + a * q;
}

/// Reverse-mode autodiff record over dense Tensors. Built per forward pass
/// (define-by-run); node ids are topologically ordered by construction.
/// Single-threaded; distinct Tapes are independent.
class Tape {
 public:
  NodeId input(Tensor value) { return push(Op::Input, -1, -1, std::move(value)); }

  NodeId matmul(NodeId a, NodeId b) {
    return push(Op::MatMul, a, b, expass::matmul(value(a), value(b)));
  }

  NodeId add(NodeId a, NodeId b) { return push(Op::Add, a, b, expass::add(value(a), value(b))); }
  NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, a, b, expass::sub(value(a), value(b))); }

  NodeId hadamard(NodeId a, NodeId b) {
    return push(Op::Hadamard, a, b, expass::hadamard(value(a), value(b)));
  }

  NodeId sigmoid(NodeId a) { return push(Op::Sigmoid, a, -1, map(value(a), sigmoid_value)); }

  NodeId relu(NodeId a) {
    return push(Op::Relu, a, -1, map(value(a), [](double x) { return x > 0.0 ? x : 0.0; }));
  }

  NodeId exp(NodeId a) {
    return push(Op::Exp, a, -1, map(value(a), [](double x) { return std::exp(x); }));
  }

  NodeId log(NodeId a) {
    for (double v : value(a).data())
      if (v <= 0.0) throw std::domain_error("log: non-positive entry " + std::to_string(v));
    return push(Op::Log, a, -1, map(value(a), [](double x) { return std::log(x); }));
  }

  NodeId rsqrt(NodeId a) {
    for (double v : value(a).data())
      if (v <= 0.0) throw std::domain_error("rsqrt: non-positive entry " + std::to_string(v));
    return push(Op::Rsqrt, a, -1, map(value(a), [](double x) { return 1.0 / std::sqrt(x); }));
  }

  /// Elementwise 1/x for x > 0, exactly 0 at x <= 0 (and zero gradient there).
  NodeId safe_reciprocal(NodeId a) {
    return push(Op::SafeRecip, a, -1,
                map(value(a), [](double x) { return x > 0.0 ? 1.0 / x : 0.0; }));
  }

  NodeId scale(NodeId a, double c) {
    if (!std::isfinite(c)) throw std::domain_error("scale: non-finite factor");
    return push(Op::Scale, a, -1, expass::scale(value(a), c), c);
  }

  NodeId add_scalar(NodeId a, double c) {
    if (!std::isfinite(c)) throw std::domain_error("add_scalar: non-finite addend");
    return push(Op::AddScalar, a, -1, map(value(a), [c](double x) { return x + c; }), c);
  }

  /// Rowwise log-softmax with max-subtraction; rows are instances.
  NodeId log_softmax(NodeId a) {
    const Tensor& x = value(a);
    if (x.cols() < 1) throw std::invalid_argument("log_softmax: needs at least one column");
    std::vector<double> y(x.size());
    for (int i = 0; i < x.rows(); ++i) {
      double mx = x(i, 0);
      for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
      double z = 0.0;
      for (int j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - mx);
      const double lz = std::log(z);
      for (int j = 0; j < x.cols(); ++j)
        y[static_cast<std::size_t>(i) * x.cols() + j] = x(i, j) - mx - lz;
    }
    return push(Op::LogSoftmax, a, -1, Tensor(x.rows(), x.cols(), std::move(y)));
  }

  /// Full reduction to a 1x1 tensor.
  NodeId sum(NodeId a) {
    double s = 0.0;
    for (double v : value(a).data()) s += v;
    return push(Op::Sum, a, -1, Tensor(1, 1, {s}));
  }

  /// Mean of all entries (1x1); empty input yields 0.
  NodeId mean(NodeId a) {
    const std::size_t n = value(a).size();
    return scale(sum(a), n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
  }

  /// RxC -> Rx1 row sums.
  NodeId row_sum(NodeId a) {
    const Tensor& x = value(a);
    std::vector<double> s(x.rows(), 0.0);
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) s[i] += x(i, j);
    return push(Op::RowSum, a, -1, Tensor(x.rows(), 1, std::move(s)));
  }

  NodeId transpose(NodeId a) { return push(Op::Transpose, a, -1, expass::transpose(value(a))); }

  /// Multiply row i of m by v[i]; v must be rows(m) x 1.
  NodeId scale_rows(NodeId m, NodeId v) {
    const Tensor& x = value(m);
    const Tensor& s = value(v);
    if (s.rows() != x.rows() || s.cols() != 1)
      throw std::invalid_argument("scale_rows: scaler must be " + std::to_string(x.rows()) +
                                  "x1, got " + s.shape_str());
    std::vector<double> y(x.size());
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j)
        y[static_cast<std::size_t>(i) * x.cols() + j] = x(i, j) * s(i, 0);
    return push(Op::ScaleRows, m, v, Tensor(x.rows(), x.cols(), std::move(y)));
  }

  /// Multiply column j of m by v[j]; v must be 1 x cols(m).
  NodeId scale_cols(NodeId m, NodeId v) {
    const Tensor& x = value(m);
    const Tensor& s = value(v);
    if (s.cols() != x.cols() || s.rows() != 1)
      throw std::invalid_argument("scale_cols: scaler must be 1x" + std::to_string(x.cols()) +
                                  ", got " + s.shape_str());
    std::vector<double> y(x.size());
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j)
        y[static_cast<std::size_t>(i) * x.cols() + j] = x(i, j) * s(0, j);
    return push(Op::ScaleCols, m, v, Tensor(x.rows(), x.cols(), std::move(y)));
  }

  /// Scatter one score per undirected edge into a symmetric n x n matrix
  /// (both orientations share the score; diagonal stays zero).
  NodeId edge_scatter(NodeId scores, const std::vector<std::pair<int, int>>& edges, int n) {
    const Tensor& s = value(scores);
    if (s.cols() != 1 || s.rows() != static_cast<int>(edges.size()))
      throw std::invalid_argument("edge_scatter: scores must be " +
                                  std::to_string(edges.size()) + "x1, got " + s.shape_str());
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [u, v] = edges[e];
      if (u < 0 || u >= n || v < 0 || v >= n)
        throw std::invalid_argument("edge_scatter: endpoint out of range");
      a[static_cast<std::size_t>(u) * n + v] = s(static_cast<int>(e), 0);
      a[static_cast<std::size_t>(v) * n + u] = s(static_cast<int>(e), 0);
    }
    NodeId id = push(Op::EdgeScatter, scores, -1, Tensor(n, n, std::move(a)));
    nodes_[id].edges = edges;
    return id;
  }

  /// Elementwise binary entropy of sigmoid(m), taking the logits m.
  NodeId binary_entropy_logits(NodeId a) {
    return push(Op::BinaryEntropyLogits, a, -1, map(value(a), binary_entropy_logit_value));
  }

  const Tensor& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss node. Resets previous gradients first;
  /// afterwards every ancestor of the loss has a gradient of matching shape
  /// and non-ancestors have none. Accumulation order is fixed (descending
  /// node id), so repeated runs are bitwise identical.
  void backward(NodeId loss) {
    const Tensor& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw std::invalid_argument("backward: loss must be 1x1, got " + lv.shape_str());
    grads_.assign(nodes_.size(), Tensor());
    has_.assign(nodes_.size(), 0);
    grads_[loss] = Tensor::full(1, 1, 1.0);
    has_[loss] = 1;
    for (NodeId id = loss; id >= 0; --id) {
      if (!has_[id]) continue;
      propagate(id);
    }
  }

  bool has_grad(NodeId id) const {
    return static_cast<std::size_t>(id) < has_.size() && has_[id] != 0;
  }

  const Tensor& grad(NodeId id) const {
    if (!has_grad(id))
      throw std::invalid_argument("grad: node " + std::to_string(id) +
                                  " is not an ancestor of the loss");
    return grads_[id];
  }

  void reset() {
    nodes_.clear();
    grads_.clear();
    has_.clear();
  }

 private:
  enum class Op : std::uint8_t {
    Input,
    MatMul,
    Add,
    Sub,
    Hadamard,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Rsqrt,
    SafeRecip,
    Scale,
    AddScalar,
    LogSoftmax,
    Sum,
    RowSum,
    Transpose,
    ScaleRows,
    ScaleCols,
    EdgeScatter,
    BinaryEntropyLogits,
  };

  struct Node {
    Op op;
    NodeId a, b;
    double scalar;
    Tensor value;
    std::vector<std::pair<int, int>> edges;  // EdgeScatter only
  };

  template <typename F>
  static Tensor map(const Tensor& x, F&& f) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x.data()[i]);
    return Tensor(x.rows(), x.cols(), std::move(y));
  }

  NodeId push(Op op, NodeId a, NodeId b, Tensor value, double scalar = 0.0) {
    nodes_.push_back(Node{op, a, b, scalar, std::move(value), {}});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<double>& grad_buffer(NodeId id) {
    if (!has_[id]) {
      grads_[id] = Tensor::zeros(nodes_[id].value.rows(), nodes_[id].value.cols());
      has_[id] = 1;
    }
    return grads_[id].mutable_data();
  }

  static void add_into(std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void propagate(NodeId id) {
    const Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    switch (n.op) {
      case Op::Input:
        break;
      case Op::MatMul: {
        add_into(grad_buffer(n.a), matmul_nt(g, value(n.b)).data());
        add_into(grad_buffer(n.b), matmul_tn(value(n.a), g).data());
        break;
      }
      case Op::Add: {
        add_into(grad_buffer(n.a), g.data());
        add_into(grad_buffer(n.b), g.data());
        break;
      }
      case Op::Sub: {
        add_into(grad_buffer(n.a), g.data());
        auto& db = grad_buffer(n.b);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g.data()[i];
        break;
      }
      case Op::Hadamard: {
        auto& da = grad_buffer(n.a);
        const auto& bv = value(n.b).data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g.data()[i] * bv[i];
        auto& db = grad_buffer(n.b);
        const auto& av = value(n.a).data();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += g.data()[i] * av[i];
        break;
      }
      case Op::Sigmoid: {
        auto& da = grad_buffer(n.a);
        const auto& y = n.value.data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g.data()[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::Relu: {
        auto& da = grad_buffer(n.a);
        const auto& x = value(n.a).data();
        for (std::size_t i = 0; i < da.size(); ++i)
          if (x[i] > 0.0) da[i] += g.data()[i];  // subgradient 0 at exactly 0
        break;
      }
      case Op::Exp: {
        auto& da = grad_buffer(n.a);
        const auto& y = n.value.data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g.data()[i] * y[i];
        break;
      }
      case Op::Log: {
        auto& da = grad_buffer(n.a);
        const auto& x = value(n.a).data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g.data()[i] / x[i];
        break;
      }
      case Op::Rsqrt: {
        auto& da = grad_buffer(n.a);
        const auto& y = n.value.data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += -0.5 * y[i] * y[i] * y[i] * g.data()[i];
        break;
      }
      case Op::SafeRecip: {
        auto& da = grad_buffer(n.a);
        const auto& y = n.value.data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += -y[i] * y[i] * g.data()[i];
        break;
      }
      case Op::Scale: {
        auto& da = grad_buffer(n.a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += n.scalar * g.data()[i];
        break;
      }
      case Op::AddScalar: {
        add_into(grad_buffer(n.a), g.data());
        break;
      }
      case Op::LogSoftmax: {
        auto& da = grad_buffer(n.a);
        const Tensor& y = n.value;
        for (int i = 0; i < y.rows(); ++i) {
          double rs = 0.0;
          for (int j = 0; j < y.cols(); ++j) rs += g(i, j);
          for (int j = 0; j < y.cols(); ++j)
            da[static_cast<std::size_t>(i) * y.cols() + j] += g(i, j) - std::exp(y(i, j)) * rs;
        }
        break;
      }
      case Op::Sum: {
        auto& da = grad_buffer(n.a);
        const double s = g(0, 0);
        for (double& v : da) v += s;
        break;
      }
      case Op::RowSum: {
        auto& da = grad_buffer(n.a);
        const Tensor& x = value(n.a);
        for (int i = 0; i < x.rows(); ++i)
          for (int j = 0; j < x.cols(); ++j)
            da[static_cast<std::size_t>(i) * x.cols() + j] += g(i, 0);
        break;
      }
      case Op::Transpose: {
        add_into(grad_buffer(n.a), expass::transpose(g).data());
        break;
      }
      case Op::ScaleRows: {
        const Tensor& x = value(n.a);
        const Tensor& s = value(n.b);
        auto& dm = grad_buffer(n.a);
        for (int i = 0; i < x.rows(); ++i)
          for (int j = 0; j < x.cols(); ++j)
            dm[static_cast<std::size_t>(i) * x.cols() + j] += g(i, j) * s(i, 0);
        auto& dv = grad_buffer(n.b);
        for (int i = 0; i < x.rows(); ++i) {
          double acc = 0.0;
          for (int j = 0; j < x.cols(); ++j) acc += g(i, j) * x(i, j);
          dv[i] += acc;
        }
        break;
      }
      case Op::ScaleCols: {
        const Tensor& x = value(n.a);
        const Tensor& s = value(n.b);
        auto& dm = grad_buffer(n.a);
        for (int i = 0; i < x.rows(); ++i)
          for (int j = 0; j < x.cols(); ++j)
            dm[static_cast<std::size_t>(i) * x.cols() + j] += g(i, j) * s(0, j);
        auto& dv = grad_buffer(n.b);
        for (int j = 0; j < x.cols(); ++j) {
          double acc = 0.0;
          for (int i = 0; i < x.rows(); ++i) acc += g(i, j) * x(i, j);
          dv[j] += acc;
        }
        break;
      }
      case Op::EdgeScatter: {
        auto& ds = grad_buffer(n.a);
        const int nn = n.value.rows();
        for (std::size_t e = 0; e < n.edges.size(); ++e) {
          const auto [u, v] = n.edges[e];
          ds[e] += g.data()[static_cast<std::size_t>(u) * nn + v] +
                   g.data()[static_cast<std::size_t>(v) * nn + u];
        }
        break;
      }
      case Op::BinaryEntropyLogits: {
        auto& da = grad_buffer(n.a);
        const auto& m = value(n.a).data();
        for (std::size_t i = 0; i < da.size(); ++i) {
          const double p = sigmoid_value(m[i]);
          da[i] += -m[i] * p * (1.0 - p) * g.data()[i];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  int compared = 0;
  int excluded = 0;
};

/// Central-difference check of the tape gradient of a scalar-valued function
/// of one tensor. Entries whose second difference |f+ - 2f0 + f-| / eps is
/// large are excluded: for smooth f that quantity is eps * f'' and stays
/// tiny, while a kink inside the stencil (relu at or within eps of 0)
/// contributes its full slope jump.
inline GradCheckResult grad_check(const std::function<NodeId(Tape&, NodeId)>& f, const Tensor& x,
                                  double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps out of (0, 1e-2]");

  const auto eval = [&](const Tensor& point) {
    Tape tape;
    const NodeId xid = tape.input(point);
    const NodeId out = f(tape, xid);
    const Tensor& v = tape.value(out);
    if (v.rows() != 1 || v.cols() != 1)
      throw std::invalid_argument("grad_check: function output must be 1x1, got " + v.shape_str());
    return v(0, 0);
  };

  Tape tape;
  const NodeId xid = tape.input(x);
  const NodeId out = f(tape, xid);
  if (tape.value(out).rows() != 1 || tape.value(out).cols() != 1)
    throw std::invalid_argument("grad_check: function output must be 1x1");
  tape.backward(out);
  const Tensor analytic =
      tape.has_grad(xid) ? tape.grad(xid) : Tensor::zeros(x.rows(), x.cols());
  const double f0 = tape.value(out)(0, 0);

  GradCheckResult result;
  std::vector<double> base = x.data();
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double orig = base[i];
    base[i] = orig + eps;
    const double fp = eval(Tensor(x.rows(), x.cols(), base));
    base[i] = orig - eps;
    const double fm = eval(Tensor(x.rows(), x.cols(), base));
    base[i] = orig;

    const double dplus = (fp - f0) / eps;
    const double dminus = (f0 - fm) / eps;
    const double mag = std::max(std::fabs(dplus), std::fabs(dminus));
    const double curvature = std::fabs(fp - 2.0 * f0 + fm) / eps;
    if (curvature > 1e-4 * std::max(1.0, mag)) {
      ++result.excluded;
      continue;
    }
    const double cd = (fp - fm) / (2.0 * eps);
    const double a = analytic.data()[i];
    const double rel = std::fabs(a - cd) / std::max({std::fabs(a), std::fabs(cd), 1e-8});
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.compared;
  }
  return result;
}

}  // namespace expass
