#include "dglight/autodiff.hpp"

#include "dglight/error.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dglight {

namespace {

Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw Error("autodiff: operands belong to different graphs");
  }
  return *a.graph;
}

bool broadcastable(const Tensor& from, Index rows, Index cols) {
  return (from.rows() == rows || from.rows() == 1) && (from.cols() == cols || from.cols() == 1);
}

Tensor expand(const Tensor& t, Index rows, Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  return t.replicate(rows / t.rows(), cols / t.cols());
}

// Sums a broadcast gradient back down to `shape`.
Tensor reduce_to(const Tensor& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return scalar_tensor(g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

std::pair<Index, Index> broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  const Index rows = std::max(a.rows(), b.rows());
  const Index cols = std::max(a.cols(), b.cols());
  if (!broadcastable(a, rows, cols) || !broadcastable(b, rows, cols)) {
    throw Error(std::string("autodiff: incompatible shapes for ") + op);
  }
  return {rows, cols};
}

Tensor row_softmax(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLog: return "log";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcat: return "concat";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kAttention: return "attention";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->node(id).value; }

Var Graph::leaf(Tensor value) {
  Node n;
  n.op = OpKind::kLeaf;
  n.value = std::move(value);
  return append(std::move(n));
}

NodeId Graph::push_unchecked(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Var Graph::append(Node node) {
  if (!node.value.allFinite()) {
    throw Error(std::string("autodiff: non-finite value produced by ") + op_name(node.op));
  }
  return Var{this, push_unchecked(std::move(node))};
}

std::map<NodeId, Tensor> Graph::gradient(Var output, std::initializer_list<Var> wrt) const {
  std::vector<NodeId> ids;
  for (const Var& v : wrt) ids.push_back(v.id);
  return gradient(output.id, ids);
}

std::map<NodeId, Tensor> Graph::gradient(NodeId output, std::span<const NodeId> wrt) const {
  if (output < 0 || static_cast<size_t>(output) >= nodes_.size()) {
    throw Error("gradient: output node does not exist");
  }
  const Tensor& out = nodes_[output].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw Error("gradient: output must be scalar, got " + std::to_string(out.rows()) + "x" +
                std::to_string(out.cols()));
  }
  for (NodeId i = 0; i <= output; ++i) {
    for (NodeId in : nodes_[i].inputs) {
      if (in < 0 || in >= i) {
        throw Error("gradient: cycle or forward reference at node " + std::to_string(i));
      }
    }
  }

  std::vector<Tensor> adj(static_cast<size_t>(output) + 1);
  adj[output] = Tensor::Ones(1, 1);
  auto accumulate = [&](NodeId id, const Tensor& g) {
    Tensor& slot = adj[id];
    if (slot.size() == 0) {
      slot = g;
    } else {
      slot += g;
    }
  };

  for (NodeId i = output; i >= 0; --i) {
    if (adj[i].size() == 0) continue;
    const Node& n = nodes_[i];
    const Tensor& g = adj[i];
    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        accumulate(n.inputs[0], g * b.transpose());
        accumulate(n.inputs[1], a.transpose() * g);
        break;
      }
      case OpKind::kAdd: {
        for (NodeId in : n.inputs) {
          const Tensor& x = nodes_[in].value;
          accumulate(in, reduce_to(g, x.rows(), x.cols()));
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        const Tensor ea = expand(a, g.rows(), g.cols());
        const Tensor eb = expand(b, g.rows(), g.cols());
        accumulate(n.inputs[0], reduce_to(g.cwiseProduct(eb), a.rows(), a.cols()));
        accumulate(n.inputs[1], reduce_to(g.cwiseProduct(ea), b.rows(), b.cols()));
        break;
      }
      case OpKind::kRelu: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        accumulate(n.inputs[0], (a.array() > 0.0).select(g, 0.0).matrix());
        break;
      }
      case OpKind::kSoftmax: {
        const Tensor& y = n.value;
        Tensor d(y.rows(), y.cols());
        for (Index r = 0; r < y.rows(); ++r) {
          const double dot = g.row(r).dot(y.row(r));
          d.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
        }
        accumulate(n.inputs[0], d);
        break;
      }
      case OpKind::kLog: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        accumulate(n.inputs[0], g.cwiseQuotient(a));
        break;
      }
      case OpKind::kSum: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        accumulate(n.inputs[0], Tensor::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      }
      case OpKind::kMean: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        accumulate(n.inputs[0],
                   Tensor::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
        break;
      }
      case OpKind::kConcat: {
        Index col = 0;
        for (NodeId in : n.inputs) {
          const Index w = nodes_[in].value.cols();
          accumulate(in, g.middleCols(col, w));
          col += w;
        }
        break;
      }
      case OpKind::kEmbedding: {
        const Tensor& table = nodes_[n.inputs[0]].value;
        Tensor d = Tensor::Zero(table.rows(), table.cols());
        for (size_t r = 0; r < n.indices.size(); ++r) {
          d.row(n.indices[r]) += g.row(static_cast<Index>(r));
        }
        accumulate(n.inputs[0], d);
        break;
      }
      case OpKind::kAttention: {
        const Tensor& q = nodes_[n.inputs[0]].value;
        const Tensor& k = nodes_[n.inputs[1]].value;
        const Tensor& v = nodes_[n.inputs[2]].value;
        const Tensor& p = n.aux;
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
        const Tensor dp = g * v.transpose();
        Tensor ds(p.rows(), p.cols());
        for (Index r = 0; r < p.rows(); ++r) {
          const double dot = dp.row(r).dot(p.row(r));
          ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
        }
        accumulate(n.inputs[0], ds * k * inv_sqrt_d);
        accumulate(n.inputs[1], ds.transpose() * q * inv_sqrt_d);
        accumulate(n.inputs[2], p.transpose() * g);
        break;
      }
    }
  }

  std::map<NodeId, Tensor> result;
  for (NodeId id : wrt) {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
      throw Error("gradient: unknown parameter node " + std::to_string(id));
    }
    const Tensor& v = nodes_[id].value;
    if (id <= output && adj[id].size() != 0) {
      result[id] = adj[id];
    } else {
      result[id] = Tensor::Zero(v.rows(), v.cols());
    }
  }
  return result;
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) throw Error("matmul: inner dimensions differ");
  Node n;
  n.op = OpKind::kMatMul;
  n.inputs = {a.id, b.id};
  n.value = x * y;
  return g.append(std::move(n));
}

Var operator+(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const auto [rows, cols] = broadcast_shape(a.value(), b.value(), "add");
  Node n;
  n.op = OpKind::kAdd;
  n.inputs = {a.id, b.id};
  n.value = expand(a.value(), rows, cols) + expand(b.value(), rows, cols);
  return g.append(std::move(n));
}

Var operator*(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const auto [rows, cols] = broadcast_shape(a.value(), b.value(), "mul");
  Node n;
  n.op = OpKind::kMul;
  n.inputs = {a.id, b.id};
  n.value = expand(a.value(), rows, cols).cwiseProduct(expand(b.value(), rows, cols));
  return g.append(std::move(n));
}

Var relu(Var a) {
  Node n;
  n.op = OpKind::kRelu;
  n.inputs = {a.id};
  n.value = a.value().cwiseMax(0.0);
  return a.graph->append(std::move(n));
}

Var softmax(Var a) {
  Node n;
  n.op = OpKind::kSoftmax;
  n.inputs = {a.id};
  n.value = row_softmax(a.value());
  return a.graph->append(std::move(n));
}

Var log(Var a) {
  if ((a.value().array() <= 0.0).any()) throw Error("log: non-positive input");
  Node n;
  n.op = OpKind::kLog;
  n.inputs = {a.id};
  n.value = a.value().array().log().matrix();
  return a.graph->append(std::move(n));
}

Var sum(Var a) {
  Node n;
  n.op = OpKind::kSum;
  n.inputs = {a.id};
  n.value = scalar_tensor(a.value().sum());
  return a.graph->append(std::move(n));
}

Var mean(Var a) {
  if (a.value().size() == 0) throw Error("mean: empty input");
  Node n;
  n.op = OpKind::kMean;
  n.inputs = {a.id};
  n.value = scalar_tensor(a.value().mean());
  return a.graph->append(std::move(n));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat: no operands");
  Graph* g = parts.front().graph;
  const Index rows = parts.front().value().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.graph != g) throw Error("concat: operands belong to different graphs");
    if (p.value().rows() != rows) throw Error("concat: row counts differ");
    cols += p.value().cols();
  }
  Node n;
  n.op = OpKind::kConcat;
  n.value.resize(rows, cols);
  Index col = 0;
  for (const Var& p : parts) {
    n.inputs.push_back(p.id);
    n.value.middleCols(col, p.value().cols()) = p.value();
    col += p.value().cols();
  }
  return g->append(std::move(n));
}

Var embedding_lookup(Var table, std::vector<Index> rows) {
  const Tensor& t = table.value();
  Node n;
  n.op = OpKind::kEmbedding;
  n.inputs = {table.id};
  n.value.resize(static_cast<Index>(rows.size()), t.cols());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= t.rows()) throw Error("embedding_lookup: row out of range");
    n.value.row(static_cast<Index>(r)) = t.row(rows[r]);
  }
  n.indices = std::move(rows);
  return table.graph->append(std::move(n));
}

Var attention(Var q, Var k, Var v, const AttentionMask& mask) {
  Graph& g = same_graph(q, k);
  same_graph(k, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.cols() != kv.cols() || kv.rows() != vv.rows()) {
    throw Error("attention: inconsistent query/key/value shapes");
  }
  if (mask.rows() != qv.rows() || mask.cols() != kv.rows()) {
    throw Error("attention: mask shape does not match queries x keys");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  const Tensor scores = qv * kv.transpose() * inv_sqrt_d;
  Tensor p = Tensor::Zero(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < scores.cols(); ++c) {
      if (mask(r, c)) m = std::max(m, scores(r, c));
    }
    if (!std::isfinite(m)) throw Error("attention: query row with no visible keys");
    double z = 0.0;
    for (Index c = 0; c < scores.cols(); ++c) {
      if (mask(r, c)) {
        p(r, c) = std::exp(scores(r, c) - m);
        z += p(r, c);
      }
    }
    p.row(r) /= z;
  }
  Node n;
  n.op = OpKind::kAttention;
  n.inputs = {q.id, k.id, v.id};
  n.value = p * vv;
  n.mask = mask;
  n.aux = std::move(p);
  return g.append(std::move(n));
}

Var operator*(double s, Var a) { return a.graph->constant(s) * a; }

Var operator-(Var a) { return -1.0 * a; }

Var operator-(Var a, Var b) { return a + (-1.0 * b); }

// min(a, b) = a - relu(a - b)
Var minimum(Var a, Var b) { return a - relu(a - b); }

// clamp(a, lo, hi) = lo + relu(a - lo) - relu(a - hi)
Var clamp(Var a, double lo, double hi) {
  Graph& g = *a.graph;
  return g.constant(lo) + relu(a - g.constant(lo)) - relu(a - g.constant(hi));
}

}  // namespace dglight
