#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph records every operation in creation order, so node inputs always
// precede the node itself. Operands are referenced through lightweight Var
// handles; the free functions below build new nodes and evaluate them
// eagerly.
//
//   Graph g;
//   Var w = g.leaf(weights);
//   Var loss = mean(relu(matmul(x, w)));
//   auto grads = g.gradient(loss, {w});

#include "dglight/tensor.hpp"

#include <Eigen/Core>

#include <initializer_list>
#include <map>
#include <span>
#include <vector>

namespace dglight {

enum class OpKind {
  kLeaf,
  kMatMul,
  kAdd,
  kMul,
  kRelu,
  kSoftmax,
  kLog,
  kSum,
  kMean,
  kConcat,
  kEmbedding,
  kAttention,
};

const char* op_name(OpKind op);

using NodeId = int;

// Boolean key mask for attention; mask(i, j) true means query i may attend
// to key j.
using AttentionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Node {
  OpKind op = OpKind::kLeaf;
  std::vector<NodeId> inputs;
  Tensor value;
  // Row indices for kEmbedding.
  std::vector<Index> indices;
  // Key mask for kAttention, and the cached attention weights.
  AttentionMask mask;
  Tensor aux;
};

class Graph;

struct Var {
  Graph* graph = nullptr;
  NodeId id = -1;

  const Tensor& value() const;
  double scalar() const { return value()(0, 0); }
};

class Graph {
 public:
  Var leaf(Tensor value);
  Var constant(double value) { return leaf(scalar_tensor(value)); }

  // Appends a node without checking its inputs. Intended for tooling that
  // assembles graphs by hand; gradient() validates ordering.
  NodeId push_unchecked(Node node);

  Var append(Node node);

  const Node& node(NodeId id) const { return nodes_.at(static_cast<size_t>(id)); }
  size_t size() const { return nodes_.size(); }

  // Exact reverse-mode gradients of a scalar output with respect to the
  // requested nodes. Nodes that do not influence the output map to zeros.
  // Throws if the output is not 1x1 or the tape is not topologically ordered.
  std::map<NodeId, Tensor> gradient(NodeId output, std::span<const NodeId> wrt) const;
  std::map<NodeId, Tensor> gradient(Var output, std::initializer_list<Var> wrt) const;

 private:
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
// Elementwise with broadcasting of 1x1, 1xn and mx1 operands.
Var operator+(Var a, Var b);
Var operator*(Var a, Var b);
Var relu(Var a);
// Row-wise softmax.
Var softmax(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
// Column-wise concatenation of operands with equal row counts.
Var concat(std::span<const Var> parts);
// Gathers rows of `table`.
Var embedding_lookup(Var table, std::vector<Index> rows);
// softmax(q k^T / sqrt(d) restricted to mask) v, row by row.
Var attention(Var q, Var k, Var v, const AttentionMask& mask);

// Composed helpers.
Var operator*(double s, Var a);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var minimum(Var a, Var b);
Var clamp(Var a, double lo, double hi);

}  // namespace dglight
