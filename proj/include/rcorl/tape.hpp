#pragma once

#include <array>
#include <vector>

#include "rcorl/mlp.hpp"
#include "rcorl/types.hpp"

namespace rcorl {

// Reverse-mode autodiff over batched matrices. Every node value is a Mat with
// one sample per column, so a full minibatch flows through each op as a single
// Eigen expression. The op set is deliberately small: affine layers, the two
// activations used by the networks here, and the handful of structural /
// reduction ops the training losses need. backward() requires a 1x1 loss node.
class Tape {
 public:
  using NodeId = int;

  NodeId constant(Mat value);
  NodeId param(Mat value);

  // weight * input + bias replicated across columns.
  NodeId affine(NodeId weight, NodeId input, NodeId bias);
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  // Stack two nodes with equal column counts, top over bottom.
  NodeId concat_rows(NodeId top, NodeId bottom);
  // Elementwise (a - b)^2.
  NodeId sq_diff(NodeId a, NodeId b);
  // ca * a + cb * b, same shapes.
  NodeId add_weighted(double ca, NodeId a, double cb, NodeId b);
  NodeId scale(double c, NodeId a);
  // Elementwise minimum; at ties the gradient goes to `a`.
  NodeId min2(NodeId a, NodeId b);
  // Per-column log(sum_i exp(x_i)); result is 1 x cols. Max-shifted for stability.
  NodeId logsumexp_cols(NodeId x);
  // Scalar sum of coeffs .* x; result is 1 x 1. Means are coeffs = 1/n.
  NodeId entry_sum(NodeId x, const Mat& coeffs);
  // Per-column sum of coeffs .* x; result is 1 x cols. One-hot coeffs gather
  // a chosen row per column (e.g. Q of the logged action).
  NodeId mask_colsum(NodeId x, const Mat& coeffs);

  const Mat& value(NodeId id) const;
  // Seeds d(loss)/d(loss) = 1 and accumulates adjoints for every reachable node.
  void backward(NodeId loss);
  // Adjoint of `id` from the last backward(); zeros if the node was unreachable.
  Mat grad(NodeId id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  enum class Op {
    kConstant,
    kParam,
    kAffine,
    kRelu,
    kTanh,
    kConcatRows,
    kSqDiff,
    kAddWeighted,
    kMin2,
    kLogSumExpCols,
    kEntrySum,
    kMaskColSum,
  };

  struct Node {
    Op op;
    Mat value;
    std::array<NodeId, 3> inputs{-1, -1, -1};
    double ca = 0.0, cb = 0.0;  // add_weighted coefficients
    Mat aux;                    // op-specific stash (difference, tie mask, coeffs)
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;

  // Adds `g` to the adjoint of `id`. Constants are skipped entirely, so the
  // expression argument is never even evaluated for them — freezing a network
  // makes its parameter-gradient GEMMs free.
  template <typename Expr>
  void accumulate(NodeId id, const Expr& g) {
    if (nodes_[static_cast<std::size_t>(id)].op == Op::kConstant) return;
    Mat& adj = adjoints_[static_cast<std::size_t>(id)];
    if (adj.size() == 0)
      adj = g;
    else
      adj += g;
  }

  std::vector<Node> nodes_;
  std::vector<Mat> adjoints_;
};

// An Mlp instantiated on a tape. When trainable, each layer's parameters are
// param nodes and collect_grads reads their adjoints; when frozen they are
// constants (gradients still flow *through* the network to its input).
struct MlpTapeRef {
  std::vector<Tape::NodeId> weight_nodes;
  std::vector<Tape::NodeId> bias_nodes;
  Tape::NodeId output = -1;
};

MlpTapeRef mlp_on_tape(Tape& tape, const Mlp& net, Tape::NodeId input, bool trainable = true);
MlpGrads collect_grads(const Tape& tape, const MlpTapeRef& ref, const Mlp& net);

}  // namespace rcorl
