#include "rcorl/tape.hpp"

#include <stdexcept>
#include <string>

namespace rcorl {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
}

}  // namespace

Tape::NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("tape: bad node id");
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::NodeId Tape::constant(Mat value) {
  return push({Op::kConstant, std::move(value), {}, 0, 0, {}});
}

Tape::NodeId Tape::param(Mat value) {
  return push({Op::kParam, std::move(value), {}, 0, 0, {}});
}

Tape::NodeId Tape::affine(NodeId weight, NodeId input, NodeId bias) {
  const Mat& w = node(weight).value;
  const Mat& x = node(input).value;
  const Mat& b = node(bias).value;
  if (w.cols() != x.rows())
    throw std::invalid_argument("affine: weight cols " + std::to_string(w.cols()) +
                                " != input rows " + std::to_string(x.rows()));
  if (b.rows() != w.rows() || b.cols() != 1)
    throw std::invalid_argument("affine: bias must be " + std::to_string(w.rows()) + "x1");
  Mat value = (w * x).colwise() + b.col(0);
  return push({Op::kAffine, std::move(value), {weight, input, bias}, 0, 0, {}});
}

Tape::NodeId Tape::relu(NodeId x) {
  Mat value = node(x).value.array().max(0.0);
  return push({Op::kRelu, std::move(value), {x}, 0, 0, {}});
}

Tape::NodeId Tape::tanh(NodeId x) {
  Mat value = node(x).value.array().tanh();
  return push({Op::kTanh, std::move(value), {x}, 0, 0, {}});
}

Tape::NodeId Tape::concat_rows(NodeId top, NodeId bottom) {
  const Mat& a = node(top).value;
  const Mat& b = node(bottom).value;
  if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column count mismatch");
  Mat value(a.rows() + b.rows(), a.cols());
  value.topRows(a.rows()) = a;
  value.bottomRows(b.rows()) = b;
  return push({Op::kConcatRows, std::move(value), {top, bottom}, 0, 0, {}});
}

Tape::NodeId Tape::sq_diff(NodeId a, NodeId b) {
  const Mat& va = node(a).value;
  const Mat& vb = node(b).value;
  check_same_shape(va, vb, "sq_diff");
  Mat diff = va - vb;
  Mat value = diff.array().square();
  return push({Op::kSqDiff, std::move(value), {a, b}, 0, 0, std::move(diff)});
}

Tape::NodeId Tape::add_weighted(double ca, NodeId a, double cb, NodeId b) {
  const Mat& va = node(a).value;
  const Mat& vb = node(b).value;
  check_same_shape(va, vb, "add_weighted");
  Mat value = ca * va + cb * vb;
  return push({Op::kAddWeighted, std::move(value), {a, b}, ca, cb, {}});
}

Tape::NodeId Tape::scale(double c, NodeId a) {
  Mat value = c * node(a).value;
  return push({Op::kAddWeighted, std::move(value), {a, a}, c, 0.0, {}});
}

Tape::NodeId Tape::min2(NodeId a, NodeId b) {
  const Mat& va = node(a).value;
  const Mat& vb = node(b).value;
  check_same_shape(va, vb, "min2");
  Mat take_a = (va.array() <= vb.array()).cast<double>();
  Mat value = va.cwiseMin(vb);
  return push({Op::kMin2, std::move(value), {a, b}, 0, 0, std::move(take_a)});
}

Tape::NodeId Tape::logsumexp_cols(NodeId x) {
  const Mat& v = node(x).value;
  if (v.rows() < 1) throw std::invalid_argument("logsumexp_cols: empty input");
  Mat colmax = v.colwise().maxCoeff();
  Mat shifted = v - Vec::Ones(v.rows()) * colmax;
  Mat value = colmax.array() + shifted.array().exp().colwise().sum().log();
  return push({Op::kLogSumExpCols, std::move(value), {x}, 0, 0, {}});
}

Tape::NodeId Tape::entry_sum(NodeId x, const Mat& coeffs) {
  const Mat& v = node(x).value;
  check_same_shape(v, coeffs, "entry_sum");
  Mat value(1, 1);
  value(0, 0) = (v.array() * coeffs.array()).sum();
  return push({Op::kEntrySum, std::move(value), {x}, 0, 0, coeffs});
}

Tape::NodeId Tape::mask_colsum(NodeId x, const Mat& coeffs) {
  const Mat& v = node(x).value;
  check_same_shape(v, coeffs, "mask_colsum");
  Mat value = (v.array() * coeffs.array()).colwise().sum();
  return push({Op::kMaskColSum, std::move(value), {x}, 0, 0, coeffs});
}

const Mat& Tape::value(NodeId id) const { return node(id).value; }

void Tape::backward(NodeId loss) {
  const Node& top = node(loss);
  if (top.value.rows() != 1 || top.value.cols() != 1)
    throw std::invalid_argument("backward: loss node must be 1x1, got " +
                                std::to_string(top.value.rows()) + "x" +
                                std::to_string(top.value.cols()));
  adjoints_.assign(nodes_.size(), Mat());
  adjoints_[static_cast<std::size_t>(loss)] = Mat::Ones(1, 1);

  for (NodeId i = loss; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const Mat& g = adjoints_[static_cast<std::size_t>(i)];
    if (g.size() == 0) continue;
    switch (n.op) {
      case Op::kConstant:
      case Op::kParam:
        break;
      case Op::kAffine: {
        const Mat& w = nodes_[n.inputs[0]].value;
        const Mat& x = nodes_[n.inputs[1]].value;
        accumulate(n.inputs[0], g * x.transpose());
        accumulate(n.inputs[1], w.transpose() * g);
        accumulate(n.inputs[2], g.rowwise().sum());
        break;
      }
      case Op::kRelu:
        accumulate(n.inputs[0], ((n.value.array() > 0.0).cast<double>() * g.array()).matrix());
        break;
      case Op::kTanh:
        accumulate(n.inputs[0], ((1.0 - n.value.array().square()) * g.array()).matrix());
        break;
      case Op::kConcatRows: {
        const auto ra = nodes_[n.inputs[0]].value.rows();
        const auto rb = nodes_[n.inputs[1]].value.rows();
        accumulate(n.inputs[0], g.topRows(ra));
        accumulate(n.inputs[1], g.bottomRows(rb));
        break;
      }
      case Op::kSqDiff: {
        Mat scaled = 2.0 * (n.aux.array() * g.array());
        accumulate(n.inputs[0], scaled);
        accumulate(n.inputs[1], -scaled);
        break;
      }
      case Op::kAddWeighted:
        accumulate(n.inputs[0], n.ca * g);
        if (n.cb != 0.0 || n.inputs[1] != n.inputs[0]) accumulate(n.inputs[1], n.cb * g);
        break;
      case Op::kMin2:
        accumulate(n.inputs[0], (n.aux.array() * g.array()).matrix());
        accumulate(n.inputs[1], ((1.0 - n.aux.array()) * g.array()).matrix());
        break;
      case Op::kLogSumExpCols: {
        const Mat& x = nodes_[n.inputs[0]].value;
        Mat softmax = (x - Vec::Ones(x.rows()) * n.value).array().exp();
        accumulate(n.inputs[0], (softmax.array().rowwise() * g.row(0).array()).matrix());
        break;
      }
      case Op::kEntrySum:
        accumulate(n.inputs[0], g(0, 0) * n.aux);
        break;
      case Op::kMaskColSum:
        accumulate(n.inputs[0], (n.aux.array().rowwise() * g.row(0).array()).matrix());
        break;
    }
  }
}

Mat Tape::grad(NodeId id) const {
  const Node& n = node(id);
  if (adjoints_.size() != nodes_.size())
    throw std::logic_error("tape: grad() before backward()");
  const Mat& adj = adjoints_[static_cast<std::size_t>(id)];
  if (adj.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return adj;
}

MlpTapeRef mlp_on_tape(Tape& tape, const Mlp& net, Tape::NodeId input, bool trainable) {
  MlpTapeRef ref;
  Tape::NodeId h = input;
  for (int k = 0; k < net.layer_count(); ++k) {
    Tape::NodeId w = trainable ? tape.param(net.weights[k]) : tape.constant(net.weights[k]);
    Tape::NodeId b = trainable ? tape.param(Mat(net.biases[k])) : tape.constant(Mat(net.biases[k]));
    ref.weight_nodes.push_back(w);
    ref.bias_nodes.push_back(b);
    h = tape.affine(w, h, b);
    const Activation act =
        k + 1 < net.layer_count() ? net.hidden_activation : net.output_activation;
    if (act == Activation::kRelu)
      h = tape.relu(h);
    else if (act == Activation::kTanh)
      h = tape.tanh(h);
  }
  ref.output = h;
  return ref;
}

MlpGrads collect_grads(const Tape& tape, const MlpTapeRef& ref, const Mlp& net) {
  if (static_cast<int>(ref.weight_nodes.size()) != net.layer_count())
    throw std::invalid_argument("collect_grads: layer count mismatch");
  MlpGrads grads;
  for (int k = 0; k < net.layer_count(); ++k) {
    grads.weights.push_back(tape.grad(ref.weight_nodes[k]));
    grads.biases.push_back(tape.grad(ref.bias_nodes[k]).col(0));
  }
  return grads;
}

}  // namespace rcorl
