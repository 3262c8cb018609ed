#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dil/tensor.hpp"

namespace dil {

enum class OpTag {
  kLeaf,
  kConv2d,
  kAdd,
  kSub,
  kMulScalar,
  kRelu,
  kPadReflect,
  kSum,
  kMean,
  kAbs,
  kSqrt,
  kSquare,
  kClamp,
};

std::string_view op_name(OpTag tag);
/// Parses an operation name such as "conv2d"; throws std::invalid_argument on unknown names.
OpTag parse_op_tag(std::string_view name);

/// Non-tensor operands of an operation.
struct OpAttrs {
  double scalar = 0.0;  // mul_scalar factor
  double lo = 0.0;      // clamp bounds
  double hi = 1.0;
  std::size_t pad = 0;  // pad_reflect width
};

/// Gradients produced by one backward pass, indexed by node handle.
class Gradients {
 public:
  explicit Gradients(std::vector<std::optional<Tensor>> by_node) : by_node_(std::move(by_node)) {}
  bool contains(const Tensor& t) const;
  /// Gradient for a tracked tensor; zeros if the loss does not depend on it.
  Tensor at(const Tensor& t) const;

 private:
  std::vector<std::optional<Tensor>> by_node_;
};

/// Append-only tape. Node order is a topological order because inputs are
/// always recorded before the operations that consume them.
class Graph {
 public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Registers a differentiable input and returns it linked to this graph.
  Tensor leaf(const Tensor& value);
  Tensor record(OpTag tag, std::span<const Tensor> inputs, const Tensor& output, const OpAttrs& attrs);

  std::size_t size() const { return nodes_.size(); }
  bool owns(const Tensor& t) const { return t.tracked() && t.graph_id() == id_; }

  /// Reverse-mode sweep from a scalar loss. The tape itself is not modified,
  /// so several losses recorded on the same graph can each be differentiated.
  Gradients backward(const Tensor& loss) const;

 private:
  struct Node {
    OpTag tag;
    std::vector<NodeId> inputs;  // kNoNode for constants
    std::vector<Tensor> saved;   // input values
    Tensor output;
    OpAttrs attrs;
  };
  std::uint64_t id_;
  std::vector<Node> nodes_;
};

/// Makes a graph the recording target for the current thread while alive.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

Graph* active_graph();

/// Generic dispatcher. Output is recorded on the active graph when at least
/// one input is tracked by it.
Tensor forward_op(OpTag tag, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

// x: [B, C, H, W], w: [O, C, K, K], b: [O]. Valid (unpadded) cross-correlation.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor pad_reflect(const Tensor& x, std::size_t pad);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

}  // namespace dil
