#include "dil/autodiff.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <string>

#include "dil/kernels.hpp"

namespace dil {

namespace {

thread_local Graph* g_active = nullptr;
std::atomic<std::uint64_t> g_next_graph_id{1};

struct OpInfo {
  OpTag tag;
  std::string_view name;
  std::size_t arity;
};

constexpr std::array<OpInfo, 13> kOps{{
    {OpTag::kLeaf, "leaf", 0},
    {OpTag::kConv2d, "conv2d", 3},
    {OpTag::kAdd, "add", 2},
    {OpTag::kSub, "sub", 2},
    {OpTag::kMulScalar, "mul_scalar", 1},
    {OpTag::kRelu, "relu", 1},
    {OpTag::kPadReflect, "pad_reflect", 1},
    {OpTag::kSum, "sum", 1},
    {OpTag::kMean, "mean", 1},
    {OpTag::kAbs, "abs", 1},
    {OpTag::kSqrt, "sqrt", 1},
    {OpTag::kSquare, "square", 1},
    {OpTag::kClamp, "clamp", 1},
}};

const OpInfo& info(OpTag tag) {
  for (const auto& op : kOps) {
    if (op.tag == tag) return op;
  }
  throw std::invalid_argument("unknown op tag");
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(x.shape(), std::move(out));
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

kernels::ConvDims conv_dims(const Tensor& x, const Tensor& w) {
  kernels::ConvDims d;
  d.batch = x.dim(0);
  d.in_channels = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.out_channels = w.dim(0);
  d.kernel = w.dim(2);
  return d;
}

void check_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool ok = x.rank() == 4 && w.rank() == 4 && b.rank() == 1 && w.dim(1) == x.dim(1) &&
                  w.dim(2) == w.dim(3) && b.dim(0) == w.dim(0) && x.dim(2) >= w.dim(2) &&
                  x.dim(3) >= w.dim(3);
  if (!ok) {
    throw ShapeError("conv2d: incompatible shapes input " + shape_string(x.shape()) + ", weight " +
                     shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  }
}

struct PadGeometry {
  std::size_t planes, h, w;
};

PadGeometry pad_geometry(const Tensor& x, std::size_t pad) {
  if (x.rank() < 2) throw ShapeError("pad_reflect: needs rank >= 2, got " + shape_string(x.shape()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (pad >= h || pad >= w) {
    throw ShapeError("pad_reflect: pad " + std::to_string(pad) + " too large for " + shape_string(x.shape()));
  }
  return {x.size() / (h * w), h, w};
}

Tensor compute(OpTag tag, std::span<const Tensor> in, const OpAttrs& a) {
  switch (tag) {
    case OpTag::kConv2d: {
      const Tensor &x = in[0], &w = in[1], &b = in[2];
      check_conv(x, w, b);
      const auto d = conv_dims(x, w);
      std::vector<double> y(d.output_size());
      kernels::conv2d_forward(d, x.data(), w.data(), b.data(), y);
      return Tensor({d.batch, d.out_channels, d.out_h(), d.out_w()}, std::move(y));
    }
    case OpTag::kPadReflect: {
      const auto g = pad_geometry(in[0], a.pad);
      Shape shape = in[0].shape();
      shape[shape.size() - 2] += 2 * a.pad;
      shape[shape.size() - 1] += 2 * a.pad;
      std::vector<double> y(shape_size(shape));
      kernels::pad_reflect_forward(g.planes, g.h, g.w, a.pad, in[0].data(), y);
      return Tensor(std::move(shape), std::move(y));
    }
    case OpTag::kAdd:
    case OpTag::kSub: {
      require_same_shape(op_name(tag), in[0], in[1]);
      std::vector<double> y(in[0].size());
      const auto x0 = in[0].data(), x1 = in[1].data();
      if (tag == OpTag::kAdd) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x0[i] + x1[i];
      } else {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x0[i] - x1[i];
      }
      return Tensor(in[0].shape(), std::move(y));
    }
    case OpTag::kMulScalar:
      return map_unary(in[0], [s = a.scalar](double v) { return v * s; });
    case OpTag::kRelu:
      return map_unary(in[0], [](double v) { return v > 0.0 ? v : 0.0; });
    case OpTag::kSum:
    case OpTag::kMean: {
      double acc = 0.0;
      for (double v : in[0].data()) acc += v;
      if (tag == OpTag::kMean) acc /= static_cast<double>(in[0].size());
      return Tensor::scalar(acc);
    }
    case OpTag::kAbs:
      return map_unary(in[0], [](double v) { return std::fabs(v); });
    case OpTag::kSqrt:
      return map_unary(in[0], [](double v) { return std::sqrt(v); });
    case OpTag::kSquare:
      return map_unary(in[0], [](double v) { return v * v; });
    case OpTag::kClamp:
      if (!(a.lo <= a.hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
      return map_unary(in[0], [lo = a.lo, hi = a.hi](double v) { return v < lo ? lo : (v > hi ? hi : v); });
    case OpTag::kLeaf:
      break;
  }
  throw std::invalid_argument("forward_op: unsupported op " + std::string(op_name(tag)));
}

// Vector-Jacobian products. `needed[i]` says whether input i wants a gradient.
std::vector<std::optional<std::vector<double>>> vjp(OpTag tag, const std::vector<Tensor>& in, const Tensor& out,
                                                    const OpAttrs& a, std::span<const double> g,
                                                    const std::vector<bool>& needed) {
  std::vector<std::optional<std::vector<double>>> res(in.size());
  auto unary = [&](auto&& f) {
    std::vector<double> gx(in[0].size());
    const auto x = in[0].data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = f(g[i], x[i], i);
    res[0] = std::move(gx);
  };
  switch (tag) {
    case OpTag::kConv2d: {
      const auto d = conv_dims(in[0], in[1]);
      if (needed[0]) {
        std::vector<double> gx(d.input_size());
        kernels::conv2d_backward_input(d, g, in[1].data(), gx);
        res[0] = std::move(gx);
      }
      if (needed[1] || needed[2]) {
        std::vector<double> gw(d.weight_size()), gb(d.out_channels);
        kernels::conv2d_backward_weight(d, g, in[0].data(), gw, gb);
        if (needed[1]) res[1] = std::move(gw);
        if (needed[2]) res[2] = std::move(gb);
      }
      break;
    }
    case OpTag::kPadReflect: {
      const auto geo = pad_geometry(in[0], a.pad);
      std::vector<double> gx(in[0].size());
      kernels::pad_reflect_backward(geo.planes, geo.h, geo.w, a.pad, g, gx);
      res[0] = std::move(gx);
      break;
    }
    case OpTag::kAdd:
      if (needed[0]) res[0] = std::vector<double>(g.begin(), g.end());
      if (needed[1]) res[1] = std::vector<double>(g.begin(), g.end());
      break;
    case OpTag::kSub:
      if (needed[0]) res[0] = std::vector<double>(g.begin(), g.end());
      if (needed[1]) {
        std::vector<double> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
        res[1] = std::move(gb);
      }
      break;
    case OpTag::kMulScalar:
      unary([s = a.scalar](double gi, double, std::size_t) { return gi * s; });
      break;
    case OpTag::kRelu:
      unary([](double gi, double xi, std::size_t) { return xi > 0.0 ? gi : 0.0; });
      break;
    case OpTag::kSum:
      res[0] = std::vector<double>(in[0].size(), g[0]);
      break;
    case OpTag::kMean:
      res[0] = std::vector<double>(in[0].size(), g[0] / static_cast<double>(in[0].size()));
      break;
    case OpTag::kAbs:
      // sign(0) = 0
      unary([](double gi, double xi, std::size_t) { return xi > 0.0 ? gi : (xi < 0.0 ? -gi : 0.0); });
      break;
    case OpTag::kSqrt: {
      const auto y = out.data();
      unary([y](double gi, double, std::size_t i) { return gi * 0.5 / y[i]; });
      break;
    }
    case OpTag::kSquare:
      unary([](double gi, double xi, std::size_t) { return gi * 2.0 * xi; });
      break;
    case OpTag::kClamp:
      unary([lo = a.lo, hi = a.hi](double gi, double xi, std::size_t) { return (xi >= lo && xi <= hi) ? gi : 0.0; });
      break;
    case OpTag::kLeaf:
      break;
  }
  return res;
}

}  // namespace

std::string_view op_name(OpTag tag) { return info(tag).name; }

OpTag parse_op_tag(std::string_view name) {
  for (const auto& op : kOps) {
    if (op.name == name && op.tag != OpTag::kLeaf) return op.tag;
  }
  throw std::invalid_argument("unknown op tag '" + std::string(name) + "'");
}

bool Gradients::contains(const Tensor& t) const {
  return t.tracked() && static_cast<std::size_t>(t.node()) < by_node_.size() && by_node_[t.node()].has_value();
}

Tensor Gradients::at(const Tensor& t) const {
  if (!t.tracked()) throw std::invalid_argument("gradient requested for an untracked tensor");
  if (contains(t)) return *by_node_[t.node()];
  return Tensor::zeros(t.shape());
}

Graph::Graph() : id_(g_next_graph_id.fetch_add(1)) {}

Tensor Graph::leaf(const Tensor& value) {
  Tensor t = value.detached();
  nodes_.push_back(Node{OpTag::kLeaf, {}, {}, t, {}});
  t.node_ = static_cast<NodeId>(nodes_.size() - 1);
  t.graph_id_ = id_;
  return t;
}

Tensor Graph::record(OpTag tag, std::span<const Tensor> inputs, const Tensor& output, const OpAttrs& attrs) {
  Node node{tag, {}, {}, output.detached(), attrs};
  for (const Tensor& in : inputs) {
    node.inputs.push_back(owns(in) ? in.node() : kNoNode);
    node.saved.push_back(in.detached());
  }
  nodes_.push_back(std::move(node));
  Tensor t = output.detached();
  t.node_ = static_cast<NodeId>(nodes_.size() - 1);
  t.graph_id_ = id_;
  return t;
}

Gradients Graph::backward(const Tensor& loss) const {
  if (!owns(loss)) throw std::invalid_argument("backward: loss is not recorded on this graph");
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));

  const auto root = static_cast<std::size_t>(loss.node());
  std::vector<std::optional<std::vector<double>>> grad(root + 1);
  grad[root] = std::vector<double>{1.0};

  for (std::size_t id = root + 1; id-- > 0;) {
    if (!grad[id]) continue;
    const Node& node = nodes_[id];
    if (node.tag == OpTag::kLeaf) continue;
    std::vector<bool> needed(node.inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < needed.size(); ++i) {
      needed[i] = node.inputs[i] != kNoNode;
      any = any || needed[i];
    }
    if (any) {
      auto in_grads = vjp(node.tag, node.saved, node.output, node.attrs, *grad[id], needed);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        if (!needed[i] || !in_grads[i]) continue;
        auto& slot = grad[static_cast<std::size_t>(node.inputs[i])];
        if (!slot) {
          slot = std::move(in_grads[i]);
        } else {
          for (std::size_t j = 0; j < slot->size(); ++j) (*slot)[j] += (*in_grads[i])[j];
        }
      }
    }
    grad[id].reset();
  }

  std::vector<std::optional<Tensor>> out(nodes_.size());
  for (std::size_t id = 0; id <= root; ++id) {
    if (grad[id] && nodes_[id].tag == OpTag::kLeaf) out[id] = Tensor(nodes_[id].output.shape(), std::move(*grad[id]));
  }
  return Gradients(std::move(out));
}

GraphScope::GraphScope(Graph& graph) : previous_(g_active) { g_active = &graph; }
GraphScope::~GraphScope() { g_active = previous_; }

Graph* active_graph() { return g_active; }

Tensor forward_op(OpTag tag, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  const OpInfo& op = info(tag);
  if (tag == OpTag::kLeaf) throw std::invalid_argument("forward_op: leaves are created with Graph::leaf");
  if (inputs.size() != op.arity) {
    throw std::invalid_argument(std::string(op.name) + ": expected " + std::to_string(op.arity) + " inputs, got " +
                                std::to_string(inputs.size()));
  }
  Tensor out = compute(tag, inputs, attrs);
  Graph* g = active_graph();
  if (g) {
    for (const Tensor& in : inputs) {
      if (g->owns(in)) return g->record(tag, inputs, out, attrs);
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::array<Tensor, 3> in{x, w, b};
  return forward_op(OpTag::kConv2d, in);
}

Tensor pad_reflect(const Tensor& x, std::size_t pad) {
  OpAttrs a;
  a.pad = pad;
  return forward_op(OpTag::kPadReflect, std::span(&x, 1), a);
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::array<Tensor, 2> in{a, b};
  return forward_op(OpTag::kAdd, in);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::array<Tensor, 2> in{a, b};
  return forward_op(OpTag::kSub, in);
}

Tensor mul_scalar(const Tensor& x, double s) {
  OpAttrs a;
  a.scalar = s;
  return forward_op(OpTag::kMulScalar, std::span(&x, 1), a);
}

Tensor relu(const Tensor& x) { return forward_op(OpTag::kRelu, std::span(&x, 1)); }
Tensor sum(const Tensor& x) { return forward_op(OpTag::kSum, std::span(&x, 1)); }
Tensor mean(const Tensor& x) { return forward_op(OpTag::kMean, std::span(&x, 1)); }
Tensor abs(const Tensor& x) { return forward_op(OpTag::kAbs, std::span(&x, 1)); }
Tensor sqrt(const Tensor& x) { return forward_op(OpTag::kSqrt, std::span(&x, 1)); }
Tensor square(const Tensor& x) { return forward_op(OpTag::kSquare, std::span(&x, 1)); }

Tensor clamp(const Tensor& x, double lo, double hi) {
  OpAttrs a;
  a.lo = lo;
  a.hi = hi;
  return forward_op(OpTag::kClamp, std::span(&x, 1), a);
}

}  // namespace dil
