#include "dil/param_vector.hpp"

#include <cmath>
#include <cstring>

namespace dil {

ParamVector ParamVector::flatten(const std::vector<std::string>& names, const std::vector<Tensor>& tensors) {
  if (names.size() != tensors.size()) throw std::invalid_argument("flatten: names and tensors differ in count");
  ParamVector p;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    p.segments_.push_back(Segment{names[i], tensors[i].shape(), p.data_.size()});
    const auto v = tensors[i].data();
    p.data_.insert(p.data_.end(), v.begin(), v.end());
  }
  return p;
}

ParamVector ParamVector::zeros_like(const ParamVector& layout) {
  return with_values(layout, std::vector<double>(layout.size(), 0.0));
}

ParamVector ParamVector::with_values(const ParamVector& layout, std::vector<double> values) {
  if (values.size() != layout.size()) {
    throw std::invalid_argument("parameter length " + std::to_string(values.size()) + " does not match layout length " +
                                std::to_string(layout.size()));
  }
  ParamVector p;
  p.segments_ = layout.segments_;
  p.data_ = std::move(values);
  return p;
}

std::vector<Tensor> ParamVector::unflatten() const {
  std::vector<Tensor> out;
  out.reserve(segments_.size());
  for (const Segment& s : segments_) {
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(s.offset);
    out.emplace_back(s.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.size())));
  }
  return out;
}

std::vector<Tensor> ParamVector::as_leaves(Graph& graph) const {
  std::vector<Tensor> out = unflatten();
  for (Tensor& t : out) t = graph.leaf(t);
  return out;
}

ParamVector ParamVector::gather(const Gradients& grads, const std::vector<Tensor>& leaves) const {
  if (leaves.size() != segments_.size()) throw std::invalid_argument("gather: leaf count does not match segments");
  ParamVector g = zeros_like(*this);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Tensor gi = grads.at(leaves[i]);
    std::copy(gi.data().begin(), gi.data().end(), g.data_.begin() + static_cast<std::ptrdiff_t>(segments_[i].offset));
  }
  return g;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (segments_.size() != other.segments_.size() || data_.size() != other.data_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name != other.segments_[i].name || segments_[i].shape != other.segments_[i].shape) return false;
  }
  return true;
}

bool ParamVector::operator==(const ParamVector& other) const {
  return same_layout(other) && std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

namespace {
void require_same_length(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("parameter length mismatch: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
}
}  // namespace

ParamVector axpy(const ParamVector& a, double s, const ParamVector& b) {
  require_same_length(a, b);
  ParamVector out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s * b[i];
  return out;
}

ParamVector scaled(const ParamVector& a, double s) {
  ParamVector out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return out;
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_length(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(const ParamVector& a) { return std::sqrt(dot(a, a)); }

double norm_inf(const ParamVector& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::fabs(v));
  return m;
}

void require_finite(const ParamVector& a, const std::string& what) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) throw NonFiniteError(what + " is not finite", i);
  }
}

}  // namespace dil
