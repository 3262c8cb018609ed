#pragma once

#include <span>
#include <string>
#include <vector>

#include "dil/autodiff.hpp"
#include "dil/tensor.hpp"

namespace dil {

struct Segment {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size() const { return shape_size(shape); }
};

/// Flat parameter buffer partitioned into named, contiguous segments.
class ParamVector {
 public:
  ParamVector() = default;
  /// Packs tensors back to back in the given order.
  static ParamVector flatten(const std::vector<std::string>& names, const std::vector<Tensor>& tensors);
  /// Zero-filled vector with the given layout.
  static ParamVector zeros_like(const ParamVector& layout);
  /// Layout of `layout` with new values; throws on length mismatch.
  static ParamVector with_values(const ParamVector& layout, std::vector<double> values);

  std::vector<Tensor> unflatten() const;
  /// Registers each segment as a leaf of `graph`.
  std::vector<Tensor> as_leaves(Graph& graph) const;
  /// Collects gradients of the given leaves into this layout.
  ParamVector gather(const Gradients& grads, const std::vector<Tensor>& leaves) const;

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  bool same_layout(const ParamVector& other) const;
  bool operator==(const ParamVector& other) const;

 private:
  std::vector<Segment> segments_;
  std::vector<double> data_;
};

// a + s * b
ParamVector axpy(const ParamVector& a, double s, const ParamVector& b);
ParamVector scaled(const ParamVector& a, double s);
double dot(const ParamVector& a, const ParamVector& b);
double norm2(const ParamVector& a);
double norm_inf(const ParamVector& a);
/// Throws NonFiniteError naming the first NaN/inf entry.
void require_finite(const ParamVector& a, const std::string& what);

}  // namespace dil
