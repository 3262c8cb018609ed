#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dil {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes do not satisfy an operation's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN or infinity.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::size_t index)
      : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Graph;
using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

/// Dense row-major array of doubles. Storage is immutable and shared between
/// copies; every operation produces a fresh buffer. A tensor may carry a
/// handle into the graph that recorded it.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_->size(); }
  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  /// Value of a single-element tensor.
  double item() const;

  NodeId node() const { return node_; }
  /// Serial number of the recording graph; 0 when untracked.
  std::uint64_t graph_id() const { return graph_id_; }
  bool tracked() const { return node_ != kNoNode; }

  /// Same values, no graph linkage.
  Tensor detached() const;
  /// Same values under a new shape of equal size. Untracked tensors only.
  Tensor reshaped(Shape shape) const;
  std::vector<double> to_vector() const { return *data_; }

 private:
  friend class Graph;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  NodeId node_ = kNoNode;
  std::uint64_t graph_id_ = 0;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace dil
