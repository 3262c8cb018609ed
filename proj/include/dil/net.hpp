#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dil/param_vector.hpp"

namespace dil {

struct NetConfig {
  std::size_t in_channels = 3;
  std::size_t hidden_channels = 16;
  std::size_t num_layers = 3;
  std::size_t kernel_size = 3;
  bool residual = true;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  /// (in, out) channel pair of each conv layer.
  std::vector<std::pair<std::size_t, std::size_t>> layer_channels() const;
  std::size_t parameter_count() const;
  bool operator==(const NetConfig&) const = default;
};

/// Small fully convolutional restorer: reflect-padded 'same' convolutions,
/// ReLU between layers, optional global residual connection.
class RestorationNet {
 public:
  /// Kernels ~ N(0, 2 / fan_in), biases zero.
  static RestorationNet init(const NetConfig& config, std::uint64_t seed);
  /// Wraps existing parameters; throws if their layout does not fit `config`.
  RestorationNet(NetConfig config, ParamVector params);

  const NetConfig& config() const { return config_; }
  const ParamVector& params() const { return params_; }

  /// Independent network evaluating with `theta`; `this` is untouched.
  RestorationNet with_params(ParamVector theta) const;

  /// x: [batch, in_channels, h, w] -> same shape.
  Tensor forward(const Tensor& x) const;
  /// Forward with explicit per-segment parameter tensors, e.g. graph leaves.
  Tensor forward(const Tensor& x, std::span<const Tensor> params) const;

 private:
  NetConfig config_;
  ParamVector params_;
};

/// Parameter layout (segment names and shapes, zero values) for `config`.
ParamVector parameter_layout(const NetConfig& config);

// Checkpoint: a "DILNET v1" header line, a config line, then for each segment a
// "<name> <rank> <dims...>" line followed by its values as raw little-endian
// IEEE-754 doubles.
void save_checkpoint(const RestorationNet& net, const std::filesystem::path& path);
RestorationNet load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const RestorationNet& net);
RestorationNet decode_checkpoint(const std::string& bytes);

// Little-endian double packing shared by the binary formats.
void append_le_doubles(std::string& out, std::span<const double> values);
std::vector<double> read_le_doubles(const std::string& in, std::size_t& pos, std::size_t count);

}  // namespace dil
