#pragma once

#include <cstddef>
#include <span>

namespace dil::kernels {

/// Geometry of a valid 2-D cross-correlation over a batch of planar images.
struct ConvDims {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel = 1;

  std::size_t out_h() const { return in_h - kernel + 1; }
  std::size_t out_w() const { return in_w - kernel + 1; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
};

// OpenMP kernels. Every output element is owned by exactly one thread and
// accumulated in a fixed order, so results do not depend on the thread count.
// Forward and input-gradient match the reference bitwise; the weight gradient
// uses blocked dot products and matches it to rounding.

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx);
void conv2d_backward_weight(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb);

/// Reflect padding of [planes, h, w] (edge sample not repeated).
void pad_reflect_forward(std::size_t planes, std::size_t h, std::size_t w, std::size_t pad,
                         std::span<const double> x, std::span<double> y);
void pad_reflect_backward(std::size_t planes, std::size_t h, std::size_t w, std::size_t pad,
                          std::span<const double> gy, std::span<double> gx);

/// Index that reflect padding reads for padded coordinate `i - pad`.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

namespace reference {

// Direct serial loops, one output element at a time. Kept for tests and the
// benchmark; not used on the training path.

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx);
void conv2d_backward_weight(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb);

}  // namespace reference

}  // namespace dil::kernels
