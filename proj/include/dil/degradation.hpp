#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dil/tensor.hpp"

namespace dil {

/// Additive white Gaussian noise; sigma on the 0-255 scale.
struct Awgn {
  double sigma = 0.0;
  bool operator==(const Awgn&) const = default;
};

struct GaussianBlur {
  double sigma = 1.0;
  bool operator==(const GaussianBlur&) const = default;
};

/// Per-channel 8x8 block DCT quantization with the scaled luminance table.
struct JpegQuant {
  int quality = 50;
  bool operator==(const JpegQuant&) const = default;
};

using DistortionStage = std::variant<Awgn, GaussianBlur, JpegQuant>;

/// Stages applied left to right.
struct Hybrid {
  std::vector<DistortionStage> stages;
  bool operator==(const Hybrid&) const = default;
};

/// One degradation d_i = g(., d) of a clean image.
struct DistortionSpec {
  std::variant<Awgn, GaussianBlur, JpegQuant, Hybrid> kind;

  static DistortionSpec awgn(double sigma) { return {Awgn{sigma}}; }
  static DistortionSpec blur(double sigma) { return {GaussianBlur{sigma}}; }
  static DistortionSpec jpeg(int quality) { return {JpegQuant{quality}}; }
  static DistortionSpec hybrid(std::vector<DistortionStage> stages) { return {Hybrid{std::move(stages)}}; }

  void validate() const;
  /// "awgn", "gaussian_blur", "jpeg_quant" or "hybrid".
  std::string kind_name() const;
  /// Canonical parameter string, e.g. "sigma=15" or "blur=3;sigma=25;quality=30".
  std::string params_string() const;
  /// kind_name() + "(" + params_string() + ")".
  std::string label() const;
  /// Severity along the kind's own axis (sigma or 100 - quality); used for plots.
  double level() const;
  bool operator==(const DistortionSpec&) const = default;
};

/// Desk-scale hybrid presets, ordered by severity: blur -> noise -> compression.
DistortionSpec hybrid_preset(const std::string& name);

/// Uniformly weighted confounder set D = {d_1..d_n}.
class ConfounderSet {
 public:
  explicit ConfounderSet(std::vector<DistortionSpec> specs);
  std::size_t size() const { return specs_.size(); }
  const DistortionSpec& operator[](std::size_t i) const { return specs_.at(i); }
  const std::vector<DistortionSpec>& specs() const { return specs_; }
  double probability() const { return 1.0 / static_cast<double>(specs_.size()); }

 private:
  std::vector<DistortionSpec> specs_;
};

struct CleanImage {
  Tensor pixels;  // [3, h, w] in [0, 1]
  std::string source_id;

  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
};

/// Throws unless `pixels` is [3, h, w] with finite values in [0, 1].
void validate_image(const Tensor& pixels);

/// k x k kernel, k = 2 * ceil(3 sigma) + 1, normalized by its computed sum.
Tensor gaussian_kernel(double sigma);

/// Standard JPEG luminance table (Annex K), row-major 8x8.
const std::array<int, 64>& standard_luminance_table();
/// libjpeg quality scaling of the luminance table.
std::array<int, 64> quantization_table(int quality);

/// I_d = g(I_c, d). Pure given (image, spec, seed).
Tensor apply_distortion(const Tensor& pixels, const DistortionSpec& spec, std::uint64_t seed);
Tensor apply_distortion(const CleanImage& image, const DistortionSpec& spec, std::uint64_t seed);

/// Procedural clean image: sinusoidal gradients, soft-edged shapes and
/// bilinear value noise, clamped to [0, 1]. Requires h, w >= 64.
CleanImage synth_clean_image(std::uint64_t seed, std::size_t h, std::size_t w);

/// One rendition of `image` per confounder; rendition i uses seed derive(seed, i).
std::vector<Tensor> counterfactual_augment(const CleanImage& image, const ConfounderSet& set, std::uint64_t seed);

struct PatchPair {
  Tensor distorted;  // [3, p, p]
  Tensor clean;      // [3, p, p]
  std::size_t spec_index = 0;
};

/// How a batch chooses confounders: all pairs from one spec, an even split
/// across all specs, or one uniformly drawn spec per pair.
struct SamplingMode {
  enum class Kind { kSerial, kParallel, kOuter } kind = Kind::kOuter;
  std::size_t spec_index = 0;  // zero-based, used by kSerial

  static SamplingMode serial(std::size_t index) { return {Kind::kSerial, index}; }
  static SamplingMode parallel() { return {Kind::kParallel, 0}; }
  static SamplingMode outer() { return {Kind::kOuter, 0}; }
};

/// Random p x p crops with their distorted counterparts. Pair j draws its crop,
/// confounder and distortion noise from independent sub-seeds of (seed, j).
std::vector<PatchPair> sample_batch(const std::vector<CleanImage>& images, const ConfounderSet& set,
                                    SamplingMode mode, std::size_t batch, std::size_t patch, std::uint64_t seed);

/// Confounder index of each pair of a parallel batch: an even split with the
/// remainder going to the lowest indices.
std::vector<std::size_t> parallel_assignment(std::size_t batch, std::size_t n);

}  // namespace dil
