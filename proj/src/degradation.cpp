#include "dil/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dil/kernels.hpp"
#include "dil/rng.hpp"

namespace dil {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string fmt_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void validate_stage(const DistortionStage& s) {
  std::visit(Overloaded{
                 [](const Awgn& a) {
                   if (!(a.sigma >= 0.0) || !std::isfinite(a.sigma))
                     throw std::invalid_argument("awgn sigma must be finite and >= 0");
                 },
                 [](const GaussianBlur& b) {
                   if (!(b.sigma > 0.0) || !std::isfinite(b.sigma))
                     throw std::invalid_argument("blur sigma must be finite and > 0");
                 },
                 [](const JpegQuant& j) {
                   if (j.quality < 1 || j.quality > 100) throw std::invalid_argument("jpeg quality must be in [1, 100]");
                 },
             },
             s);
}

std::string stage_params(const DistortionStage& s) {
  return std::visit(Overloaded{
                        [](const Awgn& a) { return "sigma=" + fmt_num(a.sigma); },
                        [](const GaussianBlur& b) { return "blur=" + fmt_num(b.sigma); },
                        [](const JpegQuant& j) { return "quality=" + std::to_string(j.quality); },
                    },
                    s);
}

// Pixel-domain helpers on [channels, h, w] buffers.

std::vector<double> blur_planes(const Tensor& img, double sigma) {
  const Tensor kernel = gaussian_kernel(sigma);
  const std::size_t k = kernel.dim(0), r = k / 2;
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const auto src = img.data();
  const auto kv = kernel.data();
  std::vector<double> out(img.size());
  std::vector<std::size_t> ry(h + 2 * r), rx(w + 2 * r);
  for (std::size_t i = 0; i < ry.size(); ++i)
    ry[i] = kernels::reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r), h);
  for (std::size_t i = 0; i < rx.size(); ++i)
    rx[i] = kernels::reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r), w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = src.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const double* row = plane + ry[y + ky] * w;
          const double* krow = kv.data() + ky * k;
          for (std::size_t kx = 0; kx < k; ++kx) acc += krow[kx] * row[rx[x + kx]];
        }
        out[(ch * h + y) * w + x] = acc;
      }
    }
  }
  return out;
}

std::vector<double> add_noise(const Tensor& img, double sigma, std::uint64_t seed) {
  std::vector<double> out = img.to_vector();
  if (sigma == 0.0) return out;
  Rng rng(seed);
  const double s = sigma / 255.0;
  for (double& v : out) v = std::clamp(v + s * rng.normal(), 0.0, 1.0);
  return out;
}

// DCT-II basis with orthonormal scaling: basis[u][x] = c(u) cos((2x + 1) u pi / 16).
const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

std::vector<double> jpeg_planes(const Tensor& img, int quality) {
  const auto table = quantization_table(quality);
  const auto& m = dct_basis();
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const auto src = img.data();
  std::vector<double> out(img.size());
  std::array<double, 64> block{}, tmp{}, coef{};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = src.data() + ch * h * w;
    for (std::size_t by = 0; by < h; by += 8) {
      for (std::size_t bx = 0; bx < w; bx += 8) {
        // Partial edge blocks replicate their last row/column.
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) {
            const std::size_t sy = std::min(by + y, h - 1), sx = std::min(bx + x, w - 1);
            block[y * 8 + x] = plane[sy * w + sx] * 255.0 - 128.0;
          }
        // coef = M * block * M^T
        for (int u = 0; u < 8; ++u)
          for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int y = 0; y < 8; ++y) acc += m[u * 8 + y] * block[y * 8 + x];
            tmp[u * 8 + x] = acc;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int x = 0; x < 8; ++x) acc += tmp[u * 8 + x] * m[v * 8 + x];
            coef[u * 8 + v] = std::round(acc / table[u * 8 + v]) * table[u * 8 + v];
          }
        // block = M^T * coef * M
        for (int y = 0; y < 8; ++y)
          for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u) acc += m[u * 8 + y] * coef[u * 8 + v];
            tmp[y * 8 + v] = acc;
          }
        for (std::size_t y = 0; y < 8 && by + y < h; ++y)
          for (std::size_t x = 0; x < 8 && bx + x < w; ++x) {
            double acc = 0.0;
            for (std::size_t v = 0; v < 8; ++v) acc += tmp[y * 8 + v] * m[v * 8 + x];
            out[(ch * h + by + y) * w + bx + x] = std::clamp((acc + 128.0) / 255.0, 0.0, 1.0);
          }
      }
    }
  }
  return out;
}

Tensor apply_stage(const Tensor& img, const DistortionStage& stage, std::uint64_t seed) {
  std::vector<double> out = std::visit(Overloaded{
                                           [&](const Awgn& a) { return add_noise(img, a.sigma, seed); },
                                           [&](const GaussianBlur& b) { return blur_planes(img, b.sigma); },
                                           [&](const JpegQuant& j) { return jpeg_planes(img, j.quality); },
                                       },
                                       stage);
  return Tensor(img.shape(), std::move(out));
}

}  // namespace

void DistortionSpec::validate() const {
  std::visit(Overloaded{
                 [](const Hybrid& hy) {
                   if (hy.stages.empty()) throw std::invalid_argument("hybrid distortion needs at least one stage");
                   for (const auto& s : hy.stages) validate_stage(s);
                 },
                 [](const auto& s) { validate_stage(DistortionStage{s}); },
             },
             kind);
}

std::string DistortionSpec::kind_name() const {
  return std::visit(Overloaded{
                        [](const Awgn&) { return std::string("awgn"); },
                        [](const GaussianBlur&) { return std::string("gaussian_blur"); },
                        [](const JpegQuant&) { return std::string("jpeg_quant"); },
                        [](const Hybrid&) { return std::string("hybrid"); },
                    },
                    kind);
}

std::string DistortionSpec::params_string() const {
  return std::visit(Overloaded{
                        [](const Awgn& a) { return "sigma=" + fmt_num(a.sigma); },
                        [](const GaussianBlur& b) { return "sigma=" + fmt_num(b.sigma); },
                        [](const JpegQuant& j) { return "quality=" + std::to_string(j.quality); },
                        [](const Hybrid& hy) {
                          std::string s;
                          for (std::size_t i = 0; i < hy.stages.size(); ++i) {
                            if (i) s += ";";
                            s += stage_params(hy.stages[i]);
                          }
                          return s;
                        },
                    },
                    kind);
}

std::string DistortionSpec::label() const { return kind_name() + "(" + params_string() + ")"; }

double DistortionSpec::level() const {
  return std::visit(Overloaded{
                        [](const Awgn& a) { return a.sigma; },
                        [](const GaussianBlur& b) { return b.sigma; },
                        [](const JpegQuant& j) { return 100.0 - j.quality; },
                        [](const Hybrid& hy) {
                          // Noise sigma of the hybrid, the dominant axis of the presets.
                          for (const auto& s : hy.stages)
                            if (const auto* a = std::get_if<Awgn>(&s)) return a->sigma;
                          return 0.0;
                        },
                    },
                    kind);
}

DistortionSpec hybrid_preset(const std::string& name) {
  if (name == "mild") return DistortionSpec::hybrid({GaussianBlur{1.0}, Awgn{5.0}, JpegQuant{80}});
  if (name == "moderate") return DistortionSpec::hybrid({GaussianBlur{2.0}, Awgn{15.0}, JpegQuant{50}});
  if (name == "severe") return DistortionSpec::hybrid({GaussianBlur{3.0}, Awgn{25.0}, JpegQuant{30}});
  throw std::invalid_argument("unknown hybrid preset '" + name + "' (expected mild, moderate or severe)");
}

ConfounderSet::ConfounderSet(std::vector<DistortionSpec> specs) : specs_(std::move(specs)) {
  if (specs_.empty()) throw std::invalid_argument("confounder set must not be empty");
  for (const auto& s : specs_) s.validate();
}

void validate_image(const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) {
    throw ShapeError("image must be [3, h, w], got " + shape_string(pixels.shape()));
  }
  const auto v = pixels.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0 && v[i] <= 1.0)) {
      throw std::invalid_argument("image value " + std::to_string(v[i]) + " at index " + std::to_string(i) +
                                  " is outside [0, 1]");
    }
  }
}

Tensor gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  const auto k = static_cast<std::size_t>(2 * r + 1);
  std::vector<double> v(k * k);
  double total = 0.0;
  for (std::ptrdiff_t y = -r; y <= r; ++y)
    for (std::ptrdiff_t x = -r; x <= r; ++x) {
      const double e = std::exp(-static_cast<double>(x * x + y * y) / (2.0 * sigma * sigma));
      v[static_cast<std::size_t>((y + r) * static_cast<std::ptrdiff_t>(k) + (x + r))] = e;
      total += e;
    }
  for (double& e : v) e /= total;
  return Tensor({k, k}, std::move(v));
}

const std::array<int, 64>& standard_luminance_table() {
  static constexpr std::array<int, 64> table{
      16, 11, 10, 16, 24,  40,  51,  61,   //
      12, 12, 14, 19, 26,  58,  60,  55,   //
      14, 13, 16, 24, 40,  57,  69,  56,   //
      14, 17, 22, 29, 51,  87,  80,  62,   //
      18, 22, 37, 56, 68,  109, 103, 77,   //
      24, 35, 55, 64, 81,  104, 113, 92,   //
      49, 64, 78, 87, 103, 121, 120, 101,  //
      72, 92, 95, 98, 112, 100, 103, 99,
  };
  return table;
}

std::array<int, 64> quantization_table(int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg quality must be in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> out{};
  const auto& base = standard_luminance_table();
  for (std::size_t i = 0; i < 64; ++i) out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return out;
}

Tensor apply_distortion(const Tensor& pixels, const DistortionSpec& spec, std::uint64_t seed) {
  spec.validate();
  validate_image(pixels);
  if (const auto* hy = std::get_if<Hybrid>(&spec.kind)) {
    Tensor img = pixels;
    for (std::size_t i = 0; i < hy->stages.size(); ++i) img = apply_stage(img, hy->stages[i], derive_seed(seed, i));
    return img;
  }
  return std::visit(Overloaded{
                        [](const Hybrid&) -> Tensor { throw std::logic_error("unreachable"); },
                        [&](const auto& s) { return apply_stage(pixels, DistortionStage{s}, seed); },
                    },
                    spec.kind);
}

Tensor apply_distortion(const CleanImage& image, const DistortionSpec& spec, std::uint64_t seed) {
  return apply_distortion(image.pixels, spec, seed);
}

CleanImage synth_clean_image(std::uint64_t seed, std::size_t h, std::size_t w) {
  if (h < 64 || w < 64) throw std::invalid_argument("synth_clean_image: h and w must be >= 64");
  Rng rng(seed);
  const double scale = static_cast<double>(std::min(h, w));
  std::vector<double> px(3 * h * w, 0.5);
  auto at = [&](std::size_t c, std::size_t y, std::size_t x) -> double& { return px[(c * h + y) * w + x]; };

  for (int s = 0; s < 4; ++s) {
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(0.5, 4.0) * 2.0 * std::numbers::pi / scale;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::array<double, 3> amp{};
    for (double& a : amp) a = rng.uniform(-0.1, 0.1);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double wave = std::sin(freq * (ca * static_cast<double>(x) + sa * static_cast<double>(y)) + phase);
        for (std::size_t c = 0; c < 3; ++c) at(c, y, x) += amp[c] * wave;
      }
  }

  // Value noise: 8x8 lattice per channel, bilinear interpolation.
  constexpr std::size_t kGrid = 8;
  std::array<double, 3 * kGrid * kGrid> lattice{};
  for (double& v : lattice) v = rng.uniform(-0.15, 0.15);
  for (std::size_t y = 0; y < h; ++y) {
    const double gy = static_cast<double>(y) * (kGrid - 1) / static_cast<double>(h - 1);
    const std::size_t y0 = std::min(static_cast<std::size_t>(gy), kGrid - 2);
    const double ty = gy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) * (kGrid - 1) / static_cast<double>(w - 1);
      const std::size_t x0 = std::min(static_cast<std::size_t>(gx), kGrid - 2);
      const double tx = gx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double* g = lattice.data() + c * kGrid * kGrid;
        const double top = g[y0 * kGrid + x0] * (1 - tx) + g[y0 * kGrid + x0 + 1] * tx;
        const double bot = g[(y0 + 1) * kGrid + x0] * (1 - tx) + g[(y0 + 1) * kGrid + x0 + 1] * tx;
        at(c, y, x) += top * (1 - ty) + bot * ty;
      }
    }
  }

  // Shapes with one-pixel anti-aliased edges.
  for (int s = 0; s < 6; ++s) {
    const bool disc = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, static_cast<double>(w)), cy = rng.uniform(0.0, static_cast<double>(h));
    const double hx = rng.uniform(0.05, 0.18) * scale, hy = rng.uniform(0.05, 0.18) * scale;
    std::array<double, 3> color{};
    for (double& c : color) c = rng.uniform();
    const double opacity = rng.uniform(0.6, 1.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const double dist = disc ? std::hypot(dx, dy) - hx : std::max(std::fabs(dx) - hx, std::fabs(dy) - hy);
        const double cover = std::clamp(0.5 - dist, 0.0, 1.0) * opacity;
        if (cover <= 0.0) continue;
        for (std::size_t c = 0; c < 3; ++c) at(c, y, x) = at(c, y, x) * (1.0 - cover) + color[c] * cover;
      }
  }

  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  return CleanImage{Tensor({3, h, w}, std::move(px)), "synth-" + std::to_string(seed)};
}

std::vector<Tensor> counterfactual_augment(const CleanImage& image, const ConfounderSet& set, std::uint64_t seed) {
  std::vector<Tensor> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(apply_distortion(image, set[i], derive_seed(seed, i)));
  return out;
}

std::vector<std::size_t> parallel_assignment(std::size_t batch, std::size_t n) {
  std::vector<std::size_t> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t count = batch / n + (i < batch % n ? 1 : 0);
    out.insert(out.end(), count, i);
  }
  return out;
}

std::vector<PatchPair> sample_batch(const std::vector<CleanImage>& images, const ConfounderSet& set,
                                    SamplingMode mode, std::size_t batch, std::size_t patch, std::uint64_t seed) {
  if (images.empty()) throw std::invalid_argument("sample_batch: no images");
  if (patch == 0) throw std::invalid_argument("sample_batch: patch must be positive");
  if (mode.kind == SamplingMode::Kind::kSerial && mode.spec_index >= set.size()) {
    throw std::invalid_argument("sample_batch: serial index " + std::to_string(mode.spec_index) +
                                " out of range for " + std::to_string(set.size()) + " confounders");
  }
  const std::vector<std::size_t> split =
      mode.kind == SamplingMode::Kind::kParallel ? parallel_assignment(batch, set.size()) : std::vector<std::size_t>{};

  std::vector<PatchPair> out;
  out.reserve(batch);
  for (std::size_t j = 0; j < batch; ++j) {
    const std::uint64_t pair_seed = derive_seed(seed, j);
    const CleanImage& img = images[Rng(derive_seed(pair_seed, 0)).below(images.size())];
    const std::size_t h = img.height(), w = img.width();
    if (patch > h || patch > w) {
      throw std::invalid_argument("sample_batch: patch " + std::to_string(patch) + " exceeds image " + img.source_id);
    }
    Rng crop(derive_seed(pair_seed, 1));
    const std::size_t y0 = crop.below(h - patch + 1);
    const std::size_t x0 = crop.below(w - patch + 1);

    std::size_t spec = 0;
    switch (mode.kind) {
      case SamplingMode::Kind::kSerial: spec = mode.spec_index; break;
      case SamplingMode::Kind::kParallel: spec = split[j]; break;
      case SamplingMode::Kind::kOuter: spec = Rng(derive_seed(pair_seed, 2)).below(set.size()); break;
    }

    std::vector<double> c(3 * patch * patch);
    const auto src = img.pixels.data();
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < patch; ++y)
        std::copy_n(src.data() + (ch * h + y0 + y) * w + x0, patch, c.data() + (ch * patch + y) * patch);
    Tensor clean({3, patch, patch}, std::move(c));
    Tensor distorted = apply_distortion(clean, set[spec], derive_seed(pair_seed, 3));
    out.push_back(PatchPair{std::move(distorted), std::move(clean), spec});
  }
  return out;
}

}  // namespace dil
