#include "dil/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

namespace dil::kernels {

namespace {

// Two doubles; GCC/Clang vector extension, lowered to whatever the target has.
using Lane2 = double __attribute__((vector_size(16)));

inline Lane2 load2(const double* p) {
  Lane2 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

// Dot product with four interleaved partial sums, combined in a fixed order.
double dot4(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (len == 1) return 0;
  const std::ptrdiff_t period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < len ? i : period - i);
}

// The fast kernels work on "wide" rows: an output plane is computed with the
// input row stride in_w, so output(oy, ox) sits at oy * in_w + ox and every
// kernel tap becomes a contiguous sweep over the whole plane. The last
// kernel - 1 columns of each wide row are scratch and discarded. For each
// output element the taps are still accumulated in (channel, ky, kx) order,
// matching the reference loops exactly.

namespace {

// acc[i] += sum over taps of w[t] * x[i + off[t]], taps applied in order.
template <std::size_t Taps>
void fused_taps(double* acc, const double* x, const double* w, const std::size_t* off, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double a = acc[i];
    for (std::size_t t = 0; t < Taps; ++t) a += w[t] * x[i + off[t]];
    acc[i] = a;
  }
}

void apply_taps(double* acc, const double* x, const double* w, const std::size_t* off, std::size_t taps,
                std::size_t n) {
  switch (taps) {
    case 1: fused_taps<1>(acc, x, w, off, n); return;
    case 9: fused_taps<9>(acc, x, w, off, n); return;
    case 25: fused_taps<25>(acc, x, w, off, n); return;
    default:
      for (std::size_t t = 0; t < taps; ++t) {
        const double wv = w[t];
        const double* xs = x + off[t];
        for (std::size_t i = 0; i < n; ++i) acc[i] += wv * xs[i];
      }
  }
}

// out[t] += sum_i g[i] * x[i + off[t]] for every tap. Each sum is kept as two
// interleaved partials (even and odd i) added at the end.
template <std::size_t Taps>
void fused_dots(const double* g, const double* x, const std::size_t* off, std::size_t n, double* out) {
  Lane2 acc[Taps];
  for (auto& a : acc) a = Lane2{0.0, 0.0};
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const Lane2 gv = load2(g + i);
    for (std::size_t t = 0; t < Taps; ++t) acc[t] += gv * load2(x + i + off[t]);
  }
  for (std::size_t t = 0; t < Taps; ++t) {
    double even = acc[t][0];
    if (i < n) even += g[i] * x[i + off[t]];
    out[t] += even + acc[t][1];
  }
}

void apply_dots(const double* g, const double* x, const std::size_t* off, std::size_t taps, std::size_t n,
                double* out) {
  switch (taps) {
    case 1: fused_dots<1>(g, x, off, n, out); return;
    case 9: fused_dots<9>(g, x, off, n, out); return;
    case 25: fused_dots<25>(g, x, off, n, out); return;
    default:
      for (std::size_t t = 0; t < taps; ++t) out[t] += dot4(g, x + off[t], n);
  }
}

std::vector<std::size_t> tap_offsets(std::size_t k, std::size_t row) {
  std::vector<std::size_t> off;
  for (std::size_t ky = 0; ky < k; ++ky)
    for (std::size_t kx = 0; kx < k; ++kx) off.push_back(ky * row + kx);
  return off;
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel, iw = d.in_w, taps = k * k;
  const std::size_t span_len = (oh - 1) * iw + ow;
  const std::vector<std::size_t> off = tap_offsets(k, iw);
  const auto tasks = static_cast<std::int64_t>(d.batch * d.out_channels);
#pragma omp parallel
  {
    std::vector<double> wide(oh * iw);
#pragma omp for schedule(static)
    for (std::int64_t task = 0; task < tasks; ++task) {
      const std::size_t bi = static_cast<std::size_t>(task) / d.out_channels;
      const std::size_t o = static_cast<std::size_t>(task) % d.out_channels;
      double* acc = wide.data();
      std::fill(acc, acc + span_len, b[o]);
      for (std::size_t c = 0; c < d.in_channels; ++c) {
        const double* xp = x.data() + (bi * d.in_channels + c) * d.in_h * iw;
        const double* wp = w.data() + (o * d.in_channels + c) * taps;
        apply_taps(acc, xp, wp, off.data(), taps, span_len);
      }
      double* yp = y.data() + (bi * d.out_channels + o) * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) std::copy(acc + oy * iw, acc + oy * iw + ow, yp + oy * ow);
    }
  }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel, iw = d.in_w, taps = k * k;
  // Output gradients sit on wide rows behind a zero margin, so input element j
  // gathers tap (ky, kx) from g[margin + j - ky * iw - kx] without bounds checks.
  const std::size_t margin = (k - 1) * iw + (k - 1);
  const std::size_t plane = margin + oh * iw + margin;
  const std::size_t in_plane = d.in_h * iw;
  std::vector<std::size_t> off(taps);
  for (std::size_t t = 0; t < taps; ++t) off[t] = margin - ((t / k) * iw + t % k);
  const auto tasks = static_cast<std::int64_t>(d.batch * d.in_channels);
#pragma omp parallel
  {
    std::vector<double> wide(d.out_channels * plane, 0.0);
    std::vector<double> wt(taps);
    std::size_t loaded = static_cast<std::size_t>(-1);
#pragma omp for schedule(static)
    for (std::int64_t task = 0; task < tasks; ++task) {
      const std::size_t bi = static_cast<std::size_t>(task) / d.in_channels;
      const std::size_t c = static_cast<std::size_t>(task) % d.in_channels;
      if (loaded != bi) {
        for (std::size_t o = 0; o < d.out_channels; ++o) {
          const double* src = gy.data() + (bi * d.out_channels + o) * oh * ow;
          double* dst = wide.data() + o * plane + margin;
          for (std::size_t oy = 0; oy < oh; ++oy) std::copy(src + oy * ow, src + (oy + 1) * ow, dst + oy * iw);
        }
        loaded = bi;
      }
      double* gp = gx.data() + (bi * d.in_channels + c) * in_plane;
      std::fill(gp, gp + in_plane, 0.0);
      for (std::size_t o = 0; o < d.out_channels; ++o) {
        const double* wp = w.data() + (o * d.in_channels + c) * taps;
        std::copy(wp, wp + taps, wt.begin());
        apply_taps(gp, wide.data() + o * plane, wt.data(), off.data(), taps, in_plane);
      }
    }
  }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel, iw = d.in_w, taps = k * k;
  const std::size_t span_len = (oh - 1) * iw + ow;
  const std::vector<std::size_t> off = tap_offsets(k, iw);
  const auto outs = static_cast<std::int64_t>(d.out_channels);
#pragma omp parallel
  {
    std::vector<double> wide(oh * iw, 0.0);
#pragma omp for schedule(static)
    for (std::int64_t oi = 0; oi < outs; ++oi) {
      const auto o = static_cast<std::size_t>(oi);
      double bias_acc = 0.0;
      for (std::size_t bi = 0; bi < d.batch; ++bi) {
        const double* gyp = gy.data() + (bi * d.out_channels + o) * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) bias_acc += gyp[i];
      }
      gb[o] = bias_acc;
      double* gwp = gw.data() + o * d.in_channels * taps;
      std::fill(gwp, gwp + d.in_channels * taps, 0.0);
      for (std::size_t bi = 0; bi < d.batch; ++bi) {
        const double* src = gy.data() + (bi * d.out_channels + o) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) std::copy(src + oy * ow, src + (oy + 1) * ow, wide.data() + oy * iw);
        for (std::size_t c = 0; c < d.in_channels; ++c) {
          const double* xp = x.data() + (bi * d.in_channels + c) * d.in_h * iw;
          apply_dots(wide.data(), xp, off.data(), taps, span_len, gwp + c * taps);
        }
      }
    }
  }
}

void pad_reflect_forward(std::size_t planes, std::size_t h, std::size_t w, std::size_t pad,
                         std::span<const double> x, std::span<double> y) {
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  const auto n = static_cast<std::int64_t>(planes);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = y.data() + static_cast<std::size_t>(p) * ph * pw;
    for (std::size_t py = 0; py < ph; ++py) {
      const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(py) - static_cast<std::ptrdiff_t>(pad), h);
      const double* row = src + sy * w;
      double* out = dst + py * pw;
      for (std::size_t px = 0; px < pad; ++px) out[px] = row[reflect_index(static_cast<std::ptrdiff_t>(px) - static_cast<std::ptrdiff_t>(pad), w)];
      std::copy(row, row + w, out + pad);
      for (std::size_t px = pad + w; px < pw; ++px) out[px] = row[reflect_index(static_cast<std::ptrdiff_t>(px) - static_cast<std::ptrdiff_t>(pad), w)];
    }
  }
}

void pad_reflect_backward(std::size_t planes, std::size_t h, std::size_t w, std::size_t pad,
                          std::span<const double> gy, std::span<double> gx) {
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  const auto n = static_cast<std::int64_t>(planes);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n; ++p) {
    const double* src = gy.data() + static_cast<std::size_t>(p) * ph * pw;
    double* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
    std::fill(dst, dst + h * w, 0.0);
    for (std::size_t py = 0; py < ph; ++py) {
      const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(py) - static_cast<std::ptrdiff_t>(pad), h);
      for (std::size_t px = 0; px < pw; ++px) {
        const std::size_t sx = reflect_index(static_cast<std::ptrdiff_t>(px) - static_cast<std::ptrdiff_t>(pad), w);
        dst[sy * w + sx] += src[py * pw + px];
      }
    }
  }
}

namespace reference {

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel;
  for (std::size_t bi = 0; bi < d.batch; ++bi)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = b[o];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx)
                acc += w[((o * d.in_channels + c) * k + ky) * k + kx] *
                       x[((bi * d.in_channels + c) * d.in_h + oy + ky) * d.in_w + ox + kx];
          y[((bi * d.out_channels + o) * oh + oy) * ow + ox] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel;
  for (std::size_t bi = 0; bi < d.batch; ++bi)
    for (std::size_t c = 0; c < d.in_channels; ++c)
      for (std::size_t iy = 0; iy < d.in_h; ++iy)
        for (std::size_t ix = 0; ix < d.in_w; ++ix) {
          double acc = 0.0;
          for (std::size_t o = 0; o < d.out_channels; ++o)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                if (iy < ky || ix < kx) continue;
                const std::size_t oy = iy - ky, ox = ix - kx;
                if (oy >= oh || ox >= ow) continue;
                acc += w[((o * d.in_channels + c) * k + ky) * k + kx] *
                       gy[((bi * d.out_channels + o) * oh + oy) * ow + ox];
              }
          gx[((bi * d.in_channels + c) * d.in_h + iy) * d.in_w + ix] = acc;
        }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel;
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    double acc = 0.0;
    for (std::size_t bi = 0; bi < d.batch; ++bi)
      for (std::size_t i = 0; i < oh * ow; ++i) acc += gy[(bi * d.out_channels + o) * oh * ow + i];
    gb[o] = acc;
    for (std::size_t c = 0; c < d.in_channels; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double s = 0.0;
          for (std::size_t bi = 0; bi < d.batch; ++bi)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox)
                s += gy[((bi * d.out_channels + o) * oh + oy) * ow + ox] *
                     x[((bi * d.in_channels + c) * d.in_h + oy + ky) * d.in_w + ox + kx];
          gw[((o * d.in_channels + c) * k + ky) * k + kx] = s;
        }
  }
}

}  // namespace reference

}  // namespace dil::kernels
