#include <benchmark/benchmark.h>

#include <omp.h>

#include <vector>

#include "dil/kernels.hpp"
#include "dil/rng.hpp"

using namespace dil;

namespace {

// Default network geometry: 16 -> 16 channels, 3x3, 32x32 patches padded to 34.
kernels::ConvDims dims(const benchmark::State& st) {
  return {static_cast<std::size_t>(st.range(0)), 16, 16, 34, 34, 3};
}

struct Buffers {
  std::vector<double> x, w, b, y, gy, gx, gw, gb;
  explicit Buffers(const kernels::ConvDims& d)
      : x(d.input_size()), w(d.weight_size()), b(d.out_channels), y(d.output_size()), gy(d.output_size()),
        gx(d.input_size()), gw(d.weight_size()), gb(d.out_channels) {
    Rng rng(1);
    for (auto* v : {&x, &w, &b, &gy})
      for (double& e : *v) e = rng.uniform(-1.0, 1.0);
  }
};

template <bool Reference>
void forward(benchmark::State& st) {
  const auto d = dims(st);
  Buffers buf(d);
  for (auto _ : st) {
    if constexpr (Reference) kernels::reference::conv2d_forward(d, buf.x, buf.w, buf.b, buf.y);
    else kernels::conv2d_forward(d, buf.x, buf.w, buf.b, buf.y);
    benchmark::DoNotOptimize(buf.y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(d.output_size() * d.in_channels * 9));
  st.counters["threads"] = Reference ? 1 : omp_get_max_threads();
}

template <bool Reference>
void backward(benchmark::State& st) {
  const auto d = dims(st);
  Buffers buf(d);
  for (auto _ : st) {
    if constexpr (Reference) {
      kernels::reference::conv2d_backward_input(d, buf.gy, buf.w, buf.gx);
      kernels::reference::conv2d_backward_weight(d, buf.gy, buf.x, buf.gw, buf.gb);
    } else {
      kernels::conv2d_backward_input(d, buf.gy, buf.w, buf.gx);
      kernels::conv2d_backward_weight(d, buf.gy, buf.x, buf.gw, buf.gb);
    }
    benchmark::DoNotOptimize(buf.gx.data());
    benchmark::DoNotOptimize(buf.gw.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(2 * d.output_size() * d.in_channels * 9));
  st.counters["threads"] = Reference ? 1 : omp_get_max_threads();
}

}  // namespace

BENCHMARK(forward<true>)->Name("conv_forward/reference")->Arg(1)->Arg(8);
BENCHMARK(forward<false>)->Name("conv_forward/openmp")->Arg(1)->Arg(8);
BENCHMARK(backward<true>)->Name("conv_backward/reference")->Arg(1)->Arg(8);
BENCHMARK(backward<false>)->Name("conv_backward/openmp")->Arg(1)->Arg(8);

BENCHMARK_MAIN();
