#include <cmath>

#include <omp.h>

#include "dil/autodiff.hpp"
#include "dil/hvp.hpp"
#include "dil/kernels.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace dil;
using dil::test::random_tensor;

TEST_CASE("kernels: OpenMP conv matches the serial reference bitwise") {
  Rng rng(11);
  for (const kernels::ConvDims d : {kernels::ConvDims{2, 3, 16, 10, 12, 3}, kernels::ConvDims{1, 16, 3, 7, 9, 3},
                                    kernels::ConvDims{3, 2, 5, 6, 6, 1}, kernels::ConvDims{1, 1, 1, 5, 5, 5}}) {
    std::vector<double> x(d.input_size()), w(d.weight_size()), b(d.out_channels), gy(d.output_size());
    for (auto* v : {&x, &w, &b, &gy})
      for (double& e : *v) e = rng.uniform(-1.0, 1.0);
    std::vector<double> y1(d.output_size()), y2(d.output_size());
    kernels::conv2d_forward(d, x, w, b, y1);
    kernels::reference::conv2d_forward(d, x, w, b, y2);
    CHECK(y1 == y2);

    std::vector<double> gx1(d.input_size()), gx2(d.input_size());
    kernels::conv2d_backward_input(d, gy, w, gx1);
    kernels::reference::conv2d_backward_input(d, gy, w, gx2);
    CHECK(gx1 == gx2);

    std::vector<double> gw1(d.weight_size()), gw2(d.weight_size()), gb1(d.out_channels), gb2(d.out_channels);
    kernels::conv2d_backward_weight(d, gy, x, gw1, gb1);
    kernels::reference::conv2d_backward_weight(d, gy, x, gw2, gb2);
    for (std::size_t i = 0; i < gw1.size(); ++i) CHECK(gw1[i] == doctest::Approx(gw2[i]).epsilon(1e-12));
    CHECK(gb1 == gb2);
  }
}

TEST_CASE("kernels: results do not depend on the thread count") {
  Rng rng(12);
  const kernels::ConvDims d{2, 5, 7, 11, 13, 3};
  std::vector<double> x(d.input_size()), w(d.weight_size()), b(d.out_channels), gy(d.output_size());
  for (auto* v : {&x, &w, &b, &gy})
    for (double& e : *v) e = rng.uniform(-1.0, 1.0);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<double> y(d.output_size()), gx(d.input_size()), gw(d.weight_size()), gb(d.out_channels);
    kernels::conv2d_forward(d, x, w, b, y);
    kernels::conv2d_backward_input(d, gy, w, gx);
    kernels::conv2d_backward_weight(d, gy, x, gw, gb);
    y.insert(y.end(), gx.begin(), gx.end());
    y.insert(y.end(), gw.begin(), gw.end());
    y.insert(y.end(), gb.begin(), gb.end());
    return y;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  CHECK(run(3) == one);
  CHECK(run(4) == one);
  omp_set_num_threads(saved);
}

TEST_CASE("kernels: reflect index") {
  CHECK(kernels::reflect_index(-1, 5) == 1);
  CHECK(kernels::reflect_index(-2, 5) == 2);
  CHECK(kernels::reflect_index(0, 5) == 0);
  CHECK(kernels::reflect_index(5, 5) == 3);
  CHECK(kernels::reflect_index(6, 5) == 2);
}

TEST_CASE("ops: relu and additive identity") {
  const Tensor r = relu(Tensor({3}, {-1, 0, 2}));
  CHECK(r.to_vector() == std::vector<double>{0, 0, 2});
  Rng rng(3);
  const Tensor x = random_tensor(rng, {2, 3});
  CHECK(bitwise_equal(add(x, Tensor::zeros({2, 3})), x));
}

TEST_CASE("ops: identity kernel restores the interior") {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {1, 1, 5, 5});
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  const Tensor w({1, 1, 3, 3}, k), b = Tensor::zeros({1});
  const Tensor valid = conv2d(x, w, b);
  REQUIRE(valid.shape() == Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(valid[i * 3 + j] == x[(i + 1) * 5 + j + 1]);
  CHECK(bitwise_equal(conv2d(pad_reflect(x, 1), w, b), x));
}

TEST_CASE("ops: shape errors") {
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})), ShapeError);
  CHECK_THROWS_AS(pad_reflect(Tensor::zeros({1, 1, 2, 2}), 2), ShapeError);
}

TEST_CASE("ops: tracked tensors cannot be reshaped") {
  Graph g;
  GraphScope scope(g);
  const Tensor x = g.leaf(Tensor({4}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(x.reshaped({2, 2}), std::logic_error);
  CHECK(x.detached().reshaped({2, 2}).shape() == Shape{2, 2});
  CHECK_THROWS_AS(Tensor::zeros({4}).reshaped({3}), ShapeError);
}

TEST_CASE("autodiff: non-scalar loss is rejected") {
  Graph g;
  GraphScope scope(g);
  const Tensor x = g.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS(g.backward(square(x)));
}

TEST_CASE("op names round-trip") {
  for (OpTag t : {OpTag::kConv2d, OpTag::kRelu, OpTag::kPadReflect, OpTag::kClamp, OpTag::kSquare})
    CHECK(parse_op_tag(op_name(t)) == t);
  CHECK_THROWS(parse_op_tag("matmul"));
}

TEST_CASE("autodiff: sum of squares") {
  Graph g;
  GraphScope scope(g);
  const Tensor x = g.leaf(Tensor({2}, {1, 2}));
  const Gradients grads = g.backward(sum(square(x)));
  CHECK(grads.at(x).to_vector() == std::vector<double>{2, 4});
}

TEST_CASE("autodiff: abs subgradient at zero is zero") {
  Graph g;
  GraphScope scope(g);
  const Tensor x = g.leaf(Tensor({3}, {0.5, -1.0, 2.0}));
  const Tensor y({3}, {0.5, -1.0, 2.0});
  const Gradients grads = g.backward(mean(abs(sub(x, y))));
  CHECK(grads.at(x).to_vector() == std::vector<double>{0, 0, 0});
}

TEST_CASE("autodiff: unused leaf gets zeros, foreign graph is untracked") {
  Graph g;
  GraphScope scope(g);
  const Tensor a = g.leaf(Tensor({2}, {1, 2}));
  const Tensor b = g.leaf(Tensor({2}, {3, 4}));
  const Gradients grads = g.backward(sum(a));
  CHECK(grads.at(b).to_vector() == std::vector<double>{0, 0});
  Graph other;
  CHECK_FALSE(other.owns(a));
}

TEST_CASE("autodiff: two-layer conv net against central differences") {
  Rng rng(21);
  const Tensor x = random_tensor(rng, {1, 2, 8, 8});
  const Tensor y = random_tensor(rng, {1, 2, 8, 8});
  const ParamVector theta = ParamVector::flatten(
      {"w1", "b1", "w2", "b2"}, {random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5), random_tensor(rng, {3}, 0.05, 0.2),
                                 random_tensor(rng, {2, 3, 3, 3}, -0.5, 0.5), random_tensor(rng, {2}, -0.1, 0.1)});
  // Smooth loss so the difference quotient is accurate everywhere.
  const Objective f = [&](const std::vector<Tensor>& p) {
    Tensor h = relu(conv2d(pad_reflect(x, 1), p[0], p[1]));
    h = conv2d(pad_reflect(h, 1), p[2], p[3]);
    return mean(square(sub(h, y)));
  };
  const ValueGrad vg = value_and_grad(f, theta);
  double max_err = 0.0, max_fd = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    ParamVector a = theta, b = theta;
    a[j] += 1e-5;
    b[j] -= 1e-5;
    const double fd = (evaluate(f, a) - evaluate(f, b)) / (a[j] - b[j]);
    max_err = std::max(max_err, std::abs(fd - vg.grad[j]));
    max_fd = std::max(max_fd, std::abs(fd));
  }
  CHECK(max_err / max_fd <= 1e-6);
}

TEST_CASE("param vector: flatten / unflatten round-trip and arithmetic") {
  Rng rng(4);
  const std::vector<Tensor> ts{random_tensor(rng, {2, 3}), random_tensor(rng, {4})};
  const ParamVector p = ParamVector::flatten({"a", "b"}, ts);
  CHECK(p.size() == 10);
  CHECK(p.segments()[1].offset == 6);
  const auto back = p.unflatten();
  CHECK(bitwise_equal(back[0], ts[0]));
  CHECK(bitwise_equal(back[1], ts[1]));
  const ParamVector q = axpy(p, -1.0, p);
  CHECK(norm_inf(q) == 0.0);
  CHECK(dot(p, p) == doctest::Approx(norm2(p) * norm2(p)));
  CHECK_THROWS(ParamVector::with_values(p, std::vector<double>(3)));
  ParamVector bad = p;
  bad[2] = std::nan("");
  CHECK_THROWS_AS(require_finite(bad, "theta"), NonFiniteError);
}

TEST_CASE("hvp: identity Hessian") {
  const ParamVector theta = ParamVector::flatten({"t"}, {Tensor({4}, {0.3, -1.0, 2.0, 0.5})});
  const Objective f = [](const std::vector<Tensor>& p) { return mul_scalar(sum(square(p[0])), 0.5); };
  const ParamVector v = ParamVector::with_values(theta, {1.0, 2.0, -3.0, 0.25});
  const ParamVector hv = hvp(f, theta, v);
  for (std::size_t i = 0; i < 4; ++i) CHECK(hv[i] == doctest::Approx(v[i]).epsilon(1e-8));
  CHECK(norm_inf(hvp(f, theta, ParamVector::zeros_like(theta))) == 0.0);
  const ParamVector wrong = ParamVector::flatten({"t"}, {Tensor({3}, {1, 2, 3})});
  CHECK_THROWS(hvp(f, theta, wrong));
}

TEST_CASE("hvp: explicit symmetric matrix") {
  // A = B^T diag(d) B, evaluated as sum_k d_k (B theta)_k^2 / 2 with 1x1 convolutions.
  const std::vector<double> bm{1.0, 0.5, -0.2, 0.3, 2.0, 0.1, -0.7, 0.4, 1.5};
  const std::vector<double> d{1.0, 2.0, -0.5};
  std::vector<double> a(9, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) a[i * 3 + j] += bm[k * 3 + i] * d[k] * bm[k * 3 + j];
  const Tensor bw({3, 3, 1, 1}, bm), dw({1, 3, 1, 1}, d);
  const Objective f = [&](const std::vector<Tensor>& p) {
    const Tensor y = conv2d(p[0], bw, Tensor::zeros({3}));
    return mul_scalar(sum(conv2d(square(y), dw, Tensor::zeros({1}))), 0.5);
  };
  const ParamVector theta = ParamVector::flatten({"t"}, {Tensor({1, 3, 1, 1}, {0.2, -0.4, 0.9})});
  const ParamVector e1 = ParamVector::with_values(theta, {1.0, 0.0, 0.0});
  for (HvpMethod m : {HvpMethod::kFiniteDiff, HvpMethod::kBruteForce}) {
    HvpOptions o;
    o.method = m;
    const ParamVector hv = hvp(f, theta, e1, o);
    for (std::size_t i = 0; i < 3; ++i) CHECK(hv[i] == doctest::Approx(a[i * 3]).epsilon(1e-7));
  }
}
