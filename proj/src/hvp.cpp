#include "dil/hvp.hpp"

#include <cmath>

namespace dil {

ValueGrad value_and_grad(const Objective& f, const ParamVector& theta) {
  Graph graph;
  GraphScope scope(graph);
  const std::vector<Tensor> leaves = theta.as_leaves(graph);
  const Tensor loss = f(leaves);
  if (!graph.owns(loss)) {
    // Objective does not depend on the parameters.
    return {loss.item(), ParamVector::zeros_like(theta)};
  }
  const Gradients grads = graph.backward(loss);
  return {loss.item(), theta.gather(grads, leaves)};
}

double evaluate(const Objective& f, const ParamVector& theta) { return f(theta.unflatten()).item(); }

double default_hvp_radius(const ParamVector& v) { return 1e-4 / (norm2(v) + 1e-12); }

std::vector<double> brute_force_hessian(const Objective& f, const ParamVector& theta, double step) {
  const std::size_t n = theta.size();
  std::vector<double> h(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    ParamVector plus = theta, minus = theta;
    plus[j] += step;
    minus[j] -= step;
    const ParamVector gp = value_and_grad(f, plus).grad;
    const ParamVector gm = value_and_grad(f, minus).grad;
    const double width = plus[j] - minus[j];
    for (std::size_t i = 0; i < n; ++i) h[i * n + j] = (gp[i] - gm[i]) / width;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = 0.5 * (h[i * n + j] + h[j * n + i]);
      h[i * n + j] = s;
      h[j * n + i] = s;
    }
  }
  return h;
}

ParamVector hvp(const Objective& f, const ParamVector& theta, const ParamVector& v, const HvpOptions& options) {
  if (v.size() != theta.size()) {
    throw std::invalid_argument("hvp: direction length " + std::to_string(v.size()) + " does not match parameters " +
                                std::to_string(theta.size()));
  }
  ParamVector out = ParamVector::zeros_like(theta);
  if (options.method == HvpMethod::kFiniteDiff && norm_inf(v) == 0.0) return out;
  if (options.method == HvpMethod::kFiniteDiff) {
    const double r = options.radius.value_or(default_hvp_radius(v));
    const ParamVector gp = value_and_grad(f, axpy(theta, r, v)).grad;
    const ParamVector gm = value_and_grad(f, axpy(theta, -r, v)).grad;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * r);
  } else {
    const std::size_t n = theta.size();
    const std::vector<double> h = brute_force_hessian(f, theta, options.column_step);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += h[i * n + j] * v[j];
      out[i] = acc;
    }
  }
  require_finite(out, "Hessian-vector product");
  return out;
}

}  // namespace dil
