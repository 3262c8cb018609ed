#include "dil/optim.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "dil/rng.hpp"

namespace dil {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------- losses

std::string loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::kL1: return "l1";
    case LossKind::kCharbonnier: return "charbonnier";
    case LossKind::kL2: return "l2";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "l1") return LossKind::kL1;
  if (name == "charbonnier") return LossKind::kCharbonnier;
  if (name == "l2") return LossKind::kL2;
  throw std::invalid_argument("unknown loss '" + name + "' (expected l1, charbonnier or l2)");
}

Tensor loss(const Tensor& pred, const Tensor& target, const LossConfig& config) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("loss: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  }
  const Tensor r = sub(pred, target);
  if (config.kind == LossKind::kL1) return mean(abs(r));
  if (config.kind == LossKind::kL2) return mean(square(r));
  if (!(config.epsilon > 0.0)) throw std::invalid_argument("charbonnier epsilon must be > 0");
  const Tensor eps2 = Tensor::full(r.shape(), config.epsilon * config.epsilon);
  return mean(sqrt(add(square(r), eps2)));
}

// ---------------------------------------------------------------- Adam

AdamState AdamState::for_params(const ParamVector& theta, double lr, double beta1, double beta2) {
  AdamState s;
  s.m = ParamVector::zeros_like(theta);
  s.v = ParamVector::zeros_like(theta);
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  return s;
}

ParamVector adam_step(AdamState& state, const ParamVector& theta, const ParamVector& grad,
                      std::optional<double> lr_override) {
  if (grad.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state lengths differ");
  }
  require_finite(grad, "Adam gradient");
  const double lr = lr_override.value_or(state.lr);
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  ParamVector out = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    out[i] = theta[i] - lr * mhat / (std::sqrt(vhat) + state.eps);
  }
  return out;
}

// ---------------------------------------------------------------- config

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kErm: return "erm";
    case Variant::kDilSf: return "dil_sf";
    case Variant::kDilPf: return "dil_pf";
    case Variant::kDilSs: return "dil_ss";
    case Variant::kDilPs: return "dil_ps";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kErm, Variant::kDilSf, Variant::kDilPf, Variant::kDilSs, Variant::kDilPs})
    if (variant_name(v) == name) return v;
  throw std::invalid_argument("unknown variant '" + name + "' (expected erm, dil_sf, dil_pf, dil_ss or dil_ps)");
}

bool is_first_order(Variant v) { return v == Variant::kDilSf || v == Variant::kDilPf; }

void TrainConfig::validate(std::size_t n_confounders) const {
  if (n_confounders == 0) throw std::invalid_argument("train: confounder set is empty");
  if (variant != Variant::kErm && !(alpha > 0.0)) {
    throw std::invalid_argument("train: alpha must be > 0 for " + variant_name(variant));
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("train: alpha must be finite and >= 0");
  if (!std::isfinite(effective_beta())) throw std::invalid_argument("train: beta must be finite");
  if (batch == 0 || patch == 0) throw std::invalid_argument("train: batch and patch must be positive");
  if (variant == Variant::kDilPf && inner_steps_pf == 0) throw std::invalid_argument("train: inner_steps_pf must be >= 1");
  if (loss.kind == LossKind::kCharbonnier && !(loss.epsilon > 0.0 && std::isfinite(loss.epsilon)))
    throw std::invalid_argument("train: charbonnier epsilon must be > 0");
  for (double b : {adam_beta1, adam_beta2, virtual_beta2})
    if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("train: Adam decay rates must lie in [0, 1)");
}

double TrainConfig::effective_beta() const { return beta.value_or(is_first_order(variant) ? 1.0 : 1e-3); }

double TrainConfig::lr_factor(std::size_t iteration) const {
  double f = 1.0;
  if (iteration >= iters / 2) f = 0.5;
  if (iteration >= (3 * iters) / 4) f = 0.25;
  return f;
}

TrainerState TrainerState::initial(const ParamVector& theta, const TrainConfig& config) {
  TrainerState s;
  s.theta = theta;
  s.outer = AdamState::for_params(theta, config.effective_beta(), config.adam_beta1, config.adam_beta2);
  s.virt = AdamState::for_params(theta, config.alpha, 0.0, config.virtual_beta2);
  return s;
}

namespace {

void append_adam_header(std::string& out, const std::string& name, const AdamState& a) {
  out += "adam " + name + " " + std::to_string(a.t) + " " + format_double(a.beta1) + " " + format_double(a.beta2) +
         " " + format_double(a.eps) + " " + format_double(a.lr) + "\n";
}

std::string next_line(const std::string& in, std::size_t& pos) {
  const std::size_t end = in.find('\n', pos);
  if (end == std::string::npos) throw std::runtime_error("trainer state: truncated header");
  std::string line = in.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

AdamState parse_adam_header(const std::string& line, const std::string& name, const ParamVector& layout) {
  std::istringstream is(line);
  std::string tag, got;
  AdamState a = AdamState::for_params(layout, 0.0, 0.0);
  std::string b1, b2, eps, lr;
  is >> tag >> got >> a.t >> b1 >> b2 >> eps >> lr;
  if (!is || tag != "adam" || got != name) throw std::runtime_error("trainer state: malformed '" + name + "' header");
  a.beta1 = std::stod(b1);
  a.beta2 = std::stod(b2);
  a.eps = std::stod(eps);
  a.lr = std::stod(lr);
  return a;
}

}  // namespace

std::string encode_trainer_state(const TrainerState& s) {
  std::string out = "DILOPT v1\n";
  out += "iteration " + std::to_string(s.iteration) + " params " + std::to_string(s.theta.size()) + "\n";
  append_adam_header(out, "outer", s.outer);
  append_adam_header(out, "virtual", s.virt);
  for (const ParamVector* p : {&s.theta, &s.outer.m, &s.outer.v, &s.virt.m, &s.virt.v}) append_le_doubles(out, p->values());
  return out;
}

TrainerState decode_trainer_state(const std::string& bytes, const ParamVector& layout) {
  std::size_t pos = 0;
  if (next_line(bytes, pos) != "DILOPT v1") throw std::runtime_error("trainer state: missing 'DILOPT v1' header");
  TrainerState s;
  {
    std::istringstream is(next_line(bytes, pos));
    std::string t1, t2;
    std::size_t count = 0;
    is >> t1 >> s.iteration >> t2 >> count;
    if (!is || t1 != "iteration" || t2 != "params") throw std::runtime_error("trainer state: malformed iteration line");
    if (count != layout.size()) {
      throw std::runtime_error("trainer state holds " + std::to_string(count) + " parameters, network has " +
                               std::to_string(layout.size()));
    }
  }
  s.outer = parse_adam_header(next_line(bytes, pos), "outer", layout);
  s.virt = parse_adam_header(next_line(bytes, pos), "virtual", layout);
  for (ParamVector* p : {&s.theta, &s.outer.m, &s.outer.v, &s.virt.m, &s.virt.v}) {
    *p = ParamVector::with_values(layout, read_le_doubles(bytes, pos, layout.size()));
  }
  if (pos != bytes.size()) throw std::runtime_error("trainer state: trailing bytes");
  return s;
}

// ---------------------------------------------------------------- objectives

BatchTensors stack_batch(const std::vector<PatchPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("empty batch");
  const Shape one = pairs.front().clean.shape();
  const std::size_t n = shape_size(one);
  std::vector<double> d(pairs.size() * n), c(pairs.size() * n);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].clean.shape() != one || pairs[i].distorted.shape() != one) throw ShapeError("batch pairs differ in shape");
    std::copy_n(pairs[i].distorted.data().data(), n, d.begin() + static_cast<std::ptrdiff_t>(i * n));
    std::copy_n(pairs[i].clean.data().data(), n, c.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  Shape s{pairs.size()};
  s.insert(s.end(), one.begin(), one.end());
  return {Tensor(s, std::move(d)), Tensor(s, std::move(c))};
}

Objective batch_objective(const RestorationNet& net, const std::vector<PatchPair>& pairs, const LossConfig& config) {
  BatchTensors b = stack_batch(pairs);
  return [&net, b = std::move(b), config](const std::vector<Tensor>& params) {
    return loss(net.forward(b.distorted, params), b.clean, config);
  };
}

Objective grouped_objective(const RestorationNet& net, const std::vector<PatchPair>& pairs, std::size_t n,
                            const LossConfig& config, std::vector<double>* group_losses) {
  if (pairs.empty()) throw std::invalid_argument("empty batch");
  std::vector<std::vector<PatchPair>> groups(n);
  for (const PatchPair& p : pairs) {
    if (p.spec_index >= n) throw std::invalid_argument("pair confounder index out of range");
    groups[p.spec_index].push_back(p);
  }
  std::vector<std::pair<std::size_t, BatchTensors>> batches;
  for (std::size_t i = 0; i < n; ++i)
    if (!groups[i].empty()) batches.emplace_back(i, stack_batch(groups[i]));
  return [&net, batches = std::move(batches), n, config, group_losses](const std::vector<Tensor>& params) {
    if (group_losses) group_losses->assign(n, std::numeric_limits<double>::quiet_NaN());
    Tensor total;
    for (std::size_t k = 0; k < batches.size(); ++k) {
      const auto& [i, b] = batches[k];
      Tensor l = loss(net.forward(b.distorted, params), b.clean, config);
      if (group_losses) (*group_losses)[i] = l.item();
      total = k == 0 ? l : add(total, l);
    }
    return mul_scalar(total, 1.0 / static_cast<double>(batches.size()));
  };
}

ParamVector virtual_update(const ParamVector& theta, const Objective& inner, double alpha, VirtualMode mode,
                           AdamState* adam_state, double* inner_value) {
  const ValueGrad vg = value_and_grad(inner, theta);
  if (inner_value) *inner_value = vg.value;
  if (mode == VirtualMode::kAdam) {
    if (!adam_state) throw std::invalid_argument("virtual_update: adam mode needs a state");
    return adam_step(*adam_state, theta, vg.grad, alpha);
  }
  require_finite(vg.grad, "inner gradient");
  if (alpha == 0.0) return theta;
  return axpy(theta, -alpha, vg.grad);
}

MetaGradient second_order_gradient(const Objective& inner, const Objective& outer, const ParamVector& theta,
                                   double alpha, const HvpOptions& hvp_options, const ValueGrad* inner_at_theta) {
  const ValueGrad vi = inner_at_theta ? *inner_at_theta : value_and_grad(inner, theta);
  require_finite(vi.grad, "inner gradient");
  const ParamVector phi = alpha == 0.0 ? theta : axpy(theta, -alpha, vi.grad);
  const ValueGrad vo = value_and_grad(outer, phi);
  require_finite(vo.grad, "outer gradient");
  const ParamVector hu = hvp(inner, theta, vo.grad, hvp_options);
  MetaGradient mg{axpy(vo.grad, -alpha, hu), vo.value, vi.value};
  require_finite(mg.grad, "meta-gradient");
  return mg;
}

// ---------------------------------------------------------------- steps

std::uint64_t batch_seed(const TrainConfig& config, std::size_t iteration, std::uint64_t role) {
  return derive_seed(config.seed, {static_cast<std::uint64_t>(iteration), role});
}

namespace {

std::vector<PatchPair> draw(const StepContext& ctx, const TrainerState& s, SamplingMode mode, std::size_t batch,
                            std::uint64_t role) {
  return sample_batch(ctx.images, ctx.set, mode, batch, ctx.config.patch, batch_seed(ctx.config, s.iteration, role));
}

void outer_adam(const StepContext& ctx, TrainerState& s, const ParamVector& g, StepReport& r) {
  const double lr = ctx.config.effective_beta() * ctx.config.lr_factor(s.iteration);
  s.theta = adam_step(s.outer, s.theta, g, lr);
  r.lr = lr;
  r.grad_norm = norm2(g);
}

void reptile_update(const StepContext& ctx, TrainerState& s, const ParamVector& adapted, StepReport& r) {
  const double beta = ctx.config.effective_beta() * ctx.config.lr_factor(s.iteration);
  const ParamVector delta = axpy(adapted, -1.0, s.theta);
  require_finite(delta, "virtual update");
  s.theta = axpy(s.theta, beta, delta);
  r.lr = beta;
  r.grad_norm = norm2(delta);
}

}  // namespace

StepReport erm_step(const StepContext& ctx, TrainerState& s) {
  StepReport r{s.iteration, 0.0, {}, 0.0, 0.0};
  const auto pairs = draw(ctx, s, SamplingMode::outer(), ctx.config.batch, kOuterRole);
  const ValueGrad vg = value_and_grad(batch_objective(ctx.net, pairs, ctx.config.loss), s.theta);
  r.outer_loss = vg.value;
  outer_adam(ctx, s, vg.grad, r);
  return r;
}

StepReport dil_ps_step(const StepContext& ctx, TrainerState& s) {
  StepReport r{s.iteration, 0.0, {}, 0.0, 0.0};
  const auto outer_pairs = draw(ctx, s, SamplingMode::outer(), ctx.config.batch, kOuterRole);
  const auto inner_pairs = draw(ctx, s, SamplingMode::parallel(), ctx.config.batch, kInnerRole);
  const Objective outer = batch_objective(ctx.net, outer_pairs, ctx.config.loss);
  std::vector<double> groups;
  const Objective inner = grouped_objective(ctx.net, inner_pairs, ctx.set.size(), ctx.config.loss, &groups);
  const ValueGrad vi = value_and_grad(inner, s.theta);
  r.per_confounder_inner_loss = groups;
  const double alpha = ctx.config.alpha * ctx.config.lr_factor(s.iteration);
  const MetaGradient mg = second_order_gradient(inner, outer, s.theta, alpha, {}, &vi);
  r.outer_loss = mg.outer_loss;
  outer_adam(ctx, s, mg.grad, r);
  return r;
}

StepReport dil_ss_step(const StepContext& ctx, TrainerState& s) {
  StepReport r{s.iteration, 0.0, {}, 0.0, 0.0};
  const auto outer_pairs = draw(ctx, s, SamplingMode::outer(), ctx.config.batch, kOuterRole);
  const Objective outer = batch_objective(ctx.net, outer_pairs, ctx.config.loss);
  const double alpha = ctx.config.alpha * ctx.config.lr_factor(s.iteration);
  const std::size_t n = ctx.set.size();
  ParamVector total;
  double outer_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto pairs = draw(ctx, s, SamplingMode::serial(i), ctx.config.effective_serial_batch(), kInnerRole + i);
    const MetaGradient mg = second_order_gradient(batch_objective(ctx.net, pairs, ctx.config.loss), outer, s.theta, alpha);
    total = i == 0 ? mg.grad : axpy(total, 1.0, mg.grad);
    outer_sum += mg.outer_loss;
    r.per_confounder_inner_loss.push_back(mg.inner_loss);
  }
  const ParamVector g = n == 1 ? total : scaled(total, 1.0 / static_cast<double>(n));
  r.outer_loss = outer_sum / static_cast<double>(n);
  outer_adam(ctx, s, g, r);
  return r;
}

StepReport dil_pf_step(const StepContext& ctx, TrainerState& s) {
  StepReport r{s.iteration, 0.0, {}, 0.0, 0.0};
  const double alpha = ctx.config.alpha * ctx.config.lr_factor(s.iteration);
  const std::size_t n = ctx.set.size(), steps = ctx.config.inner_steps_pf;
  r.per_confounder_inner_loss.assign(n, 0.0);
  std::vector<std::size_t> seen(n, 0);
  ParamVector adapted = s.theta;
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const auto pairs = draw(ctx, s, SamplingMode::parallel(), ctx.config.batch, kInnerRole + k);
    std::vector<double> groups;
    const Objective inner = grouped_objective(ctx.net, pairs, n, ctx.config.loss, &groups);
    double value = 0.0;
    adapted = virtual_update(adapted, inner, alpha, ctx.config.virtual_mode, &s.virt, &value);
    loss_sum += value;
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isnan(groups[i])) {
        r.per_confounder_inner_loss[i] += groups[i];
        ++seen[i];
      }
  }
  for (std::size_t i = 0; i < n; ++i)
    r.per_confounder_inner_loss[i] =
        seen[i] ? r.per_confounder_inner_loss[i] / static_cast<double>(seen[i]) : std::numeric_limits<double>::quiet_NaN();
  r.outer_loss = loss_sum / static_cast<double>(steps);
  reptile_update(ctx, s, adapted, r);
  return r;
}

StepReport dil_sf_step(const StepContext& ctx, TrainerState& s) {
  StepReport r{s.iteration, 0.0, {}, 0.0, 0.0};
  const double alpha = ctx.config.alpha * ctx.config.lr_factor(s.iteration);
  const std::size_t n = ctx.set.size();
  ParamVector adapted = s.theta;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto pairs = draw(ctx, s, SamplingMode::serial(i), ctx.config.effective_serial_batch(), kInnerRole + i);
    double value = 0.0;
    adapted = virtual_update(adapted, batch_objective(ctx.net, pairs, ctx.config.loss), alpha, ctx.config.virtual_mode,
                             &s.virt, &value);
    loss_sum += value;
    r.per_confounder_inner_loss.push_back(value);
  }
  r.outer_loss = loss_sum / static_cast<double>(n);
  reptile_update(ctx, s, adapted, r);
  return r;
}

StepReport run_step(const StepContext& ctx, TrainerState& s) {
  switch (ctx.config.variant) {
    case Variant::kErm: return erm_step(ctx, s);
    case Variant::kDilPs: return dil_ps_step(ctx, s);
    case Variant::kDilSs: return dil_ss_step(ctx, s);
    case Variant::kDilPf: return dil_pf_step(ctx, s);
    case Variant::kDilSf: return dil_sf_step(ctx, s);
  }
  throw std::logic_error("unknown variant");
}

// ---------------------------------------------------------------- training

TrainResult train(const RestorationNet& net, const std::vector<CleanImage>& images, const ConfounderSet& set,
                  const TrainConfig& config, TrainerState state, std::optional<std::size_t> stop_at,
                  const StepCallback& on_step) {
  config.validate(set.size());
  if (state.theta.size() != net.params().size()) throw std::invalid_argument("train: state does not match the network");
  const std::size_t end = std::min(stop_at.value_or(config.iters), config.iters);
  TrainResult result{net, {}, {}, false, {}};
  const StepContext ctx{net, images, set, config};
  while (state.iteration < end) {
    try {
      TrainerState next = state;
      StepReport r = run_step(ctx, next);
      if (!std::isfinite(r.outer_loss) || !std::isfinite(r.grad_norm)) {
        throw NonFiniteError("step report at iteration " + std::to_string(r.iteration), 0);
      }
      next.iteration += 1;
      state = std::move(next);
      result.reports.push_back(std::move(r));
      if (on_step) on_step(result.reports.back(), state);
    } catch (const std::exception& e) {
      result.aborted = true;
      result.error = "iteration " + std::to_string(state.iteration) + ": " + e.what();
      break;
    }
  }
  result.net = net.with_params(state.theta);
  result.state = std::move(state);
  return result;
}

TrainResult train(const RestorationNet& net, const std::vector<CleanImage>& images, const ConfounderSet& set,
                  const TrainConfig& config) {
  return train(net, images, set, config, TrainerState::initial(net.params(), config));
}

std::string train_log_header(std::size_t n) {
  std::string h = "iteration,variant,outer_loss,grad_norm,lr";
  for (std::size_t i = 1; i <= n; ++i) h += ",inner_loss_" + std::to_string(i);
  return h + "\n";
}

std::string train_log_row(const StepReport& r, Variant variant, std::size_t n) {
  std::string row = std::to_string(r.iteration) + "," + variant_name(variant) + "," + format_double(r.outer_loss) + "," +
                    format_double(r.grad_norm) + "," + format_double(r.lr);
  for (std::size_t i = 0; i < n; ++i) {
    row += ",";
    if (i < r.per_confounder_inner_loss.size() && !std::isnan(r.per_confounder_inner_loss[i]))
      row += format_double(r.per_confounder_inner_loss[i]);
  }
  return row + "\n";
}

}  // namespace dil
