#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dil/degradation.hpp"
#include "dil/hvp.hpp"
#include "dil/net.hpp"

namespace dil {

// ---------------------------------------------------------------- losses

enum class LossKind { kL1, kCharbonnier, kL2 };

struct LossConfig {
  LossKind kind = LossKind::kCharbonnier;
  double epsilon = 1e-3;
  bool operator==(const LossConfig&) const = default;
};

std::string loss_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

/// Mean per-element |r|, sqrt(r^2 + eps^2) or r^2, r = pred - target.
Tensor loss(const Tensor& pred, const Tensor& target, const LossConfig& config);

// ---------------------------------------------------------------- Adam

struct AdamState {
  ParamVector m;
  ParamVector v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;

  static AdamState for_params(const ParamVector& theta, double lr, double beta1, double beta2 = 0.999);
  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam step; mutates `state`, returns the new parameters.
/// `lr_override` replaces state.lr for this step only (learning-rate schedules).
ParamVector adam_step(AdamState& state, const ParamVector& theta, const ParamVector& grad,
                      std::optional<double> lr_override = std::nullopt);

// ---------------------------------------------------------------- training config

enum class Variant { kErm, kDilSf, kDilPf, kDilSs, kDilPs };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
bool is_first_order(Variant v);

enum class VirtualMode { kSgd, kAdam };

struct TrainConfig {
  Variant variant = Variant::kErm;
  double alpha = 1e-3;
  /// Outer rate. Adam learning rate for erm/ss/ps, interpolation factor for
  /// pf/sf. Unset means the per-variant default (1e-3 resp. 1.0).
  std::optional<double> beta;
  LossConfig loss;
  std::size_t iters = 3000;
  std::size_t batch = 8;
  /// Batch of each per-confounder inner step of ss/sf; 0 means `batch`.
  std::size_t serial_batch = 0;
  std::size_t patch = 32;
  std::uint64_t seed = 1;
  std::size_t inner_steps_pf = 2;
  /// Virtual update rule of the first-order variants.
  VirtualMode virtual_mode = VirtualMode::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double virtual_beta2 = 0.999;
  std::size_t checkpoint_every = 0;

  void validate(std::size_t n_confounders) const;
  double effective_beta() const;
  std::size_t effective_serial_batch() const { return serial_batch == 0 ? batch : serial_batch; }
  /// 1, 1/2 or 1/4 depending on how far `iteration` is into the run.
  double lr_factor(std::size_t iteration) const;
  bool operator==(const TrainConfig&) const = default;
};

struct StepReport {
  std::size_t iteration = 0;
  double outer_loss = 0.0;
  std::vector<double> per_confounder_inner_loss;
  double grad_norm = 0.0;
  double lr = 0.0;
};

/// Everything that evolves during training. Saving and restoring it makes a
/// split run bitwise equal to an uninterrupted one.
struct TrainerState {
  ParamVector theta;
  AdamState outer;
  AdamState virt;
  std::size_t iteration = 0;

  static TrainerState initial(const ParamVector& theta, const TrainConfig& config);
  bool operator==(const TrainerState&) const = default;
};

std::string encode_trainer_state(const TrainerState& state);
/// `layout` supplies the parameter segments.
TrainerState decode_trainer_state(const std::string& bytes, const ParamVector& layout);

// ---------------------------------------------------------------- step pieces

/// Batch tensors [B, 3, p, p] stacked from patch pairs.
struct BatchTensors {
  Tensor distorted;
  Tensor clean;
};
BatchTensors stack_batch(const std::vector<PatchPair>& pairs);

/// Mean loss of `net` (with the given parameters) over a batch.
Objective batch_objective(const RestorationNet& net, const std::vector<PatchPair>& pairs, const LossConfig& config);

/// (1/n) sum_i of the mean loss over the pairs drawn from confounder i. Empty
/// groups are left out of the average. `group_losses`, if given, receives the
/// per-confounder values of the last evaluation (NaN for empty groups).
Objective grouped_objective(const RestorationNet& net, const std::vector<PatchPair>& pairs, std::size_t n,
                            const LossConfig& config, std::vector<double>* group_losses = nullptr);

/// phi = theta - alpha * grad (sgd) or one step of the virtual Adam state.
ParamVector virtual_update(const ParamVector& theta, const Objective& inner, double alpha, VirtualMode mode,
                           AdamState* adam_state = nullptr, double* inner_value = nullptr);

struct MetaGradient {
  ParamVector grad;
  double outer_loss = 0.0;  // L_outer at phi
  double inner_loss = 0.0;  // L_inner at theta
};

/// Gradient of theta -> outer(theta - alpha grad inner(theta)):
/// (I - alpha H_inner(theta)) grad outer(phi).
/// `inner_at_theta` may supply an already computed inner value and gradient.
MetaGradient second_order_gradient(const Objective& inner, const Objective& outer, const ParamVector& theta,
                                   double alpha, const HvpOptions& hvp_options = {},
                                   const ValueGrad* inner_at_theta = nullptr);

// ---------------------------------------------------------------- steps and training

struct StepContext {
  const RestorationNet& net;  // architecture; parameters come from the state
  const std::vector<CleanImage>& images;
  const ConfounderSet& set;
  const TrainConfig& config;
};

/// Sub-seed of iteration `iteration` for a sampling role.
std::uint64_t batch_seed(const TrainConfig& config, std::size_t iteration, std::uint64_t role);
/// Inner batch j (pf inner step j, or ss/sf confounder j) uses role kInnerRole + j,
/// so single-confounder runs of the serial and parallel variants see the same data.
inline constexpr std::uint64_t kOuterRole = 0;
inline constexpr std::uint64_t kInnerRole = 1;

StepReport erm_step(const StepContext& ctx, TrainerState& state);
StepReport dil_ps_step(const StepContext& ctx, TrainerState& state);
StepReport dil_ss_step(const StepContext& ctx, TrainerState& state);
StepReport dil_pf_step(const StepContext& ctx, TrainerState& state);
StepReport dil_sf_step(const StepContext& ctx, TrainerState& state);
StepReport run_step(const StepContext& ctx, TrainerState& state);

struct TrainResult {
  RestorationNet net;
  TrainerState state;
  std::vector<StepReport> reports;
  bool aborted = false;
  std::string error;
};

using StepCallback = std::function<void(const StepReport&, const TrainerState&)>;

/// Runs the selected variant from state.iteration up to `stop_at` (default
/// config.iters). The schedule always refers to config.iters.
TrainResult train(const RestorationNet& net, const std::vector<CleanImage>& images, const ConfounderSet& set,
                  const TrainConfig& config, TrainerState state, std::optional<std::size_t> stop_at = std::nullopt,
                  const StepCallback& on_step = {});
TrainResult train(const RestorationNet& net, const std::vector<CleanImage>& images, const ConfounderSet& set,
                  const TrainConfig& config);

/// Training log: iteration,variant,outer_loss,grad_norm,lr,inner_loss_1..n.
std::string train_log_header(std::size_t n);
std::string train_log_row(const StepReport& r, Variant variant, std::size_t n);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace dil
