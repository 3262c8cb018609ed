#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dil {

struct VerifyResult {
  std::string check_name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

/// One row per check, aligned columns.
std::string format_verify_table(const std::vector<VerifyResult>& results);

// Self-contained seeded checks. Each returns a finished result and never throws
// for a failed property; unexpected exceptions become failed results.

/// Reverse-mode vs central differences (h = 1e-5) for both losses through the
/// default network, `instances` seeded instances, `coords` sampled coordinates each.
VerifyResult check_gradients(std::size_t instances = 20, std::size_t coords = 60);
/// Finite-difference HVP vs the brute-force Hessian on a <= 50 parameter net.
VerifyResult check_hvp_oracle(std::size_t directions = 10);
/// hvp(a v1 + b v2) = a hvp(v1) + b hvp(v2) with a fixed radius.
VerifyResult check_hvp_linearity();
/// Log-log slope of |g_ss - g_ps|_inf against alpha with shared data, n = 4.
VerifyResult check_taylor_slope();
/// alpha = 0: dil_ps and erm trajectories are bitwise equal.
VerifyResult check_erm_reduction(std::size_t steps = 100);
/// Linear model, squared loss: ps/ss meta-gradients vs the closed form.
VerifyResult check_second_order_closed_form();
/// First-order variants halve the identity-task loss within 200 iterations;
/// the reversed interpolation sign must not.
VerifyResult check_sign_convention(std::size_t iters = 200);
/// Adam on 0.5 (x - 3)^2, 200 steps, lr 0.1.
VerifyResult check_adam_scalar();
/// PSNR / SSIM / luma closed forms.
VerifyResult check_metric_closed_forms();
/// AWGN sample std, quality-50 table, blur kernel normalization.
VerifyResult check_degradation_statistics();

struct GeneralizationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t iters = 3000;
  double margin_db = 0.3;
  std::size_t required_seeds = 2;
  /// Per-confounder batch of DIL_sf; 0 means batch / n, i.e. the same number of
  /// patches per iteration as ERM.
  std::size_t serial_batch = 0;
  std::function<void(const std::string&)> log;
};
/// ERM vs DIL_sf on the default denoising split; per seed, DIL must beat ERM
/// at sigma 30 by margin_db and the DIL - ERM gap must not shrink over 30/40/50.
VerifyResult check_generalization(const GeneralizationOptions& options);

/// synth-data + train + eval twice into fresh directories under `scratch`;
/// every artifact must match byte for byte (wall-clock field excluded).
VerifyResult check_end_to_end_determinism(const std::filesystem::path& scratch);

/// The fast suite run by `dil verify`.
std::vector<VerifyResult> run_verify_suite();

}  // namespace dil
