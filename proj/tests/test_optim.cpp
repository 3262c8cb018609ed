#include <cmath>
#include <sstream>

#include "dil/optim.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace dil;
using dil::test::random_tensor;

namespace {

std::vector<CleanImage> corpus(std::uint64_t seed, std::size_t count = 4) {
  std::vector<CleanImage> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_clean_image(derive_seed(seed, i), 64, 64));
  return out;
}

ConfounderSet noise4() {
  return ConfounderSet({DistortionSpec::awgn(5), DistortionSpec::awgn(10), DistortionSpec::awgn(15),
                        DistortionSpec::awgn(20)});
}

TrainConfig small(Variant v, std::size_t iters = 10) {
  TrainConfig c;
  c.variant = v;
  c.iters = iters;
  c.patch = 16;
  c.batch = 4;
  c.seed = 17;
  return c;
}

bool same_reports(const std::vector<StepReport>& a, const std::vector<StepReport>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].outer_loss != b[i].outer_loss || a[i].grad_norm != b[i].grad_norm || a[i].lr != b[i].lr ||
        a[i].per_confounder_inner_loss.size() != b[i].per_confounder_inner_loss.size())
      return false;
    for (std::size_t k = 0; k < a[i].per_confounder_inner_loss.size(); ++k)
      if (a[i].per_confounder_inner_loss[k] != b[i].per_confounder_inner_loss[k]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("losses: closed forms at zero residual") {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {2, 3, 4, 4});
  CHECK(loss(x, x, {LossKind::kL1, 1e-3}).item() == 0.0);
  CHECK(loss(Tensor({1}, {0.25}), Tensor({1}, {0.25}), {LossKind::kCharbonnier, 1e-3}).item() == 1e-3);
  CHECK(loss(x, x, {LossKind::kCharbonnier, 1e-3}).item() == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(loss(x, x, {LossKind::kL2, 0}).item() == 0.0);
  const Tensor y = Tensor::full({2, 3, 4, 4}, 0.0);
  const Tensor one = Tensor::full({2, 3, 4, 4}, 0.5);
  CHECK(loss(one, y, {LossKind::kL1, 1e-3}).item() == 0.5);
  CHECK(loss(one, y, {LossKind::kL2, 0}).item() == 0.25);
  CHECK_THROWS(loss(one, Tensor::zeros({3}), {}));
  for (LossKind k : {LossKind::kL1, LossKind::kCharbonnier, LossKind::kL2}) CHECK(parse_loss_kind(loss_name(k)) == k);
}

TEST_CASE("losses: Charbonnier gradient against central differences") {
  Rng rng(2);
  const Tensor target = random_tensor(rng, {4, 4});
  const ParamVector theta = ParamVector::flatten({"p"}, {random_tensor(rng, {4, 4})});
  const Objective f = [&](const std::vector<Tensor>& p) { return loss(p[0], target, {LossKind::kCharbonnier, 1e-3}); };
  const ValueGrad vg = value_and_grad(f, theta);
  double max_err = 0, max_fd = 0;
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

TEST_CASE("adam: zero gradient, first step, scalar convergence") {
  const ParamVector theta = ParamVector::flatten({"t"}, {Tensor({2}, {1.0, -2.0})});
  AdamState s = AdamState::for_params(theta, 0.1, 0.9);
  ParamVector p = theta;
  for (int i = 0; i < 5; ++i) p = adam_step(s, p, ParamVector::zeros_like(theta));
  CHECK(p == theta);

  AdamState v = AdamState::for_params(theta, 0.01, 0.0);
  const ParamVector g = ParamVector::with_values(theta, {3.0, -0.5});
  const ParamVector q = adam_step(v, theta, g);
  CHECK(q[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
  CHECK(q[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-9));
  CHECK(v.m == g);  // beta1 = 0: m is the current gradient

  const ParamVector x0 = ParamVector::flatten({"x"}, {Tensor({1}, {0.0})});
  AdamState a = AdamState::for_params(x0, 0.1, 0.9);
  ParamVector x = x0;
  for (int i = 0; i < 200; ++i) x = adam_step(a, x, ParamVector::with_values(x0, {x[0] - 3.0}));
  CHECK(std::abs(x[0] - 3.0) < 0.05);
}

TEST_CASE("virtual update: sgd closed forms") {
  const ParamVector theta = ParamVector::flatten({"t"}, {Tensor({1}, {1.0})});
  const Objective f = [](const std::vector<Tensor>& p) { return mul_scalar(sum(square(p[0])), 0.5); };
  CHECK(virtual_update(theta, f, 0.0, VirtualMode::kSgd) == theta);
  CHECK(virtual_update(theta, f, 0.1, VirtualMode::kSgd)[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK_THROWS(virtual_update(theta, f, 0.1, VirtualMode::kAdam, nullptr));
}

TEST_CASE("virtual update: descent on random instances") {
  const auto images = corpus(3);
  const ConfounderSet set = noise4();
  for (std::uint64_t i = 0; i < 20; ++i) {
    const RestorationNet net = RestorationNet::init(NetConfig{}, derive_seed(5, i));
    const auto pairs = sample_batch(images, set, SamplingMode::serial(i % 4), 2, 16, derive_seed(6, i));
    const Objective inner = batch_objective(net, pairs, {});
    double before = 0;
    const ParamVector phi = virtual_update(net.params(), inner, 1e-4, VirtualMode::kSgd, nullptr, &before);
    CHECK(evaluate(inner, phi) <= before);
  }
}

TEST_CASE("train config: validation, defaults, schedule") {
  TrainConfig c;
  CHECK(c.effective_beta() == 1e-3);
  c.variant = Variant::kDilSf;
  CHECK(c.effective_beta() == 1.0);
  c.beta = 0.5;
  CHECK(c.effective_beta() == 0.5);
  c.alpha = 0.0;
  CHECK_THROWS(c.validate(4));
  c = TrainConfig{};
  c.batch = 0;
  CHECK_THROWS(c.validate(4));
  c = TrainConfig{};
  c.loss.epsilon = 0.0;
  CHECK_THROWS(c.validate(4));
  CHECK_NOTHROW(TrainConfig{}.validate(4));
  for (Variant v : {Variant::kErm, Variant::kDilSf, Variant::kDilPf, Variant::kDilSs, Variant::kDilPs})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS(parse_variant("maml"));

  TrainConfig s;
  s.iters = 8;
  std::vector<double> f;
  for (std::size_t i = 0; i < 8; ++i) f.push_back(s.lr_factor(i));
  CHECK(f == std::vector<double>{1, 1, 1, 1, 0.5, 0.5, 0.25, 0.25});
}

TEST_CASE("train: iters = 0 returns the initial parameters") {
  const auto images = corpus(4);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 1);
  const TrainResult r = train(net, images, noise4(), small(Variant::kErm, 0));
  CHECK(r.net.params() == net.params());
  CHECK(r.reports.empty());
}

TEST_CASE("train: learning-rate trace and determinism") {
  const auto images = corpus(5);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 2);
  const TrainResult a = train(net, images, noise4(), small(Variant::kErm, 8));
  std::vector<double> lr;
  for (const auto& r : a.reports) lr.push_back(r.lr);
  CHECK(lr == std::vector<double>{1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4});
  const TrainResult b = train(net, images, noise4(), small(Variant::kErm, 8));
  CHECK(same_reports(a.reports, b.reports));
  CHECK(a.net.params() == b.net.params());
  for (const auto& r : a.reports) CHECK(std::isfinite(r.outer_loss));
}

TEST_CASE("steps: every variant is deterministic and reports n inner losses") {
  const auto images = corpus(6);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 3);
  for (Variant v : {Variant::kDilSf, Variant::kDilPf, Variant::kDilSs, Variant::kDilPs}) {
    CAPTURE(variant_name(v));
    const TrainResult a = train(net, images, noise4(), small(v, 3));
    const TrainResult b = train(net, images, noise4(), small(v, 3));
    CHECK(same_reports(a.reports, b.reports));
    CHECK(a.net.params() == b.net.params());
    CHECK_FALSE(a.net.params() == net.params());
    for (const auto& r : a.reports) {
      REQUIRE(r.per_confounder_inner_loss.size() == 4);
      for (double l : r.per_confounder_inner_loss) CHECK(std::isfinite(l));
      CHECK(r.grad_norm > 0.0);
    }
  }
}

TEST_CASE("steps: alpha = 0 reduces dil_ps to erm bitwise") {
  const auto images = corpus(7);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 4);
  const ConfounderSet set = noise4();
  TrainConfig erm = small(Variant::kErm, 20), ps = small(Variant::kDilPs, 20);
  ps.alpha = 0.0;
  TrainerState a = TrainerState::initial(net.params(), erm), b = TrainerState::initial(net.params(), ps);
  for (std::size_t i = 0; i < 20; ++i) {
    const StepReport ra = run_step({net, images, set, erm}, a);
    const StepReport rb = run_step({net, images, set, ps}, b);
    ++a.iteration;
    ++b.iteration;
    REQUIRE(a.theta == b.theta);
    CHECK(ra.outer_loss == rb.outer_loss);
  }
}

TEST_CASE("steps: single-confounder equivalences") {
  const auto images = corpus(8);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 5);
  const ConfounderSet one({DistortionSpec::awgn(15)});

  const TrainResult ss = train(net, images, one, small(Variant::kDilSs, 4));
  const TrainResult ps = train(net, images, one, small(Variant::kDilPs, 4));
  CHECK(ss.net.params() == ps.net.params());

  TrainConfig pf_cfg = small(Variant::kDilPf, 4);
  pf_cfg.inner_steps_pf = 1;
  const TrainResult sf = train(net, images, one, small(Variant::kDilSf, 4));
  const TrainResult pf = train(net, images, one, pf_cfg);
  CHECK(sf.net.params() == pf.net.params());
}

TEST_CASE("steps: pf with beta 1, one sgd inner step is plain SGD") {
  const auto images = corpus(9);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 6);
  const ConfounderSet set = noise4();
  TrainConfig c = small(Variant::kDilPf, 100);
  c.beta = 1.0;
  c.inner_steps_pf = 1;
  c.virtual_mode = VirtualMode::kSgd;
  c.alpha = 0.05;
  TrainerState s = TrainerState::initial(net.params(), c);
  ParamVector sgd = net.params();
  for (std::size_t it = 0; it < 3; ++it) {
    const auto pairs = sample_batch(images, set, SamplingMode::parallel(), c.batch, c.patch, batch_seed(c, it, kInnerRole));
    const ValueGrad vg = value_and_grad(grouped_objective(net, pairs, set.size(), c.loss), sgd);
    sgd = axpy(sgd, -c.alpha, vg.grad);
    run_step({net, images, set, c}, s);
    ++s.iteration;
    for (std::size_t i = 0; i < sgd.size(); ++i) REQUIRE(s.theta[i] == doctest::Approx(sgd[i]).epsilon(1e-12));
  }
}

TEST_CASE("steps: ss meta-gradient is the mean of per-confounder compositions") {
  const auto images = corpus(10);
  const RestorationNet net = RestorationNet::init(NetConfig{3, 1, 1, 3, false}, 7);
  const ConfounderSet set = noise4();
  TrainConfig c = small(Variant::kDilSs, 100);
  c.loss = {LossKind::kL2, 0.0};
  c.alpha = 0.05;
  c.beta = 1e-2;
  TrainerState s = TrainerState::initial(net.params(), c);
  const StepReport r = run_step({net, images, set, c}, s);
  const auto outer_pairs = sample_batch(images, set, SamplingMode::outer(), c.batch, c.patch, batch_seed(c, 0, kOuterRole));
  const Objective outer = batch_objective(net, outer_pairs, c.loss);
  ParamVector mean = ParamVector::zeros_like(net.params());
  for (std::size_t i = 0; i < 4; ++i) {
    const auto pairs = sample_batch(images, set, SamplingMode::serial(i), c.batch, c.patch, batch_seed(c, 0, kInnerRole + i));
    const Objective inner = batch_objective(net, pairs, c.loss);
    HvpOptions brute;
    brute.method = HvpMethod::kBruteForce;
    mean = axpy(mean, 0.25, second_order_gradient(inner, outer, net.params(), c.alpha, brute).grad);
  }
  CHECK(r.grad_norm == doctest::Approx(norm2(mean)).epsilon(1e-6));
}

TEST_CASE("train: identity task converges") {
  const auto images = corpus(11);
  const ConfounderSet id({DistortionSpec::awgn(0)});
  const RestorationNet net = RestorationNet::init(NetConfig{}, 8);
  TrainConfig c = small(Variant::kErm, 500);
  c.loss = {LossKind::kL2, 0.0};
  const TrainResult r = train(net, images, id, c);
  CHECK(r.reports.back().outer_loss < 1e-4);
}

TEST_CASE("trainer state: encode / decode round-trip") {
  const RestorationNet net = RestorationNet::init(NetConfig{3, 4, 2, 3, true}, 9);
  TrainConfig c = small(Variant::kDilSf);
  TrainerState s = TrainerState::initial(net.params(), c);
  s.iteration = 12;
  s.outer.t = 3;
  s.theta[0] = 0.125;
  s.virt.m[1] = -2.5;
  const std::string bytes = encode_trainer_state(s);
  CHECK(bytes.rfind("DILOPT v1\n", 0) == 0);
  CHECK(decode_trainer_state(bytes, net.params()) == s);
  CHECK_THROWS(decode_trainer_state(bytes, parameter_layout(NetConfig{})));
  CHECK_THROWS(decode_trainer_state(bytes.substr(0, bytes.size() - 1), net.params()));
}

TEST_CASE("train: split run with saved state equals an uninterrupted run") {
  const auto images = corpus(12);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 10);
  const ConfounderSet set = noise4();
  for (Variant v : {Variant::kErm, Variant::kDilSf}) {
    CAPTURE(variant_name(v));
    const TrainConfig c = small(v, 12);
    const TrainResult full = train(net, images, set, c);
    const TrainResult first = train(net, images, set, c, TrainerState::initial(net.params(), c), 6);
    CHECK(first.state.iteration == 6);
    const TrainerState restored = decode_trainer_state(encode_trainer_state(first.state), net.params());
    const TrainResult second = train(net, images, set, c, restored);
    CHECK(second.net.params() == full.net.params());
    CHECK(second.state == full.state);
    // Restarting the optimizer from scratch does not reproduce the run.
    TrainerState fresh = TrainerState::initial(first.state.theta, c);
    fresh.iteration = 6;
    CHECK_FALSE(train(net, images, set, c, fresh).net.params() == full.net.params());
  }
}

TEST_CASE("train: non-finite losses abort with a partial report") {
  const auto images = corpus(13);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 11);
  TrainConfig c = small(Variant::kErm, 5);
  c.beta = 1e300;
  const TrainResult r = train(net, images, noise4(), c);
  CHECK(r.aborted);
  CHECK_FALSE(r.error.empty());
  CHECK(r.reports.size() < 5);
}

TEST_CASE("training log format") {
  CHECK(train_log_header(2) == "iteration,variant,outer_loss,grad_norm,lr,inner_loss_1,inner_loss_2\n");
  StepReport r{3, 0.5, {}, 0.25, 1e-3};
  CHECK(train_log_row(r, Variant::kErm, 2) == "3,erm,0.5,0.25,0.001,,\n");
  r.per_confounder_inner_loss = {0.1, 0.2};
  CHECK(train_log_row(r, Variant::kDilSs, 2) == "3,dil_ss,0.5,0.25,0.001,0.1,0.2\n");
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("train: default configuration stays finite for 1000 steps") {
  const auto images = corpus(14, 8);
  const RestorationNet net = RestorationNet::init(NetConfig{}, 12);
  TrainConfig c;
  c.iters = 1000;
  std::size_t steps = 0;
  const TrainResult r = train(net, images, noise4(), c, TrainerState::initial(net.params(), c), std::nullopt,
                              [&](const StepReport& s, const TrainerState&) {
                                CHECK(std::isfinite(s.outer_loss));
                                ++steps;
                              });
  CHECK_FALSE(r.aborted);
  CHECK(steps == 1000);
}
