#include <cmath>

#include "dil/metrics.hpp"
#include "dil/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace dil;
using dil::test::random_tensor;

TEST_CASE("psnr: cap and constant offset") {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {3, 8, 8}, 0.0, 0.5);
  CHECK(psnr(x, x) == kPsnrCap);
  std::vector<double> shifted(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) shifted[i] = x[i] + 16.0 / 255.0;
  CHECK(std::abs(psnr(Tensor(x.shape(), shifted), x) - 24.0485) <= 1e-4);
  CHECK(psnr(Tensor(x.shape(), shifted), x) == doctest::Approx(20.0 * std::log10(255.0 / 16.0)).epsilon(1e-12));
  CHECK_THROWS(psnr(x, Tensor::zeros({3, 8, 9})));
}

TEST_CASE("psnr: matches a pixel-loop oracle on a noisy image") {
  const CleanImage img = synth_clean_image(7, 64, 64);
  const Tensor noisy = apply_distortion(img, DistortionSpec::awgn(20), 8);
  long double se = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const std::size_t i = (c * 64 + y) * 64 + x;
        const long double d = static_cast<long double>(noisy[i]) - img.pixels[i];
        se += d * d;
      }
  const double oracle = 10.0 * std::log10(1.0 / static_cast<double>(se / (3 * 64 * 64)));
  CHECK(std::abs(psnr(noisy, img.pixels) - oracle) <= 1e-9);
}

TEST_CASE("luma") {
  const Tensor white = Tensor::full({3, 2, 2}, 1.0);
  const Tensor yw = rgb_to_y(white);
  for (double v : yw.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  const Tensor green({3, 1, 1}, {0.0, 1.0, 0.0});
  CHECK(rgb_to_y(green)[0] == 0.587);
  Rng rng(2);
  const Tensor yr = rgb_to_y(random_tensor(rng, {3, 16, 16}));
  for (double v : yr.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(parse_channel(channel_name(Channel::kY)) == Channel::kY);
  CHECK_THROWS(parse_channel("lab"));
}

TEST_CASE("ssim: identity, symmetry, anti-correlation") {
  Rng rng(3);
  const Tensor a = random_tensor(rng, {3, 24, 24});
  const Tensor b = random_tensor(rng, {3, 24, 24});
  CHECK(std::abs(ssim(a, a) - 1.0) <= 1e-9);
  CHECK(ssim(a, b) == ssim(b, a));
  CHECK(ssim(a, b) < 0.5);
  CHECK(std::abs(ssim(a, a, Channel::kY) - 1.0) <= 1e-9);

  std::vector<double> half(3 * 16 * 16), inv(half.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        const std::size_t i = (c * 16 + y) * 16 + x;
        half[i] = x < 8 ? 0.0 : 1.0;
        inv[i] = 1.0 - half[i];
      }
  CHECK(ssim(Tensor({3, 16, 16}, half), Tensor({3, 16, 16}, inv)) < 0.0);
  CHECK_THROWS(ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8})));
}

TEST_CASE("evaluate: identity network") {
  const RestorationNet net = RestorationNet::init(NetConfig{}, 1);
  const RestorationNet id = net.with_params(ParamVector::zeros_like(net.params()));
  const Datasets data{{"d", {synth_clean_image(1, 64, 64), synth_clean_image(2, 64, 64)}}};

  const EvalReport clean = evaluate(id, data, ConfounderSet({DistortionSpec::awgn(0)}), {}, 5);
  CHECK(clean.rows.at(0).psnr_db == kPsnrCap);
  CHECK(clean.rows.at(0).ssim == doctest::Approx(1.0).epsilon(1e-12));

  const ConfounderSet seen({DistortionSpec::awgn(5), DistortionSpec::awgn(10)});
  const std::vector<DistortionSpec> unseen{DistortionSpec::awgn(30), DistortionSpec::awgn(40), DistortionSpec::awgn(50)};
  const EvalReport r = evaluate(id, data, seen, unseen, 5);
  REQUIRE(r.rows.size() == 5);
  REQUIRE(r.gaps.size() == 3);
  CHECK(r.find("d", unseen[0]).psnr_db > r.find("d", unseen[1]).psnr_db);
  CHECK(r.find("d", unseen[1]).psnr_db > r.find("d", unseen[2]).psnr_db);
  CHECK_FALSE(r.find("d", unseen[0]).seen);
  CHECK(r.gaps[0].gap_db == r.gaps[0].best_seen_psnr - r.gaps[0].unseen_psnr);
  CHECK(r.gaps[0].best_seen_psnr == r.find("d", seen[0]).psnr_db);

  // Identity restoration scores exactly the distorted inputs (spec index 2 = first unseen).
  double expected = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& img = data[0].second[i];
    expected += psnr(clamp(apply_distortion(img, unseen[0], eval_distortion_seed(5, 0, 2, i)), 0.0, 1.0), img.pixels) / 2;
  }
  CHECK(r.find("d", unseen[0]).psnr_db == doctest::Approx(expected).epsilon(1e-14));
  CHECK_THROWS(r.find("d", DistortionSpec::awgn(99)));

  const std::string rows = eval_rows_csv(r);
  CHECK(rows.rfind("dataset_id,spec_kind,spec_params,seen,channel,psnr_db,ssim\n", 0) == 0);
  CHECK(rows.find("d,awgn,sigma=30,false,rgb,") != std::string::npos);
  const std::string gaps = eval_gaps_csv(r);
  CHECK(std::count(gaps.begin(), gaps.end(), '\n') == 4);
  const std::string plot = plot_data_csv({{"a", r}, {"b", r}});
  CHECK(std::count(plot.begin(), plot.end(), '\n') == 11);
  CHECK(plot.find("b,d,awgn,sigma=50,50,false,") != std::string::npos);
}
