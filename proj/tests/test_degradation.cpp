#include <cmath>
#include <numbers>

#include "dil/degradation.hpp"
#include "dil/image_io.hpp"
#include "dil/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace dil;
using namespace std::string_literals;

namespace {

Tensor gray(std::size_t h, std::size_t w, double v = 0.5) { return Tensor::full({3, h, w}, v); }

double residual_std(const Tensor& a, const Tensor& b) {
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = a[i] - b[i];
    s += r;
    s2 += r * r;
  }
  const double n = static_cast<double>(a.size());
  return std::sqrt(s2 / n - (s / n) * (s / n));
}

double correlation(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("rng: derive_seed and streams are deterministic") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
  CHECK(derive_seed(5, {1, 2}) != derive_seed(5, {2, 1}));
  Rng a(7), b(7);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  Rng c(8);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(c.below(7) < 7);
  }
}

TEST_CASE("awgn: zero sigma is the identity, sigma 25 has the right spread") {
  const Tensor img = gray(256, 256);
  CHECK(bitwise_equal(apply_distortion(img, DistortionSpec::awgn(0), 3), img));
  const Tensor noisy = apply_distortion(img, DistortionSpec::awgn(25), 3);
  CHECK(std::abs(residual_std(noisy, img) - 25.0 / 255.0) <= 0.02 * 25.0 / 255.0);
  CHECK(bitwise_equal(noisy, apply_distortion(img, DistortionSpec::awgn(25), 3)));
  CHECK_FALSE(bitwise_equal(noisy, apply_distortion(img, DistortionSpec::awgn(25), 4)));
}

TEST_CASE("jpeg: quality 50 keeps the standard table") {
  CHECK(quantization_table(50) == standard_luminance_table());
  CHECK(standard_luminance_table()[0] == 16);
  CHECK(standard_luminance_table()[63] == 99);
  const auto q10 = quantization_table(10);
  CHECK(q10[0] == 80);  // (16 * 500 + 50) / 100
  for (int v : quantization_table(100)) CHECK(v == 1);
  for (int v : quantization_table(1)) CHECK((v >= 1 && v <= 255));
}

TEST_CASE("jpeg: output stays in range and flat images survive") {
  const Tensor flat = gray(20, 13, 0.5);
  const Tensor out = apply_distortion(flat, DistortionSpec::jpeg(30), 1);
  CHECK(out.shape() == flat.shape());
  CHECK(dil::test::max_abs_diff(out, flat) < 2.0 / 255.0);
  const CleanImage img = synth_clean_image(4, 64, 64);
  const Tensor j = apply_distortion(img, DistortionSpec::jpeg(10), 1);
  for (double v : j.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(residual_std(j, img.pixels) > 0.0);
}

TEST_CASE("blur kernel: normalization, isotropy, sampled values") {
  for (double sigma : {0.5, 1.0, 1.7, 3.0}) {
    const Tensor k = gaussian_kernel(sigma);
    const std::size_t n = k.dim(0);
    CHECK(n == 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
    double s = 0;
    for (double v : k.data()) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(k[i * n + j] == k[j * n + i]);
        CHECK(k[i * n + j] == k[(n - 1 - i) * n + j]);
        CHECK(k[i * n + j] == k[i * n + (n - 1 - j)]);
      }
  }
  // The kernel samples the density at cell centres and renormalizes.
  const Tensor k = gaussian_kernel(1.0);
  double total = 0;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) total += std::exp(-(i * i + j * j) / 2.0);
  CHECK(k[3 * 7 + 3] == doctest::Approx(1.0 / total).epsilon(1e-12));
  // Cell-integrated mass is a different quantity (about 0.1466 vs 0.1621).
  const double cell = std::pow(std::erf(0.5 / std::numbers::sqrt2), 2.0);
  CHECK(std::abs(k[3 * 7 + 3] - cell) > 0.01);
}

TEST_CASE("blur: constant image is unchanged") {
  const Tensor flat = gray(12, 12, 0.3);
  CHECK(dil::test::max_abs_diff(apply_distortion(flat, DistortionSpec::blur(2.0), 0), flat) < 1e-12);
}

TEST_CASE("specs: validation, labels and presets") {
  CHECK_THROWS(DistortionSpec::awgn(-1).validate());
  CHECK_THROWS(DistortionSpec::blur(0).validate());
  CHECK_THROWS(DistortionSpec::jpeg(0).validate());
  CHECK_THROWS(DistortionSpec::jpeg(101).validate());
  CHECK_THROWS(DistortionSpec::hybrid({}).validate());
  CHECK(DistortionSpec::awgn(15).label() == "awgn(sigma=15)");
  CHECK(DistortionSpec::jpeg(30).level() == 70);
  CHECK(hybrid_preset("mild").params_string() == "blur=1;sigma=5;quality=80");
  CHECK(hybrid_preset("severe").params_string() == "blur=3;sigma=25;quality=30");
  CHECK_THROWS(hybrid_preset("extreme"));
  CHECK_THROWS(ConfounderSet({}));
}

TEST_CASE("hybrid: stages compose in order") {
  const CleanImage img = synth_clean_image(3, 64, 64);
  const DistortionSpec h = hybrid_preset("moderate");
  CHECK(bitwise_equal(apply_distortion(img, h, 5), apply_distortion(img, h, 5)));
  const Tensor blurred = apply_distortion(img.pixels, DistortionSpec::blur(2), derive_seed(5, 0));
  const Tensor noisy = apply_distortion(blurred, DistortionSpec::awgn(15), derive_seed(5, 1));
  const Tensor coded = apply_distortion(noisy, DistortionSpec::jpeg(50), derive_seed(5, 2));
  CHECK(bitwise_equal(apply_distortion(img, h, 5), coded));
}

TEST_CASE("synthetic images: determinism, range, brightness") {
  CHECK(bitwise_equal(synth_clean_image(42, 64, 80).pixels, synth_clean_image(42, 64, 80).pixels));
  CHECK_THROWS(synth_clean_image(1, 32, 64));
  double mean = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const CleanImage img = synth_clean_image(s, 64, 64);
    double m = 0;
    for (double v : img.pixels.data()) {
      REQUIRE((v >= 0.0 && v <= 1.0));
      m += v;
    }
    mean += m / static_cast<double>(img.pixels.size()) / 100.0;
  }
  CHECK((mean >= 0.35 && mean <= 0.65));
}

TEST_CASE("counterfactual augmentation") {
  const CleanImage img{gray(64, 64), "g"};
  const ConfounderSet one({DistortionSpec::awgn(10)});
  const auto single = counterfactual_augment(img, one, 9);
  REQUIRE(single.size() == 1);
  CHECK(bitwise_equal(single[0], apply_distortion(img, one[0], derive_seed(9, 0))));

  const ConfounderSet set({DistortionSpec::awgn(5), DistortionSpec::awgn(10), DistortionSpec::awgn(15),
                           DistortionSpec::awgn(20)});
  const auto r = counterfactual_augment(img, set, 9);
  std::vector<std::vector<double>> res;
  for (const Tensor& t : r) {
    std::vector<double> d(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) d[i] = t[i] - img.pixels[i];
    res.push_back(std::move(d));
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) CHECK(std::abs(correlation(res[i], res[j])) < 0.05);
  for (std::size_t i = 0; i + 1 < 4; ++i) CHECK(residual_std(r[i], img.pixels) < residual_std(r[i + 1], img.pixels));
}

TEST_CASE("batch sampling modes") {
  const std::vector<CleanImage> images{synth_clean_image(1, 64, 64), synth_clean_image(2, 64, 64)};
  const ConfounderSet set({DistortionSpec::awgn(5), DistortionSpec::awgn(10), DistortionSpec::awgn(15),
                           DistortionSpec::awgn(20)});
  const auto par = sample_batch(images, set, SamplingMode::parallel(), 8, 16, 1);
  std::vector<int> counts(4, 0);
  for (const auto& p : par) ++counts[p.spec_index];
  CHECK(counts == std::vector<int>{2, 2, 2, 2});
  CHECK(parallel_assignment(10, 4) == std::vector<std::size_t>{0, 0, 0, 1, 1, 1, 2, 2, 3, 3});

  for (const auto& p : sample_batch(images, set, SamplingMode::serial(2), 8, 16, 2)) {
    CHECK(p.spec_index == 2);
    CHECK(p.distorted.shape() == Shape{3, 16, 16});
  }
  CHECK_THROWS(sample_batch(images, set, SamplingMode::serial(4), 8, 16, 2));
  CHECK_THROWS(sample_batch(images, set, SamplingMode::outer(), 8, 65, 2));

  const auto outer = sample_batch(images, set, SamplingMode::outer(), 10000, 4, 3);
  std::vector<double> freq(4, 0.0);
  for (const auto& p : outer) freq[p.spec_index] += 1.0;
  const double sd = std::sqrt(10000 * 0.25 * 0.75);
  for (double f : freq) CHECK(std::abs(f - 2500.0) <= 3 * sd);

  const auto a = sample_batch(images, set, SamplingMode::outer(), 4, 16, 5);
  const auto b = sample_batch(images, set, SamplingMode::outer(), 4, 16, 5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(bitwise_equal(a[i].distorted, b[i].distorted));
}

TEST_CASE("ppm round-trip") {
  const CleanImage img = synth_clean_image(6, 64, 70);
  const std::string bytes = encode_ppm(img.pixels);
  CHECK(bytes.rfind("P6\n70 64\n255\n", 0) == 0);
  const Tensor back = decode_ppm(bytes);
  CHECK(back.shape() == img.pixels.shape());
  CHECK(dil::test::max_abs_diff(back, img.pixels) <= 0.5 / 255.0 + 1e-12);
  CHECK(encode_ppm(back) == bytes);
  CHECK(decode_ppm("P6 # comment\n1 1\n255\n\xff\x00\x80"s).to_vector() ==
        std::vector<double>{1.0, 0.0, 128.0 / 255.0});
  CHECK_THROWS(decode_ppm("P5\n1 1\n255\n\x01"));
  CHECK_THROWS(decode_ppm("P6\n2 2\n255\n\x01\x02"));
  CHECK_THROWS(validate_image(Tensor::full({3, 2, 2}, 1.5)));
}
