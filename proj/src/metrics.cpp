#include "dil/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dil/optim.hpp"
#include "dil/rng.hpp"

namespace dil {

std::string channel_name(Channel c) { return c == Channel::kRgb ? "rgb" : "y"; }

Channel parse_channel(const std::string& name) {
  if (name == "rgb") return Channel::kRgb;
  if (name == "y") return Channel::kY;
  throw std::invalid_argument("unknown channel '" + name + "' (expected rgb or y)");
}

Tensor rgb_to_y(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) != 3) throw ShapeError("rgb_to_y: expected [3, h, w], got " + shape_string(x.shape()));
  const std::size_t hw = x.dim(1) * x.dim(2);
  const auto v = x.data();
  std::vector<double> y(hw);
  for (std::size_t i = 0; i < hw; ++i) y[i] = 0.299 * v[i] + 0.587 * v[hw + i] + 0.114 * v[2 * hw + i];
  return Tensor({1, x.dim(1), x.dim(2)}, std::move(y));
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

std::pair<Tensor, Tensor> select(const Tensor& a, const Tensor& b, Channel channel) {
  if (channel == Channel::kY) return {rgb_to_y(a), rgb_to_y(b)};
  return {a, b};
}

const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> k(121);
    double total = 0.0;
    for (int y = -5; y <= 5; ++y)
      for (int x = -5; x <= 5; ++x) {
        const double e = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
        k[static_cast<std::size_t>((y + 5) * 11 + x + 5)] = e;
        total += e;
      }
    for (double& e : k) e /= total;
    return k;
  }();
  return w;
}

double ssim_plane(const double* a, const double* b, std::size_t h, std::size_t w) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto& win = ssim_window();
  double total = 0.0;
  for (std::size_t y = 0; y + 11 <= h; ++y) {
    for (std::size_t x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t ky = 0; ky < 11; ++ky)
        for (std::size_t kx = 0; kx < 11; ++kx) {
          const double k = win[ky * 11 + kx];
          const double va = a[(y + ky) * w + x + kx], vb = b[(y + ky) * w + x + kx];
          ma += k * va;
          mb += k * vb;
          saa += k * (va * va);
          sbb += k * (vb * vb);
          sab += k * (va * vb);
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
  }
  return total / static_cast<double>((h - 10) * (w - 10));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, Channel channel) {
  require_same(a, b, "psnr");
  const auto [x, y] = select(a, b, channel);
  const auto xv = x.data(), yv = y.data();
  double se = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - yv[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(xv.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b, Channel channel) {
  require_same(a, b, "ssim");
  const auto [x, y] = select(a, b, channel);
  if (x.rank() != 3 || x.dim(1) < 11 || x.dim(2) < 11) {
    throw ShapeError("ssim: images must be [c, h, w] with h, w >= 11, got " + shape_string(x.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) total += ssim_plane(x.data().data() + ch * h * w, y.data().data() + ch * h * w, h, w);
  return total / static_cast<double>(c);
}

const EvalRow& EvalReport::find(const std::string& dataset_id, const DistortionSpec& spec) const {
  for (const EvalRow& r : rows)
    if (r.dataset_id == dataset_id && r.spec == spec) return r;
  throw std::out_of_range("no evaluation row for " + dataset_id + " / " + spec.label());
}

std::uint64_t eval_distortion_seed(std::uint64_t seed, std::size_t dataset, std::size_t spec, std::size_t image) {
  return derive_seed(seed, {dataset, spec, image});
}

EvalReport evaluate(const RestorationNet& net, const Datasets& datasets, const ConfounderSet& seen,
                    const std::vector<DistortionSpec>& unseen, std::uint64_t seed, Channel channel) {
  if (datasets.empty()) throw std::invalid_argument("evaluate: no datasets");
  std::vector<std::pair<DistortionSpec, bool>> specs;
  for (const auto& s : seen.specs()) specs.emplace_back(s, true);
  for (const auto& s : unseen) {
    s.validate();
    specs.emplace_back(s, false);
  }
  EvalReport report;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto& [id, images] = datasets[d];
    if (images.empty()) throw std::invalid_argument("evaluate: dataset '" + id + "' is empty");
    for (std::size_t s = 0; s < specs.size(); ++s) {
      double psnr_sum = 0.0, ssim_sum = 0.0;
      for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor& clean = images[i].pixels;
        const Tensor distorted = apply_distortion(clean, specs[s].first, eval_distortion_seed(seed, d, s, i));
        Shape batched{1};
        batched.insert(batched.end(), clean.shape().begin(), clean.shape().end());
        const Tensor restored = clamp(net.forward(distorted.reshaped(batched)), 0.0, 1.0).reshaped(clean.shape());
        psnr_sum += psnr(restored, clean, channel);
        ssim_sum += ssim(restored, clean, channel);
      }
      const double count = static_cast<double>(images.size());
      report.rows.push_back({id, specs[s].first, specs[s].second, channel, psnr_sum / count, ssim_sum / count});
    }
  }
  for (const auto& [id, images] : datasets) {
    double best = -std::numeric_limits<double>::infinity();
    for (const EvalRow& r : report.rows)
      if (r.dataset_id == id && r.seen) best = std::max(best, r.psnr_db);
    for (const EvalRow& r : report.rows)
      if (r.dataset_id == id && !r.seen) report.gaps.push_back({id, r.spec, best, r.psnr_db, best - r.psnr_db});
  }
  return report;
}

std::string eval_rows_csv(const EvalReport& report) {
  std::string out = "dataset_id,spec_kind,spec_params,seen,channel,psnr_db,ssim\n";
  for (const EvalRow& r : report.rows) {
    out += r.dataset_id + "," + r.spec.kind_name() + "," + r.spec.params_string() + "," + (r.seen ? "true" : "false") +
           "," + channel_name(r.channel) + "," + format_double(r.psnr_db) + "," + format_double(r.ssim) + "\n";
  }
  return out;
}

std::string eval_gaps_csv(const EvalReport& report) {
  std::string out = "dataset_id,spec_kind,spec_params,best_seen_psnr_db,unseen_psnr_db,gap_db\n";
  for (const GapRow& g : report.gaps) {
    out += g.dataset_id + "," + g.spec.kind_name() + "," + g.spec.params_string() + "," + format_double(g.best_seen_psnr) +
           "," + format_double(g.unseen_psnr) + "," + format_double(g.gap_db) + "\n";
  }
  return out;
}

std::string plot_data_csv(const std::vector<std::pair<std::string, EvalReport>>& series) {
  std::string out = "series,dataset_id,spec_kind,spec_params,level,seen,psnr_db,ssim\n";
  for (const auto& [name, report] : series)
    for (const EvalRow& r : report.rows)
      out += name + "," + r.dataset_id + "," + r.spec.kind_name() + "," + r.spec.params_string() + "," +
             format_double(r.spec.level()) + "," + (r.seen ? "true" : "false") + "," + format_double(r.psnr_db) + "," +
             format_double(r.ssim) + "\n";
  return out;
}

}  // namespace dil
