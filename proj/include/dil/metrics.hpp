#pragma once

#include <map>
#include <string>
#include <vector>

#include "dil/degradation.hpp"
#include "dil/net.hpp"

namespace dil {

enum class Channel { kRgb, kY };

std::string channel_name(Channel c);
Channel parse_channel(const std::string& name);

inline constexpr double kPsnrCap = 99.0;

/// Y = 0.299 R + 0.587 G + 0.114 B, [3, h, w] -> [1, h, w].
Tensor rgb_to_y(const Tensor& x);

/// 10 log10(1 / MSE) on [0, 1] data, 99 dB for identical inputs.
double psnr(const Tensor& a, const Tensor& b, Channel channel = Channel::kRgb);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over valid window positions and then over channels.
double ssim(const Tensor& a, const Tensor& b, Channel channel = Channel::kRgb);

struct EvalRow {
  std::string dataset_id;
  DistortionSpec spec;
  bool seen = false;
  Channel channel = Channel::kRgb;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct GapRow {
  std::string dataset_id;
  DistortionSpec spec;
  double best_seen_psnr = 0.0;
  double unseen_psnr = 0.0;
  double gap_db = 0.0;  // best_seen_psnr - unseen_psnr
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<GapRow> gaps;

  const EvalRow& find(const std::string& dataset_id, const DistortionSpec& spec) const;
};

using Datasets = std::vector<std::pair<std::string, std::vector<CleanImage>>>;

/// Distorts every full image with each seen and unseen spec, restores it and
/// averages PSNR/SSIM per (dataset, spec). Restored images are clamped to
/// [0, 1]. Distortion seeds depend only on (seed, dataset, spec, image), so
/// different networks are scored on identical inputs.
EvalReport evaluate(const RestorationNet& net, const Datasets& datasets, const ConfounderSet& seen,
                    const std::vector<DistortionSpec>& unseen, std::uint64_t seed, Channel channel = Channel::kRgb);

/// Seed of the distorted rendition of image `image` of dataset `dataset` under spec `spec`.
std::uint64_t eval_distortion_seed(std::uint64_t seed, std::size_t dataset, std::size_t spec, std::size_t image);

std::string eval_rows_csv(const EvalReport& report);
std::string eval_gaps_csv(const EvalReport& report);
/// Long-format plot data: series,dataset_id,spec_kind,spec_params,level,seen,psnr_db,ssim.
std::string plot_data_csv(const std::vector<std::pair<std::string, EvalReport>>& series);

}  // namespace dil
