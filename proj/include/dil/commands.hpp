#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dil/config.hpp"

namespace dil {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitVerifyFailed = 2, kExitRuntime = 3 };

/// Training images of the configured dataset.
std::vector<CleanImage> load_train_images(const ExperimentConfig& c);
/// Evaluation datasets of the configured dataset.
Datasets load_eval_datasets(const ExperimentConfig& c);

struct SynthSummary {
  std::size_t clean_files = 0;
  std::size_t distorted_files = 0;
};
/// Writes train/ and eval/ clean PPMs, distorted/ renditions for every train
/// and test spec, and manifest.json under c.output_dir.
SynthSummary cmd_synth_data(const ExperimentConfig& c);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // trainer state to continue from
  std::optional<std::size_t> until;             // stop after this iteration count
  bool quiet = true;
};
/// Trains and writes checkpoint.dilnet, trainer_state.dilopt, train_log.csv and
/// run_summary.json under c.output_dir. Returns kExitRuntime if training aborted.
int cmd_train(const ExperimentConfig& c, const TrainOptions& options = {});

/// Evaluates each checkpoint (default: c.output_dir/checkpoint.dilnet) and writes
/// eval_rows.csv / eval_gaps.csv (per-series subdirectories if several) and plot_data.csv.
std::vector<std::pair<std::string, EvalReport>> cmd_eval(const ExperimentConfig& c,
                                                        const std::vector<std::filesystem::path>& checkpoints);

/// Merges eval_rows.csv files of several evaluation directories into one table
/// with one PSNR/SSIM column pair per run; returns the CSV text.
std::string cmd_report(const std::vector<std::filesystem::path>& eval_dirs, const std::filesystem::path& out);

/// Drops the wall-clock field from a run summary so runs can be compared.
std::string mask_wall_time(const std::string& run_summary_json);

}  // namespace dil
