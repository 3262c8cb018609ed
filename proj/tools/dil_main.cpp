#include <iostream>

#include "CLI11.hpp"
#include "dil/checks.hpp"
#include "dil/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON configuration file");
  cmd->add_option("--set", f.sets, "Override a config key, e.g. --set train.iters=500 (repeatable)");
  cmd->add_option("--seed", f.seed, "Training seed (train.seed)");
  cmd->add_option("--out", f.out, "Output directory (output_dir)");
}

dil::ExperimentConfig resolve(const CommonFlags& f) {
  std::vector<std::string> overrides = f.sets;
  if (f.seed) overrides.push_back("train.seed=" + std::to_string(*f.seed));
  if (!f.out.empty()) overrides.push_back("output_dir=" + dil::Json(f.out).dump());
  return dil::load_config(f.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distortion-invariant restoration training and evaluation"};
  app.require_subcommand(1);

  CommonFlags synth_f, train_f, eval_f;
  auto* synth = app.add_subcommand("synth-data", "Write the clean corpus, its distorted renditions and a manifest");
  add_common(synth, synth_f);

  auto* train = app.add_subcommand("train", "Train the configured variant");
  add_common(train, train_f);
  std::string resume;
  std::optional<std::size_t> until;
  bool verbose = false;
  train->add_option("--resume", resume, "Trainer state (trainer_state.dilopt) to continue from");
  train->add_option("--until", until, "Stop once this many iterations are done");
  train->add_flag("-v,--verbose", verbose, "Print progress");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on seen and unseen distortions");
  add_common(eval, eval_f);
  std::vector<std::string> checkpoints;
  eval->add_option("--checkpoint", checkpoints, "Checkpoint to evaluate (repeatable)");

  auto* verify = app.add_subcommand("verify", "Run the invariant suite");

  auto* report = app.add_subcommand("report", "Merge eval_rows.csv files into one comparison table");
  std::vector<std::string> report_dirs;
  std::string report_out;
  report->add_option("dirs", report_dirs, "Evaluation directories or eval_rows.csv files")->required();
  report->add_option("--out", report_out, "Directory for report.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? dil::kExitOk : dil::kExitUsage;
  }

  dil::ExperimentConfig config;
  try {
    if (*synth) config = resolve(synth_f);
    if (*train) config = resolve(train_f);
    if (*eval) config = resolve(eval_f);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return dil::kExitUsage;
  }

  try {
    if (*synth) {
      const auto s = dil::cmd_synth_data(config);
      std::cout << "wrote " << s.clean_files << " clean and " << s.distorted_files << " distorted images to "
                << config.output_dir.string() << "\n";
      return dil::kExitOk;
    }
    if (*train) {
      dil::TrainOptions opts;
      if (!resume.empty()) opts.resume = resume;
      opts.until = until;
      opts.quiet = !verbose;
      const int rc = dil::cmd_train(config, opts);
      if (rc == dil::kExitOk) std::cout << "training finished, outputs in " << config.output_dir.string() << "\n";
      return rc;
    }
    if (*eval) {
      std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
      for (const auto& [name, rep] : dil::cmd_eval(config, paths)) {
        std::cout << "[" << name << "]\n" << dil::eval_rows_csv(rep);
      }
      return dil::kExitOk;
    }
    if (*verify) {
      const auto results = dil::run_verify_suite();
      std::cout << dil::format_verify_table(results);
      for (const auto& r : results)
        if (!r.passed) return dil::kExitVerifyFailed;
      return dil::kExitOk;
    }
    if (*report) {
      std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
      std::cout << dil::cmd_report(dirs, report_out);
      return dil::kExitOk;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dil::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return dil::kExitRuntime;
  }
  return dil::kExitUsage;
}
