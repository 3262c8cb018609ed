#include "dil/commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dil/image_io.hpp"
#include "dil/rng.hpp"

namespace dil {

namespace fs = std::filesystem;

namespace {

std::vector<CleanImage> read_ppm_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<CleanImage> out;
  for (const auto& f : files) {
    CleanImage img{read_ppm(f), f.stem().string()};
    validate_image(img.pixels);
    out.push_back(std::move(img));
  }
  if (out.empty()) throw std::runtime_error("no .ppm files in " + dir.string());
  return out;
}

std::vector<CleanImage> procedural(const DatasetConfig& d, std::uint64_t split, std::size_t count) {
  std::vector<CleanImage> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_clean_image(derive_seed(d.seed, {split, i}), d.h, d.w));
  return out;
}

std::string index_name(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw std::runtime_error("cannot create output directory " + p.string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<CleanImage> load_train_images(const ExperimentConfig& c) {
  if (c.dataset.kind == DatasetConfig::Kind::kProcedural) return procedural(c.dataset, 0, c.dataset.count);
  return read_ppm_dir(c.dataset.path / "train");
}

Datasets load_eval_datasets(const ExperimentConfig& c) {
  if (c.dataset.kind == DatasetConfig::Kind::kProcedural) {
    if (c.dataset.eval_count == 0) throw std::invalid_argument("dataset.eval_count must be positive for evaluation");
    return {{"procedural-eval", procedural(c.dataset, 1, c.dataset.eval_count)}};
  }
  return {{c.dataset.path.filename().string() + "-eval", read_ppm_dir(c.dataset.path / "eval")}};
}

SynthSummary cmd_synth_data(const ExperimentConfig& c) {
  const fs::path root = c.output_dir;
  ensure_dir(root / "train");
  ensure_dir(root / "eval");
  ensure_dir(root / "distorted");
  std::vector<std::pair<DistortionSpec, std::string>> specs;
  for (const auto& s : c.train_specs) specs.emplace_back(s, "train");
  for (const auto& s : c.test_specs) specs.emplace_back(s, "test");

  Json files = Json::array();
  SynthSummary summary;
  const std::vector<std::pair<std::string, std::vector<CleanImage>>> splits{
      {"train", load_train_images(c)},
      {"eval", c.dataset.kind == DatasetConfig::Kind::kProcedural ? procedural(c.dataset, 1, c.dataset.eval_count)
                                                                 : load_eval_datasets(c).front().second}};
  for (std::size_t sp = 0; sp < splits.size(); ++sp) {
    const auto& [split, images] = splits[sp];
    for (std::size_t i = 0; i < images.size(); ++i) {
      const std::string clean_name = split + "/" + index_name(i) + ".ppm";
      write_ppm(images[i].pixels, root / clean_name);
      ++summary.clean_files;
      files.push_back({{"file", clean_name}, {"source_id", images[i].source_id}, {"split", split}, {"spec", nullptr},
                       {"seed", nullptr}});
      for (std::size_t s = 0; s < specs.size(); ++s) {
        const std::uint64_t seed = derive_seed(c.dataset.seed, {3, sp, i, s});
        const std::string name = "distorted/" + split + "_" + index_name(i) + "__" + specs[s].second + "_s" +
                                 std::to_string(s) + ".ppm";
        write_ppm(apply_distortion(images[i], specs[s].first, seed), root / name);
        ++summary.distorted_files;
        files.push_back({{"file", name},
                         {"source_id", images[i].source_id},
                         {"split", split},
                         {"role", specs[s].second},
                         {"spec", spec_to_json(specs[s].first)},
                         {"seed", seed}});
      }
    }
  }
  const Json manifest = {{"format", "dil-corpus v1"}, {"config", config_to_json(c)}, {"files", files}};
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

int cmd_train(const ExperimentConfig& c, const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  ensure_dir(c.output_dir);
  const std::vector<CleanImage> images = load_train_images(c);
  const ConfounderSet set(c.train_specs);
  const RestorationNet net = RestorationNet::init(c.net, init_seed(c));
  TrainerState state = TrainerState::initial(net.params(), c.train);
  if (options.resume) state = decode_trainer_state(read_file(*options.resume), net.params());

  const fs::path log_path = c.output_dir / "train_log.csv";
  const bool append = state.iteration > 0 && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  if (!append) log << train_log_header(set.size());

  const std::size_t n = set.size();
  const Variant variant = c.train.variant;
  auto on_step = [&](const StepReport& r, const TrainerState& s) {
    log << train_log_row(r, variant, n);
    log.flush();
    if (!options.quiet && (s.iteration % 100 == 0 || s.iteration == c.train.iters)) {
      std::cerr << "iter " << s.iteration << "/" << c.train.iters << " loss " << r.outer_loss << "\n";
    }
    if (c.train.checkpoint_every > 0 && s.iteration % c.train.checkpoint_every == 0) {
      save_checkpoint(net.with_params(s.theta), c.output_dir / ("checkpoint_" + index_name(s.iteration) + ".dilnet"));
    }
  };
  TrainResult result = train(net, images, set, c.train, state, options.until, on_step);
  log.close();

  save_checkpoint(result.net, c.output_dir / "checkpoint.dilnet");
  write_file(c.output_dir / "trainer_state.dilopt", encode_trainer_state(result.state));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Json summary = {
      {"variant", variant_name(variant)},
      {"iterations_completed", result.state.iteration},
      {"final_outer_loss", result.reports.empty() ? Json(nullptr) : Json(result.reports.back().outer_loss)},
      {"aborted", result.aborted},
      {"error", result.error},
      {"parameter_count", net.params().size()},
      {"wall_time_s", wall},
      {"config", config_to_json(c)},
  };
  write_file(c.output_dir / "run_summary.json", summary.dump(2) + "\n");
  if (result.aborted) {
    std::cerr << "training aborted at " << result.error << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

std::vector<std::pair<std::string, EvalReport>> cmd_eval(const ExperimentConfig& c, const std::vector<fs::path>& checkpoints) {
  std::vector<fs::path> paths = checkpoints;
  if (paths.empty()) paths.push_back(c.output_dir / "checkpoint.dilnet");
  for (const auto& p : paths)
    if (!fs::exists(p)) throw std::invalid_argument("checkpoint " + p.string() + " does not exist");
  ensure_dir(c.output_dir);
  const Datasets datasets = load_eval_datasets(c);
  const ConfounderSet seen(c.train_specs);

  std::vector<std::pair<std::string, EvalReport>> series;
  for (std::size_t k = 0; k < paths.size(); ++k) {
    std::string name = paths[k].parent_path().filename().string();
    if (name.empty() || name == ".") name = paths[k].stem().string();
    for (const auto& [existing, report] : series)
      if (existing == name) name += "_" + std::to_string(k);
    const RestorationNet net = load_checkpoint(paths[k]);
    EvalReport report = evaluate(net, datasets, seen, c.test_specs, c.eval.seed, c.eval.channel);
    const fs::path dir = paths.size() == 1 ? c.output_dir : c.output_dir / name;
    ensure_dir(dir);
    write_file(dir / "eval_rows.csv", eval_rows_csv(report));
    write_file(dir / "eval_gaps.csv", eval_gaps_csv(report));
    series.emplace_back(name, std::move(report));
  }
  write_file(c.output_dir / "plot_data.csv", plot_data_csv(series));
  return series;
}

std::string cmd_report(const std::vector<fs::path>& eval_dirs, const fs::path& out) {
  if (eval_dirs.empty()) throw std::invalid_argument("report: no evaluation directories given");
  using Key = std::vector<std::string>;  // dataset, kind, params, seen, channel
  std::vector<Key> order;
  std::map<Key, std::vector<std::pair<std::string, std::string>>> cells;
  std::vector<std::string> runs;
  for (std::size_t r = 0; r < eval_dirs.size(); ++r) {
    const fs::path file = fs::is_directory(eval_dirs[r]) ? eval_dirs[r] / "eval_rows.csv" : eval_dirs[r];
    std::istringstream in(read_file(file));
    std::string line;
    std::getline(in, line);
    if (split_csv_line(line).size() != 7) throw std::runtime_error(file.string() + " is not an eval_rows.csv file");
    std::string run = (fs::is_directory(eval_dirs[r]) ? eval_dirs[r] : eval_dirs[r].parent_path()).filename().string();
    if (run.empty()) run = "run" + std::to_string(r);
    runs.push_back(run);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 7) throw std::runtime_error(file.string() + ": malformed row '" + line + "'");
      Key key{f[0], f[1], f[2], f[3], f[4]};
      auto& row = cells[key];
      if (row.empty()) order.push_back(key);
      row.resize(runs.size());
      row[r] = {f[5], f[6]};
    }
  }
  std::string csv = "dataset_id,spec_kind,spec_params,seen,channel";
  for (const auto& run : runs) csv += ",psnr_db_" + run + ",ssim_" + run;
  csv += "\n";
  for (const Key& key : order) {
    auto row = cells[key];
    row.resize(runs.size());
    csv += key[0] + "," + key[1] + "," + key[2] + "," + key[3] + "," + key[4];
    for (const auto& [p, s] : row) csv += "," + p + "," + s;
    csv += "\n";
  }
  if (!out.empty()) {
    ensure_dir(out);
    write_file(out / "report.csv", csv);
  }
  return csv;
}

std::string mask_wall_time(const std::string& run_summary_json) {
  Json j = Json::parse(run_summary_json);
  j.erase("wall_time_s");
  return j.dump(2);
}

}  // namespace dil
