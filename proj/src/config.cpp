#include "dil/config.hpp"

#include <fstream>
#include <set>

#include "dil/rng.hpp"

namespace dil {

std::string task_name(Task t) {
  switch (t) {
    case Task::kDenoise: return "denoise";
    case Task::kDeblur: return "deblur";
    case Task::kHybrid: return "hybrid";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::kDenoise, Task::kDeblur, Task::kHybrid})
    if (task_name(t) == name) return t;
  throw std::invalid_argument("unknown task '" + name + "' (expected denoise, deblur or hybrid)");
}

std::vector<DistortionSpec> default_train_specs(Task task) {
  switch (task) {
    case Task::kDenoise:
      return {DistortionSpec::awgn(5), DistortionSpec::awgn(10), DistortionSpec::awgn(15), DistortionSpec::awgn(20)};
    case Task::kDeblur:
      return {DistortionSpec::blur(1.0), DistortionSpec::blur(2.0), DistortionSpec::blur(3.0), DistortionSpec::blur(4.0)};
    case Task::kHybrid: return {hybrid_preset("severe")};
  }
  return {};
}

std::vector<DistortionSpec> default_test_specs(Task task) {
  switch (task) {
    case Task::kDenoise: return {DistortionSpec::awgn(30), DistortionSpec::awgn(40), DistortionSpec::awgn(50)};
    case Task::kDeblur:
      return {DistortionSpec::blur(4.2), DistortionSpec::blur(4.4), DistortionSpec::blur(4.6), DistortionSpec::blur(4.8),
              DistortionSpec::blur(5.0)};
    case Task::kHybrid: return {hybrid_preset("mild"), hybrid_preset("moderate")};
  }
  return {};
}

ExperimentConfig default_config(Task task) {
  ExperimentConfig c;
  c.task = task;
  c.train_specs = default_train_specs(task);
  c.test_specs = default_test_specs(task);
  return c;
}

void ExperimentConfig::validate() const {
  if (train_specs.empty()) throw std::invalid_argument("config: train_specs must not be empty");
  for (const auto& s : train_specs) s.validate();
  for (const auto& s : test_specs) {
    s.validate();
    for (const auto& t : train_specs)
      if (s == t) throw std::invalid_argument("config: test spec " + s.label() + " is also a training spec");
  }
  net.validate();
  train.validate(train_specs.size());
  if (train.patch > dataset.h || train.patch > dataset.w) {
    if (dataset.kind == DatasetConfig::Kind::kProcedural)
      throw std::invalid_argument("config: patch size exceeds the procedural image size");
  }
  if (dataset.kind == DatasetConfig::Kind::kProcedural) {
    if (dataset.h < 64 || dataset.w < 64) throw std::invalid_argument("config: procedural images must be at least 64x64");
    if (dataset.count == 0) throw std::invalid_argument("config: dataset.count must be positive");
  } else if (dataset.path.empty()) {
    throw std::invalid_argument("config: directory dataset needs dataset.path");
  }
}

// ---------------------------------------------------------------- JSON

namespace {

Json stage_to_json(const DistortionStage& s) {
  if (const auto* a = std::get_if<Awgn>(&s)) return {{"kind", "awgn"}, {"sigma", a->sigma}};
  if (const auto* b = std::get_if<GaussianBlur>(&s)) return {{"kind", "gaussian_blur"}, {"sigma", b->sigma}};
  return {{"kind", "jpeg_quant"}, {"quality", std::get<JpegQuant>(s).quality}};
}

void require_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

DistortionStage stage_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "awgn") {
    require_keys(j, "awgn spec", {"kind", "sigma"});
    return Awgn{j.at("sigma").get<double>()};
  }
  if (kind == "gaussian_blur") {
    require_keys(j, "gaussian_blur spec", {"kind", "sigma"});
    return GaussianBlur{j.at("sigma").get<double>()};
  }
  if (kind == "jpeg_quant") {
    require_keys(j, "jpeg_quant spec", {"kind", "quality"});
    return JpegQuant{j.at("quality").get<int>()};
  }
  if (kind == "hybrid") throw std::invalid_argument("hybrid specs cannot be nested");
  throw std::invalid_argument("unknown distortion kind '" + kind + "'");
}

std::vector<DistortionSpec> specs_from_json(const Json& j, const char* where) {
  if (!j.is_array()) throw std::invalid_argument(std::string(where) + ": expected an array of specs");
  std::vector<DistortionSpec> out;
  for (const auto& s : j) out.push_back(spec_from_json(s));
  return out;
}

Json specs_to_json(const std::vector<DistortionSpec>& specs) {
  Json a = Json::array();
  for (const auto& s : specs) a.push_back(spec_to_json(s));
  return a;
}

}  // namespace

Json spec_to_json(const DistortionSpec& spec) {
  if (const auto* h = std::get_if<Hybrid>(&spec.kind)) {
    Json stages = Json::array();
    for (const auto& s : h->stages) stages.push_back(stage_to_json(s));
    return {{"kind", "hybrid"}, {"stages", stages}};
  }
  return std::visit(
      [](const auto& s) -> Json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Hybrid>) return {};
        else return stage_to_json(DistortionStage{s});
      },
      spec.kind);
}

DistortionSpec spec_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind")) throw std::invalid_argument("distortion spec needs a 'kind'");
  DistortionSpec spec;
  if (j.at("kind") == "hybrid") {
    require_keys(j, "hybrid spec", {"kind", "stages", "preset"});
    if (j.contains("preset")) {
      if (j.contains("stages")) throw std::invalid_argument("hybrid spec: give either 'preset' or 'stages'");
      spec = hybrid_preset(j.at("preset").get<std::string>());
    } else {
      std::vector<DistortionStage> stages;
      for (const auto& s : j.at("stages")) stages.push_back(stage_from_json(s));
      spec = DistortionSpec::hybrid(std::move(stages));
    }
  } else {
    std::visit([&](const auto& s) { spec.kind = s; }, stage_from_json(j));
  }
  spec.validate();
  return spec;
}

Json config_to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  Json train = {
      {"variant", variant_name(t.variant)},
      {"alpha", t.alpha},
      {"beta", t.beta ? Json(*t.beta) : Json(nullptr)},
      {"loss", loss_name(t.loss.kind)},
      {"epsilon", t.loss.epsilon},
      {"iters", t.iters},
      {"batch", t.batch},
      {"serial_batch", t.serial_batch},
      {"patch", t.patch},
      {"seed", t.seed},
      {"inner_steps_pf", t.inner_steps_pf},
      {"virtual_mode", t.virtual_mode == VirtualMode::kAdam ? "adam" : "sgd"},
      {"adam_beta1", t.adam_beta1},
      {"adam_beta2", t.adam_beta2},
      {"virtual_beta2", t.virtual_beta2},
      {"checkpoint_every", t.checkpoint_every},
  };
  const DatasetConfig& d = c.dataset;
  Json dataset = d.kind == DatasetConfig::Kind::kProcedural
                     ? Json{{"kind", "procedural"}, {"count", d.count}, {"eval_count", d.eval_count},
                            {"h", d.h},            {"w", d.w},         {"seed", d.seed}}
                     : Json{{"kind", "directory"}, {"path", d.path.string()}};
  return {
      {"task", task_name(c.task)},
      {"train_specs", specs_to_json(c.train_specs)},
      {"test_specs", specs_to_json(c.test_specs)},
      {"net",
       {{"in_channels", c.net.in_channels},
        {"hidden_channels", c.net.hidden_channels},
        {"num_layers", c.net.num_layers},
        {"kernel_size", c.net.kernel_size},
        {"residual", c.net.residual}}},
      {"train", train},
      {"dataset", dataset},
      {"eval", {{"channel", channel_name(c.eval.channel)}, {"seed", c.eval.seed}}},
      {"output_dir", c.output_dir.string()},
  };
}

ExperimentConfig config_from_json(const Json& j) {
  require_keys(j, "config", {"task", "train_specs", "test_specs", "net", "train", "dataset", "eval", "output_dir"});
  const Task task = j.contains("task") ? parse_task(j.at("task").get<std::string>()) : Task::kDenoise;
  ExperimentConfig c = default_config(task);
  if (j.contains("train_specs")) c.train_specs = specs_from_json(j.at("train_specs"), "train_specs");
  if (j.contains("test_specs")) c.test_specs = specs_from_json(j.at("test_specs"), "test_specs");
  if (j.contains("net")) {
    const Json& n = j.at("net");
    require_keys(n, "net", {"in_channels", "hidden_channels", "num_layers", "kernel_size", "residual"});
    read(n, "in_channels", c.net.in_channels);
    read(n, "hidden_channels", c.net.hidden_channels);
    read(n, "num_layers", c.net.num_layers);
    read(n, "kernel_size", c.net.kernel_size);
    read(n, "residual", c.net.residual);
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    require_keys(t, "train",
                 {"variant", "alpha", "beta", "loss", "epsilon", "iters", "batch", "serial_batch", "patch", "seed",
                  "inner_steps_pf", "virtual_mode", "adam_beta1", "adam_beta2", "virtual_beta2", "checkpoint_every"});
    TrainConfig& tc = c.train;
    if (t.contains("variant")) tc.variant = parse_variant(t.at("variant").get<std::string>());
    read(t, "alpha", tc.alpha);
    if (t.contains("beta")) {
      if (t.at("beta").is_null()) tc.beta.reset();
      else tc.beta = t.at("beta").get<double>();
    }
    if (t.contains("loss")) tc.loss.kind = parse_loss_kind(t.at("loss").get<std::string>());
    read(t, "epsilon", tc.loss.epsilon);
    read(t, "iters", tc.iters);
    read(t, "batch", tc.batch);
    read(t, "serial_batch", tc.serial_batch);
    read(t, "patch", tc.patch);
    read(t, "seed", tc.seed);
    read(t, "inner_steps_pf", tc.inner_steps_pf);
    if (t.contains("virtual_mode")) {
      const std::string m = t.at("virtual_mode").get<std::string>();
      if (m == "adam") tc.virtual_mode = VirtualMode::kAdam;
      else if (m == "sgd") tc.virtual_mode = VirtualMode::kSgd;
      else throw std::invalid_argument("train.virtual_mode must be 'adam' or 'sgd'");
    }
    read(t, "adam_beta1", tc.adam_beta1);
    read(t, "adam_beta2", tc.adam_beta2);
    read(t, "virtual_beta2", tc.virtual_beta2);
    read(t, "checkpoint_every", tc.checkpoint_every);
  }
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    require_keys(d, "dataset", {"kind", "count", "eval_count", "h", "w", "seed", "path"});
    const std::string kind = d.value("kind", std::string("procedural"));
    if (kind == "procedural") c.dataset.kind = DatasetConfig::Kind::kProcedural;
    else if (kind == "directory") c.dataset.kind = DatasetConfig::Kind::kDirectory;
    else throw std::invalid_argument("dataset.kind must be 'procedural' or 'directory'");
    read(d, "count", c.dataset.count);
    read(d, "eval_count", c.dataset.eval_count);
    read(d, "h", c.dataset.h);
    read(d, "w", c.dataset.w);
    read(d, "seed", c.dataset.seed);
    if (d.contains("path")) c.dataset.path = d.at("path").get<std::string>();
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    require_keys(e, "eval", {"channel", "seed"});
    if (e.contains("channel")) c.eval.channel = parse_channel(e.at("channel").get<std::string>());
    read(e, "seed", c.eval.seed);
  }
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  c.validate();
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty key");
    if (!node->is_object()) *node = Json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (!file.empty()) {
    std::ifstream f(file);
    if (!f) throw std::invalid_argument("cannot open config " + file.string());
    try {
      doc = Json::parse(f);
    } catch (const Json::parse_error& e) {
      throw std::invalid_argument("config " + file.string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  try {
    return config_from_json(doc);
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

std::uint64_t init_seed(const ExperimentConfig& c) { return derive_seed(c.train.seed, 0x1417); }

}  // namespace dil
