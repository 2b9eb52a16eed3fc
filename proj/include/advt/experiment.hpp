#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "advt/checkpoint.hpp"
#include "advt/data.hpp"
#include "advt/training.hpp"

namespace advt {

inline constexpr int kManifestVersion = 1;

/// Where the training and test sets come from.
///   "synthetic"        class-template data built in memory from `synth`
///   "cifar10"          CIFAR-10 binary batches under the data directory
///   any other string   a directory holding train.bin / test.bin (+ meta.json)
struct DataConfig {
  std::string source = "synthetic";
  SynthSpec synth;  // synth.size is the training-set size
  std::size_t test_size = 500;
  std::optional<std::size_t> train_limit;
  std::optional<std::size_t> test_limit;
};

template <typename T>
struct DataSplits {
  Dataset<T> train;
  Dataset<T> test;
};

/// Value of the data-directory environment variable, or "data".
inline std::filesystem::path data_dir() {
  const char* env = std::getenv("ADVT_DATA_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("data");
}

/// Resolves a relative path against the data directory when it does not exist as given.
inline std::filesystem::path resolve_data_path(const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || std::filesystem::exists(path)) return path;
  return data_dir() / path;
}

inline RecordLayout read_layout(const std::filesystem::path& dir) {
  const auto meta = dir / "meta.json";
  if (!std::filesystem::exists(meta)) return {};
  std::ifstream f(meta);
  nlohmann::json j;
  try {
    f >> j;
    return {j.at("channels").get<std::size_t>(), j.at("height").get<std::size_t>(),
            j.at("width").get<std::size_t>(), j.at("classes").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad dataset metadata '" + meta.string() + "': " + e.what());
  }
}

template <typename T>
Dataset<T> concat_datasets(const std::vector<Dataset<T>>& parts, std::string split) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Shape shape = parts.front().images.shape();
  shape[0] = total;
  Dataset<T> out{Tensor<T>(shape), {}, parts.front().num_classes, std::move(split), {}};
  auto dst = out.images.data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto src = p.images.data();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(off));
    off += src.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.provenance += (out.provenance.empty() ? "" : ";") + p.provenance;
  }
  return out;
}

template <typename T>
DataSplits<T> load_datasets(const DataConfig& cfg) {
  DataSplits<T> d;
  if (cfg.source == "synthetic") {
    SynthSpec test_spec = cfg.synth;
    test_spec.size = cfg.test_size;
    d.train = synth_dataset<T>(cfg.synth, 1, "train");
    d.test = synth_dataset<T>(test_spec, 2, "test");
  } else if (cfg.source == "cifar10") {
    const auto dir = data_dir() / "cifar-10-batches-bin";
    std::vector<Dataset<T>> parts;
    for (int i = 1; i <= 5; ++i) {
      parts.push_back(load_cifar_binary<T>((dir / ("data_batch_" + std::to_string(i) + ".bin")).string()));
    }
    d.train = concat_datasets(parts, "train");
    d.test = load_cifar_binary<T>((dir / "test_batch.bin").string(), {}, std::nullopt, "test");
  } else {
    const auto dir = resolve_data_path(cfg.source);
    const auto layout = read_layout(dir);
    d.train = load_cifar_binary<T>((dir / "train.bin").string(), layout, std::nullopt, "train");
    d.test = load_cifar_binary<T>((dir / "test.bin").string(), layout, std::nullopt, "test");
  }
  if (cfg.train_limit) d.train = d.train.head(*cfg.train_limit);
  if (cfg.test_limit) d.test = d.test.head(*cfg.test_limit);
  d.train.validate();
  d.test.validate();
  return d;
}

/// Full description of a run; enough to re-execute it bit-identically.
struct RunManifest {
  TrainConfig train;
  DataConfig data;
};

inline nlohmann::json to_json(const RunManifest& m) {
  const TrainConfig c = resolve(m.train);
  nlohmann::json j;
  j["format_version"] = kManifestVersion;
  j["checkpoint_format_version"] = checkpoint::kVersion;
  j["seed"] = c.seed;
  j["config"] = {
      {"method", to_string(c.method)},
      {"epochs", c.epochs},
      {"k", c.k},
      {"epsilon", c.epsilon},
      {"alpha", *c.alpha},
      {"steps", *c.steps},
      {"clip_to_valid", c.clip_to_valid},
      {"lr", c.lr},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"schedule",
       {{"kind", to_string(c.schedule.kind)},
        {"milestones", c.schedule.milestones},
        {"factor", c.schedule.factor},
        {"max_lr", c.schedule.max_lr}}},
      {"gen_lr", c.gen_lr},
      {"gen_momentum", c.gen_momentum},
      {"gen_weight_decay", c.gen_weight_decay},
      {"batch_size", c.batch_size},
      {"eval_subset", c.eval_subset},
      {"arch", to_string(c.arch)},
      {"pool_grid", c.pool_grid},
      {"record_wall_clock", c.record_wall_clock},
  };
  nlohmann::json data = {{"source", m.data.source},
                         {"classes", m.data.synth.classes},
                         {"train_size", m.data.synth.size},
                         {"test_size", m.data.test_size},
                         {"channels", m.data.synth.channels},
                         {"height", m.data.synth.height},
                         {"width", m.data.synth.width},
                         {"noise", m.data.synth.noise},
                         {"contrast", m.data.synth.contrast},
                         {"seed", m.data.synth.seed}};
  data["train_limit"] = m.data.train_limit ? nlohmann::json(*m.data.train_limit) : nlohmann::json(nullptr);
  data["test_limit"] = m.data.test_limit ? nlohmann::json(*m.data.test_limit) : nlohmann::json(nullptr);
  j["dataset"] = data;
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kManifestVersion) {
      throw ConfigError("manifest: unsupported format version");
    }
    RunManifest m;
    const auto& c = j.at("config");
    TrainConfig& t = m.train;
    t.method = parse_method(c.at("method").get<std::string>());
    t.epochs = c.at("epochs").get<int>();
    t.k = c.at("k").get<int>();
    t.epsilon = c.at("epsilon").get<double>();
    t.alpha = c.at("alpha").get<double>();
    t.steps = c.at("steps").get<int>();
    t.clip_to_valid = c.at("clip_to_valid").get<bool>();
    t.lr = c.at("lr").get<double>();
    t.momentum = c.at("momentum").get<double>();
    t.weight_decay = c.at("weight_decay").get<double>();
    const auto& s = c.at("schedule");
    t.schedule.kind = parse_schedule_kind(s.at("kind").get<std::string>());
    t.schedule.milestones = s.at("milestones").get<std::vector<int>>();
    t.schedule.factor = s.at("factor").get<double>();
    t.schedule.max_lr = s.at("max_lr").get<double>();
    t.milestones_set = true;
    t.gen_lr = c.at("gen_lr").get<double>();
    t.gen_momentum = c.at("gen_momentum").get<double>();
    t.gen_weight_decay = c.at("gen_weight_decay").get<double>();
    t.batch_size = c.at("batch_size").get<std::size_t>();
    t.eval_subset = c.at("eval_subset").get<std::size_t>();
    t.arch = parse_architecture(c.at("arch").get<std::string>());
    t.pool_grid = c.at("pool_grid").get<std::size_t>();
    t.record_wall_clock = c.at("record_wall_clock").get<bool>();
    t.seed = j.at("seed").get<std::uint64_t>();

    const auto& d = j.at("dataset");
    m.data.source = d.at("source").get<std::string>();
    t.dataset = m.data.source;
    m.data.synth.classes = d.at("classes").get<std::size_t>();
    m.data.synth.size = d.at("train_size").get<std::size_t>();
    m.data.test_size = d.at("test_size").get<std::size_t>();
    m.data.synth.channels = d.at("channels").get<std::size_t>();
    m.data.synth.height = d.at("height").get<std::size_t>();
    m.data.synth.width = d.at("width").get<std::size_t>();
    m.data.synth.noise = d.at("noise").get<double>();
    m.data.synth.contrast = d.at("contrast").get<double>();
    m.data.synth.seed = d.at("seed").get<std::uint64_t>();
    if (!d.at("train_limit").is_null()) m.data.train_limit = d.at("train_limit").get<std::size_t>();
    if (!d.at("test_limit").is_null()) m.data.test_limit = d.at("test_limit").get<std::size_t>();
    m.train = resolve(m.train);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f << to_json(m).dump(2) << '\n';
}

inline RunManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest '" + path + "': " + e.what());
  }
  return manifest_from_json(j);
}

/// Checkpoint with target tensors under their own names and generator tensors under "gen.".
template <typename T>
checkpoint::Checkpoint make_checkpoint(const nn::ParameterList<T>& target, const std::vector<std::vector<T>>& target_values,
                                       const nn::ParameterList<T>* gen = nullptr,
                                       const std::vector<std::vector<T>>* gen_values = nullptr) {
  checkpoint::Checkpoint ck;
  auto add = [&ck](const nn::ParameterList<T>& params, const std::vector<std::vector<T>>& values,
                   const std::string& prefix) {
    if (values.size() != params.size()) throw ShapeError("make_checkpoint: value count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.entries.push_back(checkpoint::make_entry(prefix + params[i].name,
                                                  Tensor<T>(params[i].tensor.shape(), values[i])));
    }
  };
  add(target, target_values, "");
  if (gen && gen_values && !gen_values->empty()) add(*gen, *gen_values, "gen.");
  return ck;
}

}  // namespace advt
