#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "advt/experiment.hpp"
#include "advt/landscape.hpp"
#include "advt/metrics_io.hpp"

namespace advt {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumeric = 2 };

namespace cli_detail {

/// "3x16x16" -> {3, 16, 16}
inline void parse_dims(const std::string& s, SynthSpec& spec) {
  std::size_t c = 0, h = 0, w = 0;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || !in.eof() || c == 0 || h == 0 || w == 0) {
    throw ConfigError("--dims expects CxHxW, got '" + s + "'");
  }
  spec.channels = c;
  spec.height = h;
  spec.width = w;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Manifest given explicitly, else the one next to the checkpoint.
inline RunManifest locate_manifest(const std::string& manifest, const std::string& checkpoint) {
  if (!manifest.empty()) return read_manifest(manifest);
  const auto sibling = std::filesystem::path(checkpoint).parent_path() / "manifest.json";
  if (!checkpoint.empty() && std::filesystem::exists(sibling)) return read_manifest(sibling.string());
  RunManifest m;
  m.train = resolve(m.train);
  return m;
}

struct TrainFlags {
  std::string method = "fgsm-sdi", dataset = "synthetic", schedule = "multistep", arch = "cnn", out = "run";
  std::string manifest, dims = "3x16x16";
  std::optional<double> epsilon, alpha, lr, max_lr;
  std::optional<int> steps, k, epochs;
  std::optional<std::size_t> batch_size, train_size, test_size, pool_grid;
  std::optional<std::uint64_t> seed, data_seed;
  std::vector<int> milestones;
  bool no_wall_clock = false, quiet = false;
};

inline RunManifest manifest_from_flags(const TrainFlags& f) {
  RunManifest m;
  if (!f.manifest.empty()) m = read_manifest(f.manifest);
  TrainConfig& t = m.train;
  if (f.manifest.empty()) {
    t.method = parse_method(f.method);
    t.schedule.kind = parse_schedule_kind(f.schedule);
    t.arch = parse_architecture(f.arch);
    m.data.source = f.dataset;
    parse_dims(f.dims, m.data.synth);
  }
  if (f.epsilon) t.epsilon = *f.epsilon;
  if (f.alpha) t.alpha = *f.alpha;
  if (f.steps) t.steps = *f.steps;
  if (f.k) t.k = *f.k;
  if (f.epochs) {
    t.epochs = *f.epochs;
    if (f.manifest.empty() || f.milestones.empty()) t.milestones_set = false;
  }
  if (f.batch_size) t.batch_size = *f.batch_size;
  if (f.pool_grid) t.pool_grid = *f.pool_grid;
  if (f.lr) t.lr = *f.lr;
  if (f.max_lr) t.schedule.max_lr = *f.max_lr;
  if (!f.milestones.empty()) {
    t.schedule.milestones = f.milestones;
    t.milestones_set = true;
  }
  if (f.seed) t.seed = *f.seed;
  if (f.data_seed) m.data.synth.seed = *f.data_seed;
  if (f.train_size) m.data.synth.size = *f.train_size;
  if (f.test_size) m.data.test_size = *f.test_size;
  if (f.no_wall_clock) t.record_wall_clock = false;
  t.dataset = m.data.source;
  t = resolve(t);
  return m;
}

inline int run_train(const TrainFlags& f) {
  const RunManifest m = manifest_from_flags(f);
  const auto data = load_datasets<float>(m.data);
  std::filesystem::create_directories(f.out);
  const auto dir = std::filesystem::path(f.out);
  write_manifest((dir / "manifest.json").string(), m);

  TrainHooks hooks;
  if (!f.quiet) {
    hooks.on_record = [](const MetricsRecord& r) { std::cout << metrics::format_row(r) << '\n' << std::flush; };
    std::cout << metrics::kHeader << '\n';
  }
  auto result = train(m.train, data.train, data.test, hooks);
  metrics::write_csv((dir / "metrics.csv").string(), result.metrics);

  const auto target = result.net.parameters();
  nn::ParameterList<float> gen;
  if (result.generator) gen = result.generator->parameters();
  const auto last_t = nn::snapshot(target);
  const auto last_g = nn::snapshot(gen);
  checkpoint::write_file((dir / "last.advt").string(), make_checkpoint(target, last_t, &gen, &last_g));
  checkpoint::write_file((dir / "best.advt").string(),
                         make_checkpoint(target, result.best_target, &gen, &result.best_generator));

  nlohmann::json summary = {{"best_epoch", result.choice.best_epoch}, {"last_epoch", result.choice.last_epoch}};
  summary["overfit_epoch"] = result.overfit_epoch ? nlohmann::json(*result.overfit_epoch) : nlohmann::json(nullptr);
  std::ofstream((dir / "summary.json").string()) << summary.dump(2) << '\n';
  if (!f.quiet) {
    std::cout << "best epoch " << result.choice.best_epoch << ", last epoch " << result.choice.last_epoch;
    if (result.overfit_epoch) std::cout << ", catastrophic overfitting at epoch " << *result.overfit_epoch;
    std::cout << '\n';
  }
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint, manifest, attacks = "clean,fgsm,pgd10,pgd20,pgd50", out;
  std::optional<std::string> dataset;
  std::optional<double> epsilon;
  std::optional<std::size_t> limit;
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
};

/// Target network restored from `checkpoint`, or freshly initialized from `seed` when empty.
inline TargetNet<float> load_target(const RunManifest& m, const Dataset<float>& ref, const std::string& ck,
                                    std::uint64_t seed) {
  TargetNet<float> net(target_spec_for(m.train, ref));
  net.init_params(seed);
  if (!ck.empty()) checkpoint::load_into(checkpoint::read_file(ck), net.parameters());
  return net;
}

inline int run_eval(const EvalFlags& f) {
  RunManifest m = locate_manifest(f.manifest, f.checkpoint);
  if (f.dataset) m.data.source = *f.dataset;
  if (f.limit) m.data.test_limit = *f.limit;
  const double eps = f.epsilon.value_or(m.train.epsilon);
  std::vector<AttackSpec> attacks;
  for (const auto& name : split_list(f.attacks)) attacks.push_back(parse_attack(name, eps));
  if (attacks.empty()) throw ConfigError("--attacks is empty");
  const auto data = load_datasets<float>(m.data);
  const auto net = load_target(m, data.test, f.checkpoint, f.seed);
  const auto results = evaluate_robust_accuracy(net, data.test, attacks, f.batch_size, f.seed);
  std::string csv = "attack,accuracy,loss,examples\n";
  for (const auto& r : results) {
    csv += r.name + ',' + metrics::format_double(r.accuracy) + ',' + metrics::format_double(r.loss) + ',' +
           std::to_string(r.examples) + '\n';
  }
  std::cout << csv;
  if (!f.out.empty()) {
    std::ofstream o(f.out, std::ios::trunc);
    if (!o) throw FormatError("cannot open '" + f.out + "' for writing");
    o << csv;
  }
  return kExitOk;
}

struct LandscapeFlags {
  std::string checkpoint, manifest, out = "landscape.txt";
  std::size_t resolution = 21, samples = 100;
  std::optional<double> epsilon;
  std::uint64_t seed = 0;
};

inline int run_landscape(const LandscapeFlags& f) {
  const RunManifest m = locate_manifest(f.manifest, f.checkpoint);
  const auto data = load_datasets<float>(m.data);
  const auto net = load_target(m, data.test, f.checkpoint, f.seed);
  const auto sub = data.test.head(f.samples);
  std::vector<std::size_t> idx(sub.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto grid = export_landscape(net, sub.gather(idx, 1), f.epsilon.value_or(m.train.epsilon), f.resolution, f.seed);
  write_landscape(f.out, grid);
  std::cout << "wrote " << f.resolution << "x" << f.resolution << " grid to " << f.out << " (origin loss "
            << metrics::format_double(grid.origin()) << ")\n";
  return kExitOk;
}

struct SynthFlags {
  std::size_t classes = 10, size = 2000, test_size = 500;
  std::string dims = "3x16x16", out;
  std::uint64_t seed = 0;
  double noise = SynthSpec{}.noise, contrast = SynthSpec{}.contrast;
};

inline int run_synth(const SynthFlags& f) {
  SynthSpec spec;
  spec.classes = f.classes;
  spec.size = f.size;
  spec.seed = f.seed;
  spec.noise = f.noise;
  spec.contrast = f.contrast;
  parse_dims(f.dims, spec);
  if (spec.classes > 256) throw ConfigError("record format holds at most 256 classes");
  SynthSpec test_spec = spec;
  test_spec.size = f.test_size;
  const auto dir = std::filesystem::path(f.out.empty() ? (data_dir() / "synthetic").string() : f.out);
  std::filesystem::create_directories(dir);
  write_records((dir / "train.bin").string(), synth_dataset<float>(spec, 1, "train"));
  write_records((dir / "test.bin").string(), synth_dataset<float>(test_spec, 2, "test"));
  nlohmann::json meta = {{"classes", spec.classes}, {"channels", spec.channels}, {"height", spec.height},
                         {"width", spec.width},     {"train_size", spec.size},   {"test_size", test_spec.size},
                         {"seed", spec.seed},       {"noise", spec.noise},       {"contrast", spec.contrast}};
  std::ofstream((dir / "meta.json").string()) << meta.dump(2) << '\n';
  std::cout << "wrote " << spec.size << " train and " << test_spec.size << " test records to " << dir.string()
            << '\n';
  return kExitOk;
}

}  // namespace cli_detail

/// Entry point of the command-line tool. Returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Adversarial training with learnable sample-dependent initialization", "advt"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a target network");
  train_cmd->add_option("--method", tf.method, "pgd-at | fgsm-at | fgsm-rs | fgsm-sdi | pgd2-at | pgd4-at")
      ->capture_default_str();
  train_cmd->add_option("--dataset", tf.dataset, "synthetic | cifar10 | directory with train.bin/test.bin")
      ->capture_default_str();
  train_cmd->add_option("--epsilon", tf.epsilon, "L-inf radius in [0,1] pixel units (default 8/255)");
  train_cmd->add_option("--alpha", tf.alpha, "Attack step size (default depends on method)");
  train_cmd->add_option("--steps", tf.steps, "Attack iterations (default depends on method)");
  train_cmd->add_option("--k", tf.k, "Generator update interval (default 20)");
  train_cmd->add_option("--epochs", tf.epochs, "Training epochs (default 20)");
  train_cmd->add_option("--batch-size", tf.batch_size, "Batch size (default 50)");
  train_cmd->add_option("--lr", tf.lr, "Initial learning rate (default 0.1)");
  train_cmd->add_option("--schedule", tf.schedule, "multistep | cyclic")->capture_default_str();
  train_cmd->add_option("--milestones", tf.milestones, "Multistep decay epochs (1-based)")->delimiter(',');
  train_cmd->add_option("--max-lr", tf.max_lr, "Cyclic peak learning rate (default 0.2)");
  train_cmd->add_option("--arch", tf.arch, "linear | mlp | cnn")->capture_default_str();
  train_cmd->add_option("--pool-grid", tf.pool_grid, "CNN head pooled grid side (default 2)");
  train_cmd->add_option("--seed", tf.seed, "Run seed (default 0)");
  train_cmd->add_option("--data-seed", tf.data_seed, "Synthetic data seed (default 0)");
  train_cmd->add_option("--dims", tf.dims, "Synthetic image dims CxHxW")->capture_default_str();
  train_cmd->add_option("--train-size", tf.train_size, "Synthetic training-set size (default 2000)");
  train_cmd->add_option("--test-size", tf.test_size, "Synthetic test-set size (default 500)");
  train_cmd->add_option("--manifest", tf.manifest, "Re-run from a manifest; other flags override it");
  train_cmd->add_option("--out", tf.out, "Run directory")->capture_default_str();
  train_cmd->add_flag("--no-wall-clock", tf.no_wall_clock, "Write 0 in the wall_ms column");
  train_cmd->add_flag("--quiet", tf.quiet, "Do not stream metrics to stdout");

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "Robust accuracy of a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "Checkpoint file (omit for a freshly initialized net)");
  eval_cmd->add_option("--manifest", ef.manifest, "Run manifest (default: next to the checkpoint)");
  eval_cmd->add_option("--attacks", ef.attacks, "Comma list of clean, fgsm, pgd<N>")->capture_default_str();
  eval_cmd->add_option("--dataset", ef.dataset, "Override the manifest's dataset");
  eval_cmd->add_option("--epsilon", ef.epsilon, "Override the manifest's epsilon");
  eval_cmd->add_option("--limit", ef.limit, "Evaluate only the first N test samples");
  eval_cmd->add_option("--batch-size", ef.batch_size)->capture_default_str();
  eval_cmd->add_option("--seed", ef.seed, "Attack and fresh-init seed")->capture_default_str();
  eval_cmd->add_option("--out", ef.out, "Also write the results CSV here");

  LandscapeFlags lf;
  auto* land_cmd = app.add_subcommand("landscape", "Export a loss-landscape grid");
  land_cmd->add_option("--checkpoint", lf.checkpoint, "Checkpoint file (omit for a freshly initialized net)");
  land_cmd->add_option("--manifest", lf.manifest, "Run manifest (default: next to the checkpoint)");
  land_cmd->add_option("--resolution", lf.resolution, "Odd grid size")->capture_default_str();
  land_cmd->add_option("--epsilon", lf.epsilon, "Direction scale (default: manifest epsilon)");
  land_cmd->add_option("--samples", lf.samples, "Test samples in the anchor batch")->capture_default_str();
  land_cmd->add_option("--seed", lf.seed, "Rademacher direction seed")->capture_default_str();
  land_cmd->add_option("--out", lf.out, "Output grid file")->capture_default_str();

  SynthFlags sf;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic dataset in the binary record format");
  synth_cmd->add_option("--classes", sf.classes)->capture_default_str();
  synth_cmd->add_option("--size", sf.size, "Training records")->capture_default_str();
  synth_cmd->add_option("--test-size", sf.test_size, "Test records")->capture_default_str();
  synth_cmd->add_option("--dims", sf.dims, "CxHxW")->capture_default_str();
  synth_cmd->add_option("--seed", sf.seed)->capture_default_str();
  synth_cmd->add_option("--noise", sf.noise)->capture_default_str();
  synth_cmd->add_option("--contrast", sf.contrast)->capture_default_str();
  synth_cmd->add_option("--out", sf.out, "Output directory (default: $ADVT_DATA_DIR/synthetic)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == train_cmd) return run_train(tf);
    if (active == eval_cmd) return run_eval(ef);
    if (active == land_cmd) return run_landscape(lf);
    return run_synth(sf);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n\n" << active->help();
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

inline int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }

}  // namespace advt
