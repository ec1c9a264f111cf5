#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>

#include "rockres/augment.hpp"
#include "rockres/config.hpp"
#include "rockres/errors.hpp"
#include "rockres/gradcheck.hpp"
#include "rockres/train.hpp"

namespace fs = std::filesystem;

namespace rockres::cli {

namespace {

constexpr const char* kSections[] = {"model.", "train.", "data.", "augment."};

/// `--section.key=value` arguments are configuration overrides, not options.
bool is_override(const std::string& arg) {
  if (!arg.starts_with("--") || arg.find('=') == std::string::npos) return false;
  return std::any_of(std::begin(kSections), std::end(kSections),
                     [&](const char* s) { return arg.compare(2, std::string(s).size(), s) == 0; });
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    apply_overrides(cfg, overrides);
    return cfg;
  }
};

/// The dataset decides the class count unless it was set explicitly.
void bind_classes(RunConfig& cfg, const Dataset& data) {
  const auto k = static_cast<std::int64_t>(data.train.num_classes());
  if (!cfg.is_explicit("model.num_classes")) {
    cfg.model.num_classes = k;
  } else if (cfg.model.num_classes != k) {
    throw ConfigError("model.num_classes=" + std::to_string(cfg.model.num_classes) + " but the dataset has " +
                      std::to_string(k) + " classes");
  }
}

std::string data_root(const std::string& flag, const RunConfig& cfg) {
  const std::string root = flag.empty() ? cfg.data.root : flag;
  if (root.empty()) throw ConfigError("no dataset given (--data or data.root)");
  return root;
}

int cmd_augment(const Common& common, const std::string& src, const std::string& dst, std::ostream& out) {
  const RunConfig cfg = common.resolve();
  cfg.augment.validate();
  if (!fs::is_directory(src)) throw IoError("source directory not found: " + src);
  make_dir(dst);
  write_text(fs::path(dst) / "config.txt", cfg.to_text());
  const Manifest m = expand_dataset(src, dst, cfg.augment);
  out << "sources=" << m.source_images << " outputs=" << m.entries.size() << " skipped=" << m.skipped.size()
      << " manifest=" << (fs::path(dst) / kManifestFile).string() << "\n";
  return kOk;
}

int cmd_train(const Common& common, const std::string& data_flag, const std::string& out_dir, std::ostream& out) {
  RunConfig cfg = common.resolve();
  const std::string root = data_root(data_flag, cfg);
  cfg.data.root = root;
  const Dataset data = load_dataset(root);
  bind_classes(cfg, data);
  cfg.model.validate();
  cfg.train.validate();
  make_dir(out_dir);
  write_text(fs::path(out_dir) / "config.txt", cfg.to_text());
  Network<float> model(cfg.model);
  out << kMetricsHeader << "\n";
  const TrainResult result = train(model, data, cfg.train, cfg.data.seed,
                                   [&](const MetricsRecord& r) { out << to_csv_row(r) << "\n" << std::flush; });
  result.checkpoint.save(fs::path(out_dir) / "checkpoint.rkcp");
  write_text(fs::path(out_dir) / "metrics.csv", metrics_csv(result.metrics));
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_flag, const std::string& split_name,
             std::ostream& out) {
  const Split split = parse_split(split_name);
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  if (data_flag.empty()) throw ConfigError("no dataset given (--data)");
  const DatasetIndex index = scan_dataset(fs::path(data_flag) / to_string(split), split);
  Network<float> model(ckpt.model_config());
  const MetricsRecord r = evaluate(model, ckpt, index);
  out << to_csv_row(r) << "\n";
  return kOk;
}

int cmd_ablate(const Common& common, const std::string& preset, const std::string& data_flag,
               const std::string& out_dir, std::ostream& out, std::ostream& err) {
  RunConfig cfg = common.resolve();
  ablation_preset(preset, cfg.model);  // rejects unknown presets before touching data
  const std::string root = data_root(data_flag, cfg);
  cfg.data.root = root;
  const Dataset raw = load_dataset(root);
  bind_classes(cfg, raw);
  cfg.train.validate();
  make_dir(out_dir);
  write_text(fs::path(out_dir) / "config.txt", cfg.to_text());

  std::unique_ptr<Dataset> augmented;
  const DatasetProvider provider = [&](const std::string& variant) -> const Dataset& {
    if (variant.empty()) return raw;
    if (variant != "augmented") throw ConfigError("unknown dataset variant " + variant);
    if (!augmented) {
      const fs::path dir = fs::path(out_dir) / "augmented";
      expand_dataset(fs::path(root) / "train", dir / "train", cfg.augment);
      augmented = std::make_unique<Dataset>(Dataset{scan_dataset(dir / "train", Split::train), raw.test});
    }
    return *augmented;
  };
  const std::vector<GridEntry> grid = ablation_preset(preset, cfg.model);
  const auto rows = run_ablation(grid, provider, cfg.train, cfg.data.seed, [&](const AblationRow& r) {
    if (r.error.empty()) {
      out << r.entry.config_id << " test_accuracy=" << format_double(r.test_accuracy)
          << " param_count=" << r.param_count << "\n" << std::flush;
    } else {
      err << r.entry.config_id << " failed: " << r.error << "\n";
    }
  });
  write_text(fs::path(out_dir) / "ablation.csv", ablation_csv(rows));
  write_text(fs::path(out_dir) / "ablation_manifest.txt", ablation_manifest(rows, cfg.train, cfg.data.seed));
  const bool all_ok = std::all_of(rows.begin(), rows.end(), [](const AblationRow& r) { return r.error.empty(); });
  return all_ok ? kOk : kFailure;
}

int cmd_gradcheck(const std::string& scope_name, std::uint64_t seed, bool inject_fault, std::ostream& out) {
  const GradcheckScope scope = parse_scope(scope_name);
  GradcheckOptions options = default_options(scope);
  options.seed = seed;
  const GradcheckReport report = run_gradcheck(scope, options, inject_fault, [&](const CaseResult& c) {
    GradcheckReport one{{c}};
    out << one.to_text() << std::flush;
  });
  out << (report.passed() ? "all cases passed" : "gradient check FAILED") << "\n";
  return report.passed() ? kOk : kNumeric;
}

int cmd_synth(const std::string& out_dir, int classes, int train_pc, int test_pc, std::int64_t size,
              std::uint64_t seed, std::ostream& out) {
  if (classes < 2 || train_pc < 1 || test_pc < 1 || size < 8) {
    throw ConfigError("synth needs classes >= 2, per-class counts >= 1, size >= 8");
  }
  make_synthetic_splits(out_dir, classes, train_pc, test_pc, size, size, seed);
  out << "classes=" << classes << " train=" << classes * train_pc << " test=" << classes * test_pc
      << " root=" << out_dir << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  Common common;
  std::vector<std::string> args;
  for (const auto& a : raw_args) (is_override(a) ? common.overrides : args).push_back(a);

  CLI::App app{"rockres: residual/attention backbones for rock image classification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string src, dst, data, out_dir, ckpt, split = "test", preset, scope = "op";
  std::uint64_t seed = 0;
  bool inject_fault = false;
  int classes = 3, train_pc = 10, test_pc = 5;
  std::int64_t size = 32;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key=value run configuration file");
    sub->footer("Configuration overrides: --section.key=value (sections: model, train, data, augment)");
  };

  auto* augment = app.add_subcommand("augment", "Expand a class-per-directory image tree offline");
  add_config(augment);
  augment->add_option("--src", src, "Source image tree")->required();
  augment->add_option("--dst", dst, "Destination tree")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint, metrics and resolved config");
  add_config(train_cmd);
  train_cmd->add_option("--data", data, "Dataset root with train/ and test/");
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset root with train/ and test/")->required();
  eval_cmd->add_option("--split", split, "train or test");

  auto* ablate = app.add_subcommand("ablate", "Train every configuration of an ablation grid");
  add_config(ablate);
  ablate->add_option("--preset", preset, "table1, table2, table3 or full")->required();
  ablate->add_option("--data", data, "Dataset root with train/ and test/");
  ablate->add_option("--out", out_dir, "Output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--scope", scope, "op, block or model");
  gradcheck->add_option("--seed", seed, "Seed for shapes, values and sampled entries");
  gradcheck->add_flag("--inject-fault", inject_fault, "Add a case with a deliberately wrong backward rule");

  auto* synth = app.add_subcommand("synth", "Write a procedural class-per-directory dataset");
  synth->add_option("--out", out_dir, "Dataset root")->required();
  synth->add_option("--classes", classes, "Number of classes");
  synth->add_option("--train-per-class", train_pc, "Train images per class");
  synth->add_option("--test-per-class", test_pc, "Test images per class");
  synth->add_option("--size", size, "Image side length");
  synth->add_option("--seed", seed, "Generator seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    if (!common.overrides.empty() && (*eval_cmd || *gradcheck || *synth)) {
      throw ConfigError("configuration overrides do not apply to this command");
    }
    if (*augment) return cmd_augment(common, src, dst, out);
    if (*train_cmd) return cmd_train(common, data, out_dir, out);
    if (*eval_cmd) return cmd_eval(ckpt, data, split, out);
    if (*ablate) return cmd_ablate(common, preset, data, out_dir, out, err);
    if (*gradcheck) return cmd_gradcheck(scope, seed, inject_fault, out);
    if (*synth) return cmd_synth(out_dir, classes, train_pc, test_pc, size, seed, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace rockres::cli
