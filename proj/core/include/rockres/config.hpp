#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "rockres/augment.hpp"
#include "rockres/backbone.hpp"
#include "rockres/train.hpp"

namespace rockres {

struct DataConfig {
  std::string root;
  std::uint64_t seed = 0;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Flat key=value run configuration. Keys are `section.name`; sections are
/// model, train, data and augment.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  AugmentSpec augment;
  /// Keys given explicitly (file or override), in the order first seen.
  std::vector<std::string> explicit_keys;

  /// Throws ConfigError on unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  bool is_explicit(const std::string& key) const;
  /// Every key with its resolved value, one `key=value` per line.
  std::string to_text() const;
};

std::vector<std::string> config_keys();

/// Blank lines and lines starting with '#' are ignored.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

/// Applies `--section.key=value` arguments. Returns arguments it did not
/// consume.
std::vector<std::string> apply_overrides(RunConfig& config, const std::vector<std::string>& args);

// Section-only echoes, used for the checkpoint configuration text.
std::string to_text(const ModelConfig& c);
std::string to_text(const TrainConfig& c);
/// Parses the model.* and train.* lines of a resolved echo.
ModelConfig parse_model_config(const std::string& text);
TrainConfig parse_train_config(const std::string& text);

std::string format_double(double v);

}  // namespace rockres
