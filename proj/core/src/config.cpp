#include "rockres/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "rockres/errors.hpp"

namespace rockres {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError(key + ": expected " + want + ", got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

Range parse_range(const std::string& key, const std::string& v) {
  const auto comma = v.find(',');
  if (comma == std::string::npos) bad_value(key, v, "lo,hi");
  return {parse_double(key, trim(v.substr(0, comma))), parse_double(key, trim(v.substr(comma + 1)))};
}

/// "224" or "224x192" (height x width).
std::pair<std::int64_t, std::int64_t> parse_size(const std::string& key, const std::string& v) {
  const auto x = v.find('x');
  if (x == std::string::npos) {
    const auto s = parse_int<std::int64_t>(key, v);
    return {s, s};
  }
  return {parse_int<std::int64_t>(key, v.substr(0, x)), parse_int<std::int64_t>(key, v.substr(x + 1))};
}

std::string range_text(const Range& r) { return format_double(r.lo) + "," + format_double(r.hi); }
std::string size_text(std::int64_t h, std::int64_t w) { return std::to_string(h) + "x" + std::to_string(w); }
std::string bool_text(bool b) { return b ? "true" : "false"; }

struct KeyDef {
  const char* key;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"model.num_classes", [](RunConfig& c, auto& k, auto& v) { c.model.num_classes = parse_int<std::int64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.num_classes); }},
      {"model.input_size",
       [](RunConfig& c, auto& k, auto& v) { std::tie(c.model.input_height, c.model.input_width) = parse_size(k, v); },
       [](const RunConfig& c) { return size_text(c.model.input_height, c.model.input_width); }},
      {"model.bot_blocks", [](RunConfig& c, auto& k, auto& v) { c.model.bot_blocks = parse_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.bot_blocks); }},
      {"model.irc", [](RunConfig& c, auto& k, auto& v) { c.model.irc = parse_bool(k, v); },
       [](const RunConfig& c) { return bool_text(c.model.irc); }},
      {"model.kernel_mod", [](RunConfig& c, auto& k, auto& v) { c.model.kernel_mod = parse_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.kernel_mod); }},
      {"model.seed", [](RunConfig& c, auto& k, auto& v) { c.model.seed = parse_int<std::uint64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.seed); }},
      {"model.base_width", [](RunConfig& c, auto& k, auto& v) { c.model.base_width = parse_int<std::int64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.base_width); }},
      {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr = parse_double(k, v); },
       [](const RunConfig& c) { return format_double(c.train.lr); }},
      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = parse_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_int<std::int64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_int<std::uint64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.check_numerics", [](RunConfig& c, auto& k, auto& v) { c.train.check_numerics = parse_bool(k, v); },
       [](const RunConfig& c) { return bool_text(c.train.check_numerics); }},
      {"data.root", [](RunConfig& c, auto&, auto& v) { c.data.root = v; },
       [](const RunConfig& c) { return c.data.root; }},
      {"data.seed", [](RunConfig& c, auto& k, auto& v) { c.data.seed = parse_int<std::uint64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.data.seed); }},
      {"augment.rotation_degrees", [](RunConfig& c, auto& k, auto& v) { c.augment.rotation_degrees = parse_range(k, v); },
       [](const RunConfig& c) { return range_text(c.augment.rotation_degrees); }},
      {"augment.hflip_prob", [](RunConfig& c, auto& k, auto& v) { c.augment.hflip_prob = parse_double(k, v); },
       [](const RunConfig& c) { return format_double(c.augment.hflip_prob); }},
      {"augment.vflip_prob", [](RunConfig& c, auto& k, auto& v) { c.augment.vflip_prob = parse_double(k, v); },
       [](const RunConfig& c) { return format_double(c.augment.vflip_prob); }},
      {"augment.crop_scale", [](RunConfig& c, auto& k, auto& v) { c.augment.crop_scale = parse_range(k, v); },
       [](const RunConfig& c) { return range_text(c.augment.crop_scale); }},
      {"augment.output_size",
       [](RunConfig& c, auto& k, auto& v) { std::tie(c.augment.output_height, c.augment.output_width) = parse_size(k, v); },
       [](const RunConfig& c) { return size_text(c.augment.output_height, c.augment.output_width); }},
      {"augment.brightness", [](RunConfig& c, auto& k, auto& v) { c.augment.brightness = parse_range(k, v); },
       [](const RunConfig& c) { return range_text(c.augment.brightness); }},
      {"augment.contrast", [](RunConfig& c, auto& k, auto& v) { c.augment.contrast = parse_range(k, v); },
       [](const RunConfig& c) { return range_text(c.augment.contrast); }},
      {"augment.saturation", [](RunConfig& c, auto& k, auto& v) { c.augment.saturation = parse_range(k, v); },
       [](const RunConfig& c) { return range_text(c.augment.saturation); }},
      {"augment.hue", [](RunConfig& c, auto& k, auto& v) { c.augment.hue = parse_range(k, v); },
       [](const RunConfig& c) { return range_text(c.augment.hue); }},
      {"augment.copies_per_image", [](RunConfig& c, auto& k, auto& v) { c.augment.copies_per_image = parse_int<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.augment.copies_per_image); }},
      {"augment.seed", [](RunConfig& c, auto& k, auto& v) { c.augment.seed = parse_int<std::uint64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.augment.seed); }},
  };
  return table;
}

const KeyDef& find_key(const std::string& key) {
  for (const auto& def : key_table()) {
    if (key == def.key) return def;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::string section_text(const RunConfig& c, const std::string& prefix) {
  std::string out;
  for (const auto& def : key_table()) {
    if (std::string(def.key).starts_with(prefix)) out += std::string(def.key) + "=" + def.get(c) + "\n";
  }
  return out;
}

/// Applies only keys of one section, ignoring the rest.
RunConfig parse_section(const std::string& text, const std::string& prefix) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    const auto eq = line.find('=');
    if (eq == std::string::npos || !line.starts_with(prefix)) continue;
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  find_key(key).set(*this, key, value);
  if (!is_explicit(key)) explicit_keys.push_back(key);
}

bool RunConfig::is_explicit(const std::string& key) const {
  return std::find(explicit_keys.begin(), explicit_keys.end(), key) != explicit_keys.end();
}

std::string RunConfig::to_text() const { return section_text(*this, ""); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& def : key_table()) keys.emplace_back(def.key);
  return keys;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::string> apply_overrides(RunConfig& config, const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  for (const auto& arg : args) {
    const auto eq = arg.find('=');
    if (!arg.starts_with("--") || eq == std::string::npos) {
      rest.push_back(arg);
      continue;
    }
    const std::string key = arg.substr(2, eq - 2);
    if (key.find('.') == std::string::npos) {
      rest.push_back(arg);
      continue;
    }
    config.set(key, arg.substr(eq + 1));
  }
  return rest;
}

std::string to_text(const ModelConfig& c) {
  RunConfig rc;
  rc.model = c;
  return section_text(rc, "model.");
}

std::string to_text(const TrainConfig& c) {
  RunConfig rc;
  rc.train = c;
  return section_text(rc, "train.");
}

ModelConfig parse_model_config(const std::string& text) { return parse_section(text, "model.").model; }
TrainConfig parse_train_config(const std::string& text) { return parse_section(text, "train.").train; }

}  // namespace rockres
