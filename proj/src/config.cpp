#include "carrnn/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "text.hpp"

namespace carrnn {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError("config key '" + std::string(key) + "': invalid value '" + std::string(value) +
                    "' (" + std::string(why) + ")");
}

double to_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  if (!text::parse_double(value, out) || !std::isfinite(out)) bad_value(key, value, "expected a number");
  return out;
}

std::uint64_t to_count(std::string_view key, std::string_view value) {
  const std::string t = text::trim(value);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
    bad_value(key, value, "expected a non-negative integer");
  try {
    return std::stoull(t);
  } catch (const std::out_of_range&) {
    bad_value(key, value, "out of range");
  }
}

bool to_bool(std::string_view key, std::string_view value) {
  const std::string t = text::trim(value);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  bad_value(key, value, "expected true or false");
}

template <class F>
auto wrap(std::string_view key, std::string_view value, F&& f) {
  try {
    return f(text::trim(value));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    bad_value(key, value, e.what());
  }
}

using Handler = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

const std::map<std::string, Handler, std::less<>>& handlers() {
  static const std::map<std::string, Handler, std::less<>> table = {
      {"data", [](RunConfig& c, auto, auto v) { c.data = text::trim(v); }},
      {"out", [](RunConfig& c, auto, auto v) { c.out = text::trim(v); }},
      {"cell",
       [](RunConfig& c, auto k, auto v) {
         c.train.model = wrap(k, v, [](const std::string& s) { return parse_model_kind(s); });
       }},
      {"fill",
       [](RunConfig& c, auto k, auto v) {
         c.fill = wrap(k, v, [](const std::string& s) { return parse_fill_mode(s); });
       }},
      {"impute", [](RunConfig& c, auto k, auto v) { c.train.impute = to_bool(k, v); }},
      {"peepholes", [](RunConfig& c, auto k, auto v) { c.train.peepholes = to_bool(k, v); }},
      {"hidden_multiplier",
       [](RunConfig& c, auto k, auto v) { c.train.hidden_multiplier = to_double(k, v); }},
      {"tau",
       [](RunConfig& c, auto k, auto v) {
         c.tau_grid.clear();
         if (text::trim(v) == "auto") return;
         for (const auto& part : text::split(v, ',')) {
           const double t = to_double(k, part);
           if (!(t > 0.0)) bad_value(k, v, "bin widths must be positive");
           c.tau_grid.push_back(t);
         }
       }},
      {"learning_rate", [](RunConfig& c, auto k, auto v) { c.train.learning_rate = to_double(k, v); }},
      {"beta1", [](RunConfig& c, auto k, auto v) { c.train.beta1 = to_double(k, v); }},
      {"beta2", [](RunConfig& c, auto k, auto v) { c.train.beta2 = to_double(k, v); }},
      {"epsilon", [](RunConfig& c, auto k, auto v) { c.train.epsilon = to_double(k, v); }},
      {"weight_decay", [](RunConfig& c, auto k, auto v) { c.train.weight_decay = to_double(k, v); }},
      {"max_epochs", [](RunConfig& c, auto k, auto v) { c.train.max_epochs = to_count(k, v); }},
      {"patience", [](RunConfig& c, auto k, auto v) { c.train.patience = to_count(k, v); }},
      {"batch_fraction",
       [](RunConfig& c, auto k, auto v) { c.train.batch_fraction = to_double(k, v); }},
      {"seed",
       [](RunConfig& c, auto k, auto v) {
         c.train.seed = to_count(k, v);
         c.split.seed = c.train.seed;
       }},
      {"clip_norm",
       [](RunConfig& c, auto k, auto v) {
         if (text::trim(v) == "none")
           c.train.clip_norm.reset();
         else
           c.train.clip_norm = to_double(k, v);
       }},
      {"act_h",
       [](RunConfig& c, auto k, auto v) {
         c.train.act_h = wrap(k, v, [](const std::string& s) { return parse_activation(s); });
       }},
      {"act_c",
       [](RunConfig& c, auto k, auto v) {
         c.train.act_c = wrap(k, v, [](const std::string& s) { return parse_activation(s); });
       }},
      {"act_g",
       [](RunConfig& c, auto k, auto v) {
         c.train.act_g = wrap(k, v, [](const std::string& s) { return parse_activation(s); });
       }},
      {"freeze",
       [](RunConfig& c, auto, auto v) {
         c.train.frozen.clear();
         for (const auto& part : text::split(v, ',')) {
           const std::string name = text::trim(part);
           if (!name.empty()) c.train.frozen.insert(name);
         }
       }},
      {"test_fraction",
       [](RunConfig& c, auto k, auto v) {
         c.split.test_fraction = to_double(k, v);
         if (c.split.test_fraction < 0.0 || c.split.test_fraction >= 1.0)
           bad_value(k, v, "must lie in [0, 1)");
       }},
      {"val_fraction",
       [](RunConfig& c, auto k, auto v) {
         c.split.val_fraction = to_double(k, v);
         if (c.split.val_fraction < 0.0 || c.split.val_fraction >= 1.0)
           bad_value(k, v, "must lie in [0, 1)");
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : handlers()) out.push_back(k);
    return out;
  }();
  return keys;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto it = handlers().find(key);
  if (it == handlers().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second(cfg, key, value);
}

std::vector<Setting> parse_settings(std::string_view text) {
  std::vector<Setting> out;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    out.emplace_back(text::trim(std::string_view(line).substr(0, eq)),
                     text::trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

RunConfig resolve_run_config(const std::optional<std::string>& file_text,
                             const std::vector<Setting>& overrides) {
  RunConfig cfg;
  if (file_text)
    for (const auto& [k, v] : parse_settings(*file_text)) apply_setting(cfg, k, v);
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.split.test_fraction + cfg.split.val_fraction >= 1.0)
    throw ConfigError("test_fraction + val_fraction must be below 1");
  return cfg;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<Setting>& overrides) {
  std::optional<std::string> text;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config '" + path->string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return resolve_run_config(text, overrides);
}

}  // namespace carrnn
