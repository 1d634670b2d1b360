#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "carrnn/checkpoint.hpp"
#include "carrnn/train.hpp"

namespace carrnn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  TrainConfig train;
  FillMode fill = FillMode::None;
  /// Bin widths in dataset time units; empty means the mean and IQR of training gaps.
  std::vector<double> tau_grid;
  SplitSpec split;
};

using Setting = std::pair<std::string, std::string>;

/// Applies one `key = value` setting. Unknown keys and bad values raise ConfigError naming the key.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Parses the flat file format: one `key = value` per line, `#` starts a comment.
std::vector<Setting> parse_settings(std::string_view text);

/// Defaults, then the file (if any), then the overrides in order.
RunConfig resolve_run_config(const std::optional<std::string>& file_text,
                             const std::vector<Setting>& overrides);

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<Setting>& overrides);

/// The keys accepted by apply_setting.
const std::vector<std::string>& setting_keys();

}  // namespace carrnn
