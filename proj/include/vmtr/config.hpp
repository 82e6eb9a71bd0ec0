#pragma once

// Flat key=value run configuration shared by every command.

#include "vmtr/phantom.hpp"
#include "vmtr/solver.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vmtr {

enum class RunMode { joint, sequential };

struct RunConfig {
  SolverParams solver;        // published defaults
  ExperimentSpec experiment;  // used by simulate; blur_sigma mirrors solver.blur_sigma
  RunMode mode = RunMode::joint;
  std::filesystem::path dataset = "dataset.vmtd";
  std::filesystem::path out = "out";
  bool export_h = true;       // h_t_<t>.f64.raw
  bool export_stages = true;  // sequential intermediates

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Lower-cases and maps '-' to '_', so "iters_Nn" and "h-mode" resolve.
std::string normalize_key(std::string key);

/// All accepted keys in declaration order.
const std::vector<std::string>& config_keys();

/// Sets one key from its textual value. Does not validate cross-field invariants.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Round-trippable text of one key.
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Applies "key=value" lines; '#' starts a comment; blank lines ignored.
void apply_config_text(RunConfig& cfg, const std::string& text);

/// Defaults, then the file (if any), then overrides in order, then validate().
RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// "key=value" per line for every key.
std::string dump_config(const RunConfig& cfg);

}  // namespace vmtr
