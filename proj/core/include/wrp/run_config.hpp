#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wrp/optimizers.hpp"
#include "wrp/tensor.hpp"

namespace wrp {

inline constexpr std::string_view kDefaultArchitecture =
    "C6(5x5)-P(2x2)-C16(5x5)-P(2x2)-F120-F84-F10";
/// Environment variable naming the CIFAR-10 binary directory.
inline constexpr const char* kDatasetRootEnv = "CIFAR10_ROOT";

struct RunConfig {
  std::string name;  // run label; empty means the algorithm name
  OptimizerConfig optimizer;
  std::string architecture{kDefaultArchitecture};
  bool auto_batchnorm = true;  // batch-norm algorithms get BN on every hidden trainable layer
  std::string dataset = "cifar10";  // cifar10 | cifar_like | synthetic
  std::string data_path;            // empty: $CIFAR10_ROOT
  std::size_t subset = 5000;        // 0 keeps every example
  Shape synthetic_dims{20};
  std::size_t synthetic_classes = 2;
  double synthetic_separation = 4.0;
  std::size_t synthetic_count = 1024;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;       // initialization and minibatch order
  std::uint64_t data_seed = 7;  // generated datasets
  std::string out = "out";
  bool wallclock = false;
  std::vector<double> stepsize_grid;  // empty: the single optimizer.stepsize

  std::string label() const;
};

/// Sets one key. Unknown keys and malformed values raise UsageError.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);
/// "key=value" form of apply_setting.
void apply_override(RunConfig& cfg, std::string_view assignment);

/// Line-oriented `key = value` text; '#' starts a comment, blank lines are ignored.
RunConfig parse_config_text(std::string_view text, RunConfig base = {});
/// Throws UsageError when the file cannot be read.
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});
/// Every key in canonical form; parse_config_text(config_to_text(c)) reproduces c.
std::string config_to_text(const RunConfig& cfg);

/// Shortest text that parses back to the same double ("nan", "inf", "-inf" for specials).
std::string format_double(double v);
/// Throws UsageError unless the whole of `text` is a number.
double parse_double(std::string_view text);

}  // namespace wrp
