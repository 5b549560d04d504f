#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wrp/network.hpp"
#include "wrp/optimizers.hpp"

namespace wrp {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// Everything needed to rebuild a trained network and resume its optimizer state.
struct Checkpoint {
  std::string architecture;
  Shape input_shape;
  std::string config_text;
  std::size_t step = 0;
  std::size_t epoch = 0;
  bool switched = false;
  std::vector<NamedArray> arrays;

  /// nullptr when absent.
  const NamedArray* find(std::string_view name) const;
};

Checkpoint make_checkpoint(const Network& net, const OptState& state, std::string config_text);

/// Layout: 8-byte magic, little-endian u64 manifest length, JSON manifest, raw doubles.
/// See docs/checkpoint.md.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws FormatError on a bad magic, manifest or payload size.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Network with the stored architecture and parameters (bit-exact).
Network restore_network(const Checkpoint& ckpt);
/// Optimizer state aligned with restore_network(ckpt).
OptState restore_opt_state(const Checkpoint& ckpt, const Network& net);

}  // namespace wrp
