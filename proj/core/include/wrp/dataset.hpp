#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wrp/tensor.hpp"

namespace wrp {

/// Images [N x C x H x W] (or [N x D]) with integer class labels.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape example_shape() const;
  /// Throws InputError when labels fall outside [0, class_count) or the set is empty.
  void validate() const;

  /// Rows `indices` gathered into a new batch tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  /// First `count` examples (all of them if count >= size()).
  Dataset head(std::size_t count) const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarPixels = 3072;

/// Parses CIFAR-10 binary records: 1 label byte followed by R, G, B planes of 1024 bytes.
/// `path` may be one batch file or a directory holding data_batch_1..5.bin.
Dataset load_cifar10(const std::filesystem::path& path, std::size_t limit = 0);

/// Writes images/labels as CIFAR-10 binary records (pixels are rounded from [0,1] to bytes).
void write_cifar10(const std::filesystem::path& path, const Dataset& data);

/// Gaussian class blobs: class means are random directions scaled so that distinct means
/// sit roughly `separation` unit standard deviations apart. Deterministic per seed.
Dataset gen_synthetic(std::uint64_t seed, std::size_t count, const Shape& dims,
                      std::size_t class_count, double separation);

/// CIFAR-shaped surrogate in [0,1]: per-class smooth colour templates plus noise,
/// quantized to bytes. Used when the real dataset is not available.
Dataset gen_cifar_like(std::uint64_t seed, std::size_t count, std::size_t class_count = 10);

}  // namespace wrp
