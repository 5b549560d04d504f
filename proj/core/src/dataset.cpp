#include "wrp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "wrp/errors.hpp"

namespace wrp {

namespace fs = std::filesystem;

Shape Dataset::example_shape() const {
  if (images.rank() < 2) throw StateError("dataset images need a batch axis");
  return Shape(images.shape().begin() + 1, images.shape().end());
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (images.rank() < 2 || images.extent(0) != labels.size())
    throw InputError("dataset images and labels disagree on N");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= class_count)
      throw InputError("label " + std::to_string(l) + " outside [0, class_count)");
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  Shape shape = images.shape();
  shape[0] = indices.size();
  const std::size_t row = shape_size(example_shape());
  Tensor out(shape);
  auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InputError("gather index out of range");
    std::copy_n(src.begin() + indices[i] * row, row, dst.begin() + i * row);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw InputError("gather index out of range");
    out.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::head(std::size_t count) const {
  count = std::min(count, size());
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  Dataset d;
  d.images = gather(idx);
  d.labels = gather_labels(idx);
  d.name = name;
  d.class_count = class_count;
  return d;
}

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset load_cifar10(const fs::path& path, std::size_t limit) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (int i = 1; i <= 5; ++i) {
      fs::path f = path / ("data_batch_" + std::to_string(i) + ".bin");
      if (fs::exists(f)) files.push_back(f);
    }
    if (files.empty()) throw FormatError("no data_batch_*.bin under " + path.string());
  } else {
    files.push_back(path);
  }

  std::vector<double> pixels;
  std::vector<int> labels;
  for (const auto& f : files) {
    const auto bytes = read_bytes(f);
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
      throw FormatError(f.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of 3073");
    const std::size_t records = bytes.size() / kCifarRecordBytes;
    for (std::size_t r = 0; r < records; ++r) {
      if (limit != 0 && labels.size() == limit) break;
      const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
      if (rec[0] > 9)
        throw FormatError(f.string() + ": label " + std::to_string(rec[0]) + " in record " +
                          std::to_string(r));
      labels.push_back(rec[0]);
      for (std::size_t p = 0; p < kCifarPixels; ++p) pixels.push_back(rec[1 + p] / 255.0);
    }
  }
  Dataset d;
  const std::size_t n = labels.size();
  d.images = Tensor({n, 3, 32, 32}, std::move(pixels));
  d.labels = std::move(labels);
  d.name = "cifar10";
  d.class_count = 10;
  return d;
}

void write_cifar10(const fs::path& path, const Dataset& data) {
  if (data.example_shape() != Shape{3, 32, 32})
    throw DimensionError("CIFAR records need 3x32x32 images");
  std::vector<char> buf;
  buf.reserve(data.size() * kCifarRecordBytes);
  auto px = data.images.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] < 0 || data.labels[i] > 9) throw InputError("CIFAR labels are 0..9");
    buf.push_back(static_cast<char>(data.labels[i]));
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      const double v = std::clamp(px[i * kCifarPixels + p], 0.0, 1.0);
      buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Dataset gen_synthetic(std::uint64_t seed, std::size_t count, const Shape& dims,
                      std::size_t class_count, double separation) {
  if (class_count < 1 || count < class_count) throw InputError("gen_synthetic needs N >= classes");
  const std::size_t d = shape_size(dims);
  if (d == 0) throw DimensionError("gen_synthetic needs a non-empty example shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Class means: orthonormal directions where possible, so distinct means are exactly
  // `separation` apart; two classes sit antipodally.
  std::vector<std::vector<double>> means(class_count, std::vector<double>(d));
  for (std::size_t c = 0; c < class_count; ++c) {
    auto& m = means[c];
    for (double& v : m) v = normal(rng);
    if (c < d) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += m[i] * means[p][i];
        for (std::size_t i = 0; i < d; ++i) m[i] -= dot * means[p][i];
      }
    }
    double norm = 0.0;
    for (double v : m) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : m) v /= norm;
  }
  const double radius = class_count == 2 ? separation / 2.0 : separation / std::sqrt(2.0);
  if (class_count == 2)
    for (std::size_t i = 0; i < d; ++i) means[1][i] = -means[0][i];
  for (auto& m : means)
    for (double& v : m) v *= radius;

  Shape shape{count};
  shape.insert(shape.end(), dims.begin(), dims.end());
  Dataset out;
  out.images = Tensor(shape);
  out.labels.resize(count);
  auto px = out.images.data();
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t c = n % class_count;
    out.labels[n] = static_cast<int>(c);
    for (std::size_t i = 0; i < d; ++i) px[n * d + i] = means[c][i] + normal(rng);
  }
  out.name = "synthetic";
  out.class_count = class_count;
  return out;
}

namespace {

constexpr std::size_t kSide = 32, kPlane = kSide * kSide;

// Per channel: a colour offset plus three low-frequency plane waves.
std::vector<double> wave_pattern(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> t(kCifarPixels);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double offset = 0.5 * normal(rng);
    double fx[3], fy[3], ph[3];
    for (int w = 0; w < 3; ++w) {
      fx[w] = (unit(rng) * 4.0 - 2.0) / kSide;
      fy[w] = (unit(rng) * 4.0 - 2.0) / kSide;
      ph[w] = unit(rng) * two_pi;
    }
    for (std::size_t r = 0; r < kSide; ++r)
      for (std::size_t c = 0; c < kSide; ++c) {
        double v = offset;
        for (int w = 0; w < 3; ++w) v += std::sin(two_pi * (fx[w] * c + fy[w] * r) + ph[w]);
        t[ch * kPlane + r * kSide + c] = v / 2.0;
      }
  }
  return t;
}

}  // namespace

Dataset gen_cifar_like(std::uint64_t seed, std::size_t count, std::size_t class_count) {
  if (class_count < 1 || class_count > 10 || count < class_count)
    throw InputError("gen_cifar_like needs 1..10 classes and N >= classes");
  constexpr std::size_t kNuisance = 12;
  constexpr double kClassAmp = 0.05, kNuisanceAmp = 0.06, kPixelNoise = 0.1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<double>> templates, nuisance;
  for (std::size_t k = 0; k < class_count; ++k) templates.push_back(wave_pattern(rng));
  for (std::size_t k = 0; k < kNuisance; ++k) nuisance.push_back(wave_pattern(rng));

  Dataset out;
  out.images = Tensor({count, 3, kSide, kSide});
  out.labels.resize(count);
  auto px = out.images.data();
  std::uniform_int_distribution<int> shift(-6, 6);
  std::vector<double> img(kCifarPixels);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t cls = n % class_count;
    out.labels[n] = static_cast<int>(cls);
    const int dx = shift(rng), dy = shift(rng);
    const double contrast = kClassAmp * (0.5 + unit(rng));
    const double brightness = 0.08 * normal(rng);
    std::fill(img.begin(), img.end(), 0.5 + brightness);
    for (const auto& b : nuisance) {
      const double w = kNuisanceAmp * normal(rng);
      for (std::size_t p = 0; p < kCifarPixels; ++p) img[p] += w * b[p];
    }
    const auto& t = templates[cls];
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t r = 0; r < kSide; ++r)
        for (std::size_t c = 0; c < kSide; ++c) {
          const std::size_t sr = (r + kSide + dy) % kSide, sc = (c + kSide + dx) % kSide;
          const std::size_t p = ch * kPlane + r * kSide + c;
          const double v = std::clamp(
              img[p] + contrast * t[ch * kPlane + sr * kSide + sc] + kPixelNoise * normal(rng),
              0.0, 1.0);
          px[n * kCifarPixels + p] = std::round(v * 255.0) / 255.0;
        }
  }
  out.name = "cifar_like";
  out.class_count = class_count;
  return out;
}

}  // namespace wrp
