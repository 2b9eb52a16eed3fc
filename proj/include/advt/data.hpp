#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advt/checkpoint.hpp"
#include "advt/errors.hpp"
#include "advt/tensor.hpp"

namespace advt {

/// Images in [0,1] paired with integer labels.
template <typename T>
struct Batch {
  Tensor<T> images;  // [N,C,H,W]
  std::vector<int> labels;
  /// 1-based position of the batch within its epoch (0 when not applicable).
  std::size_t index = 0;

  std::size_t size() const { return labels.size(); }
};

template <typename T>
struct Dataset {
  Tensor<T> images;  // [M,C,H,W]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return images.numel() / std::max<std::size_t>(1, size()); }

  Batch<T> gather(std::span<const std::size_t> indices, std::size_t batch_index = 0) const {
    Shape shape = images.shape();
    shape[0] = indices.size();
    Tensor<T> x(shape);
    std::vector<int> y;
    y.reserve(indices.size());
    const std::size_t per = sample_size();
    auto src = images.data();
    auto dst = x.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::copy_n(src.data() + indices[i] * per, per, dst.data() + i * per);
      y.push_back(labels[indices[i]]);
    }
    return {x, std::move(y), batch_index};
  }

  /// The first `n` samples (or all when n >= size).
  Dataset head(std::size_t n) const {
    n = std::min(n, size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    auto b = gather(idx);
    return {b.images, b.labels, num_classes, split, provenance};
  }

  /// Throws unless pixels are in [0,1], labels are in range and M > 0.
  void validate() const {
    if (size() == 0) throw ConfigError("dataset '" + split + "' is empty");
    if (images.rank() != 4 || images.dim(0) != size()) {
      throw ShapeError("dataset: images " + to_string(images.shape()) + " vs " + std::to_string(size()) +
                       " labels");
    }
    for (T v : images.data()) {
      if (!(v >= T{0} && v <= T{1})) throw ConfigError("dataset: pixel value outside [0,1]");
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw ConfigError("dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
      }
    }
  }
};

/// Splits [0, size) into consecutive batches, shuffled when `rng` is given.
/// The last batch may be smaller.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t size, std::size_t batch_size,
                                                          std::mt19937_64* rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(size);
  for (std::size_t i = 0; i < size; ++i) order[i] = i;
  if (rng) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < size; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(size, start + batch_size)));
  }
  return out;
}

struct SynthSpec {
  std::size_t classes = 10;
  std::size_t size = 2000;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  /// Half-width of the uniform per-pixel noise.
  double noise = 0.3;
  /// Templates are 0.5 + contrast * (u - 0.5) with u ~ U[0,1]; 1 gives fully random templates.
  double contrast = 0.25;
  std::uint64_t seed = 0;
};

/// Class-template data: every sample is clamp(template[label] + U(-noise, noise), 0, 1).
///
/// Templates depend only on `spec.seed`; `stream` selects an independent
/// noise sequence so that train and test sets share templates.
template <typename T>
Dataset<T> synth_dataset(const SynthSpec& spec, std::uint64_t stream = 0, std::string split = "train") {
  if (spec.classes < 2) throw ConfigError("synth_dataset: need at least two classes");
  if (spec.size == 0 || spec.size % spec.classes != 0) {
    throw ConfigError("synth_dataset: size " + std::to_string(spec.size) + " is not a positive multiple of " +
                      std::to_string(spec.classes) + " classes");
  }
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0) {
    throw ConfigError("synth_dataset: image dimensions must be positive");
  }
  if (spec.noise < 0 || spec.contrast < 0 || spec.contrast > 1) {
    throw ConfigError("synth_dataset: noise must be >= 0 and contrast in [0,1]");
  }
  const std::size_t per = spec.channels * spec.height * spec.width;
  std::mt19937_64 template_rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> templates(spec.classes * per);
  for (auto& v : templates) v = 0.5 + spec.contrast * (unit(template_rng) - 0.5);

  std::seed_seq seq{spec.seed, stream, std::uint64_t{0x5eed}};
  std::mt19937_64 noise_rng(seq);
  Dataset<T> ds;
  ds.images = Tensor<T>({spec.size, spec.channels, spec.height, spec.width});
  ds.labels.resize(spec.size);
  ds.num_classes = spec.classes;
  ds.split = std::move(split);
  ds.provenance = "synthetic:seed=" + std::to_string(spec.seed) + ",stream=" + std::to_string(stream);
  auto px = ds.images.data();
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t label = i % spec.classes;
    ds.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < per; ++j) {
      double v = templates[label * per + j];
      if (spec.noise > 0) v += spec.noise * (2.0 * unit(noise_rng) - 1.0);
      px[i * per + j] = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
  }
  return ds;
}

/// Fixed-size binary records: one label byte followed by C*H*W pixel bytes
/// (channel-major, each channel row-major). CIFAR-10 uses 3x32x32.
struct RecordLayout {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 10;

  std::size_t pixels() const { return channels * height * width; }
  std::size_t record_size() const { return 1 + pixels(); }
};

/// Parses CIFAR-style binary records; pixels are scaled to [0,1] by /255.
/// With `limit`, exactly that many records are read and the file must hold them.
template <typename T>
Dataset<T> load_cifar_binary(const std::string& path, RecordLayout layout = {},
                             std::optional<std::size_t> limit = std::nullopt, std::string split = "train") {
  const auto bytes = checkpoint::read_bytes(path);
  const std::size_t rec = layout.record_size();
  std::size_t count;
  if (limit) {
    count = *limit;
    if (count * rec > bytes.size()) {
      const std::size_t have = bytes.size() / rec;
      throw FormatError("load_cifar_binary: '" + path + "' holds " + std::to_string(have) +
                        " records, requested " + std::to_string(count) + "; truncated record at byte offset " +
                        std::to_string(have * rec));
    }
  } else {
    if (bytes.size() % rec != 0) {
      throw FormatError("load_cifar_binary: truncated record at byte offset " +
                        std::to_string(bytes.size() / rec * rec) + " in '" + path + "'");
    }
    count = bytes.size() / rec;
  }
  if (count == 0) throw FormatError("load_cifar_binary: '" + path + "' contains no records");
  Dataset<T> ds;
  ds.images = Tensor<T>({count, layout.channels, layout.height, layout.width});
  ds.labels.resize(count);
  ds.num_classes = layout.num_classes;
  ds.split = std::move(split);
  ds.provenance = "file:" + path;
  auto px = ds.images.data();
  const std::size_t per = layout.pixels();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = i * rec;
    const unsigned label = bytes[off];
    if (label >= layout.num_classes) {
      throw FormatError("load_cifar_binary: label byte " + std::to_string(label) + " at byte offset " +
                        std::to_string(off) + " exceeds " + std::to_string(layout.num_classes - 1));
    }
    ds.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < per; ++j) px[i * per + j] = static_cast<T>(bytes[off + 1 + j]) / T{255};
  }
  return ds;
}

/// Inverse of load_cifar_binary; pixels are quantized to round(255 * p).
template <typename T>
std::vector<std::uint8_t> encode_records(const Dataset<T>& ds) {
  const std::size_t per = ds.sample_size();
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * (per + 1));
  auto px = ds.images.data();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (std::size_t j = 0; j < per; ++j) {
      const double v = std::clamp(static_cast<double>(px[i * per + j]), 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  return out;
}

template <typename T>
void write_records(const std::string& path, const Dataset<T>& ds) {
  const auto bytes = encode_records(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace advt
