#pragma once

// Binary checkpoint container:
//
//   "ADVT"                       4 magic bytes
//   version                      u32 LE
//   tensor count                 u32 LE
//   per tensor:
//     name length                u32 LE, followed by UTF-8 name bytes
//     rank                       u32 LE
//     dims                       rank x u32 LE
//     dtype tag                  u32 LE (0 = f32, 1 = f64)
//     data                       raw little-endian elements

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "advt/errors.hpp"
#include "advt/nn.hpp"
#include "advt/tensor.hpp"

namespace advt::checkpoint {

inline constexpr char kMagic[4] = {'A', 'D', 'V', 'T'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint32_t { kF32 = 0, kF64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

/// One stored tensor; `raw` holds the little-endian payload verbatim.
struct Entry {
  std::string name;
  Shape shape;
  DType dtype = DType::kF32;
  std::vector<std::uint8_t> raw;

  template <typename T>
  std::vector<T> as() const {
    std::vector<T> out(numel_of(shape));
    const std::size_t w = dtype_size(dtype);
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < w; ++b) bits |= std::uint64_t{raw[i * w + b]} << (8 * b);
      if (dtype == DType::kF32) {
        out[i] = static_cast<T>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
      } else {
        out[i] = static_cast<T>(std::bit_cast<double>(bits));
      }
    }
    return out;
  }
};

struct Checkpoint {
  std::uint32_t version = kVersion;
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{bytes_[pos_ + b]} << (8 * b);
    pos_ += 4;
    return v;
  }

  std::vector<std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint: truncated ") + what + " at byte offset " +
                        std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
Entry make_entry(const std::string& name, const Tensor<T>& t) {
  Entry e{name, t.shape(), dtype_of<T>(), {}};
  e.raw.reserve(t.numel() * sizeof(T));
  for (T v : t.data()) {
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, float>) {
      bits = std::bit_cast<std::uint32_t>(v);
    } else {
      bits = std::bit_cast<std::uint64_t>(v);
    }
    for (std::size_t b = 0; b < sizeof(T); ++b) e.raw.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return e;
}

template <typename T>
void append(Checkpoint& ck, const nn::ParameterList<T>& params, const std::string& prefix = "") {
  for (const auto& p : params) ck.entries.push_back(make_entry(prefix + p.name, p.tensor));
}

inline std::vector<std::uint8_t> encode(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  detail::put_u32(out, ck.version);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    detail::put_u32(out, static_cast<std::uint32_t>(e.dtype));
    if (e.raw.size() != numel_of(e.shape) * dtype_size(e.dtype)) {
      throw FormatError("checkpoint: payload of '" + e.name + "' does not match its shape");
    }
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }
  return out;
}

inline Checkpoint decode(const std::vector<std::uint8_t>& bytes) {
  detail::Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic bytes");
  Checkpoint ck;
  ck.version = r.u32("version");
  if (ck.version != kVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(ck.version));
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const std::uint32_t len = r.u32("name length");
    auto name = r.take(len, "name");
    e.name.assign(name.begin(), name.end());
    const std::uint32_t rank = r.u32("rank");
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32("dims"));
    const std::uint32_t tag = r.u32("dtype tag");
    if (tag > 1) throw FormatError("checkpoint: unknown dtype tag " + std::to_string(tag) + " for '" + e.name + "'");
    e.dtype = static_cast<DType>(tag);
    e.raw = r.take(numel_of(e.shape) * dtype_size(e.dtype), "tensor data");
    ck.entries.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.pos()));
  return ck;
}

inline void write_file(const std::string& path, const Checkpoint& ck) {
  const auto bytes = encode(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("checkpoint: write to '" + path + "' failed");
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Checkpoint read_file(const std::string& path) { return decode(read_bytes(path)); }

/// Copies stored values into `params` (names matched after `prefix`).
template <typename T>
void load_into(const Checkpoint& ck, const nn::ParameterList<T>& params, const std::string& prefix = "") {
  for (const auto& p : params) {
    const Entry* e = ck.find(prefix + p.name);
    if (!e) throw FormatError("checkpoint: missing tensor '" + prefix + p.name + "'");
    if (e->shape != p.tensor.shape()) {
      throw ShapeError("checkpoint: tensor '" + e->name + "' has shape " + to_string(e->shape) +
                       ", model expects " + to_string(p.tensor.shape()));
    }
    auto values = e->as<T>();
    Tensor<T> t = p.tensor;
    std::copy(values.begin(), values.end(), t.data().begin());
  }
}

}  // namespace advt::checkpoint
