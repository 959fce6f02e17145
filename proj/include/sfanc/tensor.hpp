#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace sfanc {

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

/// Dense row-major n-dimensional array. T is float or double.
template <typename T>
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::uint64_t> d) : dims(std::move(d)) {
    data.assign(size_from_dims(dims), T{});
  }

  static std::size_t size_from_dims(const std::vector<std::uint64_t>& d) {
    std::size_t n = 1;
    for (auto v : d) n *= static_cast<std::size_t>(v);
    return n;
  }

  std::size_t size() const { return data.size(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
};

// --- binary tensor format -------------------------------------------------
//
// Single tensor:  magic "SFTENSOR" | u32 version=1 | u32 dtype (0=f32, 1=f64)
//                 | u64 rank | u64 dims[rank] | raw little-endian payload
// Bundle:         magic "SFBUNDLE" | u32 version=1 | u64 count
//                 | count x { u32 name_len | name | tensor block as above }

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("tensor file: truncated read");
}

template <typename U>
void write_pod(std::ostream& os, U v) {
  write_bytes(os, &v, sizeof(U));
}

template <typename U>
U read_pod(std::istream& is) {
  U v;
  read_bytes(is, &v, sizeof(U));
  return v;
}

template <typename T>
constexpr std::uint32_t dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  detail::write_bytes(os, "SFTENSOR", 8);
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint32_t>(os, detail::dtype_tag<T>());
  detail::write_pod<std::uint64_t>(os, t.dims.size());
  for (auto d : t.dims) detail::write_pod<std::uint64_t>(os, d);
  detail::write_bytes(os, t.data.data(), t.data.size() * sizeof(T));
}

using TensorVariant = std::variant<Tensor<float>, Tensor<double>>;

inline TensorVariant read_tensor(std::istream& is) {
  char magic[8];
  detail::read_bytes(is, magic, 8);
  if (std::memcmp(magic, "SFTENSOR", 8) != 0)
    throw std::runtime_error("tensor file: bad magic");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != 1) throw std::runtime_error("tensor file: unsupported version");
  const auto dtype = detail::read_pod<std::uint32_t>(is);
  const auto rank = detail::read_pod<std::uint64_t>(is);
  if (rank > 16) throw std::runtime_error("tensor file: implausible rank");
  std::vector<std::uint64_t> dims(rank);
  for (auto& d : dims) d = detail::read_pod<std::uint64_t>(is);
  const std::size_t n = Tensor<float>::size_from_dims(dims);
  if (dtype == 0) {
    Tensor<float> t;
    t.dims = std::move(dims);
    t.data.resize(n);
    detail::read_bytes(is, t.data.data(), n * sizeof(float));
    return t;
  }
  if (dtype == 1) {
    Tensor<double> t;
    t.dims = std::move(dims);
    t.data.resize(n);
    detail::read_bytes(is, t.data.data(), n * sizeof(double));
    return t;
  }
  throw std::runtime_error("tensor file: unknown dtype tag");
}

/// Ordered collection of named tensors; entry order is part of the format
/// so files rebuilt from the same inputs are byte-identical.
struct TensorBundle {
  std::vector<std::pair<std::string, TensorVariant>> entries;

  void add(std::string name, TensorVariant t) {
    entries.emplace_back(std::move(name), std::move(t));
  }

  const TensorVariant* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }

  template <typename T>
  const Tensor<T>& get(const std::string& name) const {
    const TensorVariant* v = find(name);
    if (!v) throw std::runtime_error("bundle: missing tensor '" + name + "'");
    const Tensor<T>* t = std::get_if<Tensor<T>>(v);
    if (!t) throw std::runtime_error("bundle: dtype mismatch for '" + name + "'");
    return *t;
  }
};

inline void write_bundle(const std::string& path, const TensorBundle& b) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  detail::write_bytes(os, "SFBUNDLE", 8);
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint64_t>(os, b.entries.size());
  for (const auto& [name, t] : b.entries) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    detail::write_bytes(os, name.data(), name.size());
    std::visit([&os](const auto& tt) { write_tensor(os, tt); }, t);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline TensorBundle read_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  detail::read_bytes(is, magic, 8);
  if (std::memcmp(magic, "SFBUNDLE", 8) != 0)
    throw std::runtime_error("bundle file: bad magic: " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != 1) throw std::runtime_error("bundle file: unsupported version");
  const auto count = detail::read_pod<std::uint64_t>(is);
  TensorBundle b;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    detail::read_bytes(is, name.data(), name_len);
    b.add(std::move(name), read_tensor(is));
  }
  return b;
}

// --- content hashing --------------------------------------------------------

/// FNV-1a 64-bit; the toolkit's content hash for manifests.
inline std::uint64_t fnv1a64(const void* p, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* bytes = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

inline std::uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace sfanc
