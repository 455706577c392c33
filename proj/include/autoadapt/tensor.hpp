#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace autoadapt {

/// Thrown when two tensors (or a tensor and a layer) disagree on extents.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a forward or backward pass produces NaN/Inf.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape &) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

/// Dense NCHW tensor of doubles with an optional gradient buffer of the same length.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : Tensor(Shape{n, c, h, w}, fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  const Shape &shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double> &vec() { return data_; }
  const std::vector<double> &vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double &at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the start of plane (n, c).
  double *plane(std::size_t n, std::size_t c) { return data_.data() + index(n, c, 0, 0); }
  const double *plane(std::size_t n, std::size_t c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() {
    ensure_grad();
    return grad_;
  }
  std::span<const double> grad() const { return grad_; }
  void ensure_grad() {
    if (grad_.size() != data_.size())
      grad_.assign(data_.size(), 0.0);
  }
  void zero_grad() { grad_.assign(data_.size(), 0.0); }
  void drop_grad() { grad_.clear(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v))
        return false;
    return true;
  }

  bool operator==(const Tensor &o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
  Shape shape_{};
  std::vector<double> data_;
  std::vector<double> grad_;
};

inline void require_same_shape(const Tensor &a, const Tensor &b, const char *what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " vs " +
                     b.shape().str());
}

inline void require_finite(const Tensor &t, const std::string &layer) {
  if (!t.all_finite())
    throw NumericError("non-finite values produced by layer '" + layer + "'");
}

// ---------------------------------------------------------------------------
// Binary blob I/O: 4 x u32 LE extents (N,C,H,W) followed by N*C*H*W f64 LE.
// ---------------------------------------------------------------------------

namespace detail {

template <class T> void put_le(std::string &out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <class T> T get_le(const char *p) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline std::string read_file_bytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::string &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw std::runtime_error("short write to '" + path + "'");
}

} // namespace detail

inline std::string encode_blob(const Tensor &t) {
  std::string out;
  out.reserve(16 + 8 * t.numel());
  for (std::size_t e : {t.n(), t.c(), t.h(), t.w()})
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  for (double v : t.data())
    detail::put_le<double>(out, v);
  return out;
}

inline Tensor decode_blob(std::string_view bytes) {
  if (bytes.size() < 16)
    throw std::runtime_error("tensor blob shorter than its 16-byte header");
  Shape s{detail::get_le<std::uint32_t>(bytes.data()),
          detail::get_le<std::uint32_t>(bytes.data() + 4),
          detail::get_le<std::uint32_t>(bytes.data() + 8),
          detail::get_le<std::uint32_t>(bytes.data() + 12)};
  if (bytes.size() != 16 + 8 * s.numel())
    throw std::runtime_error("tensor blob length " + std::to_string(bytes.size()) +
                             " does not match header shape " + s.str());
  std::vector<double> data(s.numel());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = detail::get_le<double>(bytes.data() + 16 + 8 * i);
  return Tensor(s, std::move(data));
}

inline void save_blob(const std::string &path, const Tensor &t) {
  detail::write_file_bytes(path, encode_blob(t));
}

inline Tensor load_blob(const std::string &path) {
  return decode_blob(detail::read_file_bytes(path));
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4)
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

} // namespace autoadapt
