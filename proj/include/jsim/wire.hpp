#ifndef JSIM_WIRE_HPP_
#define JSIM_WIRE_HPP_

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "jsim/error.hpp"

// Little-endian primitive encoding shared by every wire format in the
// project (hub control frames, message frames, call frames). All multi-byte
// integers are little-endian regardless of host order.

namespace jsim::wire {

using Bytes = std::vector<std::uint8_t>;

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& what) : Error("decode: " + what) {}
};

inline void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_i32(Bytes& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }
inline void put_i64(Bytes& out, std::int64_t v) { put_u64(out, static_cast<std::uint64_t>(v)); }

inline void put_f32(Bytes& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u32(out, bits);
}

inline void put_f64(Bytes& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

// String payload: 4-byte LE length followed by UTF-8 bytes.
inline void put_string(Bytes& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

// Sequential reader over a byte span; throws DecodeError on underrun.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> rest() { return raw(remaining()); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DecodeError("truncated payload");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Incremental splitter for 4-byte-length-prefixed frames arriving as an
// arbitrary chunking of a byte stream. The length prefix counts the body
// only. Complete bodies are handed to the sink in arrival order.
class FrameSplitter {
 public:
  static constexpr std::size_t kMaxFrame = 256u << 20;  // sanity bound

  template <typename Sink>
  void feed(std::span<const std::uint8_t> chunk, Sink&& sink) {
    buf_.insert(buf_.end(), chunk.begin(), chunk.end());
    std::size_t off = 0;
    while (buf_.size() - off >= 4) {
      std::uint32_t len = 0;
      for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(buf_[off + i]) << (8 * i);
      if (len > kMaxFrame) throw DecodeError("frame length exceeds bound");
      if (buf_.size() - off - 4 < len) break;
      sink(std::span<const std::uint8_t>(buf_.data() + off + 4, len));
      off += 4 + len;
    }
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(off));
  }

 private:
  Bytes buf_;
};

// Frames a body with its 4-byte LE length prefix.
inline Bytes frame(std::span<const std::uint8_t> body) {
  Bytes out;
  out.reserve(body.size() + 4);
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

}  // namespace jsim::wire

#endif  // JSIM_WIRE_HPP_
