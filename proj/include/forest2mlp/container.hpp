#pragma once

// Versioned binary container shared by forests and MLPs.
//
//   offset  size  field
//   0       4     magic "F2MC"
//   4       4     u32 format version (currently 1)
//   8       4     u32 payload kind (1 = forest, 2 = mlp)
//   12      ...   payload
//
// All integers and IEEE-754 doubles are little-endian; doubles are stored
// bit-for-bit so a round trip is exact. Payload layouts are documented next to
// the writers in forest.hpp and mlp.hpp.

#include "forest2mlp/common.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace forest2mlp {

inline constexpr char kContainerMagic[4] = {'F', '2', 'M', 'C'};
inline constexpr std::uint32_t kContainerVersion = 1;

enum class PayloadKind : std::uint32_t { forest = 1, mlp = 2 };

class ByteWriter {
 public:
  explicit ByteWriter(PayloadKind kind) {
    bytes_.insert(bytes_.end(), kContainerMagic, kContainerMagic + 4);
    u32(kContainerVersion);
    u32(static_cast<std::uint32_t>(kind));
  }

  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, PayloadKind expected)
      : bytes_(bytes) {
    require(bytes_.size() >= 12 &&
                std::memcmp(bytes_.data(), kContainerMagic, 4) == 0,
            "not a forest2mlp container");
    pos_ = 4;
    const std::uint32_t version = u32();
    require(version == kContainerVersion,
            "unsupported container version " + std::to_string(version));
    const std::uint32_t kind = u32();
    require(kind == static_cast<std::uint32_t>(expected),
            "container holds payload kind " + std::to_string(kind) +
                ", expected " +
                std::to_string(static_cast<std::uint32_t>(expected)));
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), "truncated container");
  }

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

inline PayloadKind peek_payload_kind(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), kContainerMagic, 4) == 0,
          "not a forest2mlp container");
  std::uint32_t kind = 0;
  for (int i = 0; i < 4; ++i) kind |= std::uint32_t{bytes[8 + i]} << (8 * i);
  return static_cast<PayloadKind>(kind);
}

inline void write_bytes(const std::string& path,
                        const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace forest2mlp
