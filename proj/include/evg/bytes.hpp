#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "evg/errors.hpp"

namespace evg {

using Bytes = std::vector<std::uint8_t>;

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

/// Appends little-endian scalars to a growing buffer.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    out_.insert(out_.end(), raw, raw + sizeof(T));
  }

  void put_bytes(std::span<const std::uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }

  void put_magic(std::string_view magic) { out_.insert(out_.end(), magic.begin(), magic.end()); }

  void pad(std::size_t n) { out_.insert(out_.end(), n, 0); }

 private:
  Bytes& out_;
};

/// Bounds-checked little-endian reader; running past the end raises
/// TruncatedPayload.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void expect_magic(std::string_view magic) {
    if (remaining() < magic.size() ||
        std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw Error(Errc::BadMagic, "expected magic '" + std::string(magic) + "'");
    }
    pos_ += magic.size();
  }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw Error(Errc::TruncatedPayload, "need " + std::to_string(n) + " bytes at offset " +
                                              std::to_string(pos_) + ", have " +
                                              std::to_string(remaining()));
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

}  // namespace evg
