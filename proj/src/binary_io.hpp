#pragma once

// Little-endian byte packing shared by the binary file formats.

#include <algorithm>
#include <bit>
#include <cstring>
#include <sstream>
#include <type_traits>
#include <vector>

#include "topoforge/errors.hpp"

namespace topoforge::detail {

class Writer {
 public:
  explicit Writer(std::vector<unsigned char>& buf) : buf_(buf) {}
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }

 private:
  std::vector<unsigned char>& buf_;
};

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n, std::size_t base) : p_(p), n_(n), base_(base) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > n_) {
      std::ostringstream msg;
      msg << "unexpected end of data at offset " << base_ + pos_;
      throw FormatError(msg.str());
    }
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, p_ + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > n_) {
      std::ostringstream msg;
      msg << "unexpected end of data at offset " << base_ + pos_;
      throw FormatError(msg.str());
    }
    const unsigned char* at = p_ + pos_;
    pos_ += n;
    return at;
  }

  std::size_t position() const { return base_ + pos_; }
  bool done() const { return pos_ == n_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

}  // namespace topoforge::detail
