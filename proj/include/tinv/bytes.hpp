#ifndef TINV_BYTES_HPP
#define TINV_BYTES_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

// Little-endian byte packing shared by the binary file formats.

namespace tinv::bytes {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    buffer_.insert(buffer_.end(), p, p + sizeof(T));
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& buffer() { return buffer_; }

 private:
  std::vector<std::uint8_t> buffer_;
};

class Truncated : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    T value;
    get_raw(&value, sizeof(T));
    return value;
  }
  void get_raw(void* out, std::size_t n) {
    if (n > size_ - pos_) throw Truncated("unexpected end of data");
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data);

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(const void* data, std::size_t size);
inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

}  // namespace tinv::bytes

#endif  // TINV_BYTES_HPP
