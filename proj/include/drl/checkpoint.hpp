#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "drl/matrix.hpp"
#include "drl/network.hpp"

namespace drl {

// Binary layout, all integers u64 little-endian, all reals IEEE-754 binary64
// little-endian:
//   "DRLCKPT1" | layer count | per layer: rows, cols, rows*cols weights
//   (row-major), rows biases.
inline constexpr std::string_view kCheckpointMagic = "DRLCKPT1";

std::string encode_checkpoint(const MLPNetwork& net);
MLPNetwork decode_checkpoint(std::string_view bytes);

void save_checkpoint(const MLPNetwork& net, const std::filesystem::path& path);
MLPNetwork load_checkpoint(const std::filesystem::path& path);

// Little-endian primitives shared by the other binary records.
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint64_t u64();
  double f64();
  std::string_view take(std::size_t n);
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace drl
