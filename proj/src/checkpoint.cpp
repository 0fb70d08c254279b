#include "drl/checkpoint.hpp"

#include <openssl/sha.h>

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "drl/error.hpp"

namespace drl {

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::string_view ByteReader::take(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw ParseError("truncated binary record at byte " + std::to_string(pos_), 0);
  auto s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint64_t ByteReader::u64() {
  auto s = take(8);
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(s[b]);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string encode_checkpoint(const MLPNetwork& net) {
  std::string out(kCheckpointMagic);
  put_u64(out, net.num_layers());
  for (const auto& layer : net.layers()) {
    put_u64(out, layer.weights.rows());
    put_u64(out, layer.weights.cols());
    for (double w : layer.weights.data()) put_f64(out, w);
    for (double b : layer.bias) put_f64(out, b);
  }
  return out;
}

MLPNetwork decode_checkpoint(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) throw ParseError("not a DRLCKPT1 checkpoint", 0);
  const std::uint64_t count = in.u64();
  if (count == 0 || count > 1024) throw ParseError("implausible layer count " + std::to_string(count), 0);
  std::vector<DenseLayer> layers;
  for (std::uint64_t l = 0; l < count; ++l) {
    const std::uint64_t rows = in.u64();
    const std::uint64_t cols = in.u64();
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20))
      throw ParseError("implausible layer shape in layer " + std::to_string(l), 0);
    DenseLayer layer{Matrix(rows, cols), Vector(rows)};
    for (double& w : layer.weights.data()) w = in.f64();
    for (double& b : layer.bias) b = in.f64();
    layers.push_back(std::move(layer));
  }
  if (!in.at_end()) throw ParseError("trailing bytes after checkpoint", 0);
  try {
    return MLPNetwork(std::move(layers));
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), 0);
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_checkpoint(const MLPNetwork& net, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(net));
}

MLPNetwork load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xf]);
  }
  return out;
}

}  // namespace drl
