#include "sfi/image.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace sfi {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(std::span<const uint8_t> b, size_t at) {
  return static_cast<uint32_t>(b[at]) | static_cast<uint32_t>(b[at + 1]) << 8 |
         static_cast<uint32_t>(b[at + 2]) << 16 | static_cast<uint32_t>(b[at + 3]) << 24;
}

}  // namespace

std::vector<uint8_t> serialize_image(const Image& image) {
  std::vector<uint8_t> out = {'S', 'B', 'X', '1', static_cast<uint8_t>(image.profile), 0, 0, 0};
  put_u32(out, image.entry);
  put_u32(out, static_cast<uint32_t>(image.code.size() * 4));
  for (uint32_t w : image.code) put_u32(out, w);
  return out;
}

Image parse_image(std::span<const uint8_t> bytes) {
  if (bytes.size() < kImageHeaderSize) throw ImageFormatError("image shorter than its header");
  if (std::memcmp(bytes.data(), "SBX1", 4) != 0) throw ImageFormatError("bad magic");
  if (bytes[4] > 1) throw ImageFormatError(fmt::format("unknown profile byte {}", bytes[4]));
  if (bytes[5] != 0 || bytes[6] != 0 || bytes[7] != 0)
    throw ImageFormatError("reserved header bytes are not zero");
  Image image;
  image.profile = static_cast<ProfileKind>(bytes[4]);
  image.entry = get_u32(bytes, 8);
  const uint32_t length = get_u32(bytes, 12);
  if (length % 4 != 0) throw ImageFormatError("code length is not a multiple of 4");
  if (bytes.size() - kImageHeaderSize != length)
    throw ImageFormatError(fmt::format("code length {} does not match payload of {} bytes",
                                       length, bytes.size() - kImageHeaderSize));
  if (image.entry % 4 != 0) throw ImageFormatError("entry offset is not 4-aligned");
  if (image.entry >= length) throw ImageFormatError("entry offset lies outside the code");
  image.code.reserve(length / 4);
  for (size_t at = kImageHeaderSize; at < bytes.size(); at += 4)
    image.code.push_back(get_u32(bytes, at));
  return image;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sfi
