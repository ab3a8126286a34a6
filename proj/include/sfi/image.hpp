#pragma once

// SBX1 flat image:
//   "SBX1" | u8 profile (0 sparse, 1 dense) | 3 zero bytes |
//   u32le entry offset | u32le code length | code bytes

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfi {

enum class ProfileKind : uint8_t { Sparse = 0, Dense = 1 };

class ImageFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  ProfileKind profile = ProfileKind::Sparse;
  uint32_t entry = 0;  // byte offset from the start of code
  std::vector<uint32_t> code;

  friend bool operator==(const Image&, const Image&) = default;
};

inline constexpr size_t kImageHeaderSize = 16;

std::vector<uint8_t> serialize_image(const Image& image);

/// Rejects bad magic, nonzero reserved bytes, unknown profile byte, a code
/// length that is not a multiple of 4 or disagrees with the payload, and an
/// entry offset that is unaligned or outside the code.
Image parse_image(std::span<const uint8_t> bytes);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const uint8_t> bytes);

}  // namespace sfi
