#pragma once

// The binary verifier: every word of the code section must pass the
// whitelist at its own offset. No state is carried between words.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfi/image.hpp"
#include "sfi/policy.hpp"

namespace sfi {

struct VerifyViolation {
  uint64_t offset = 0;                // byte offset into the code section
  std::optional<RejectReason> reason;  // empty for a bad entry point
  std::string text;                    // disassembly, hex, or what is wrong with the entry

  std::string reason_text() const;
  friend bool operator==(const VerifyViolation&, const VerifyViolation&) = default;
};

struct VerifyReport {
  std::vector<VerifyViolation> violations;  // ascending offsets

  bool ok() const { return violations.empty(); }
};

VerifyReport verify_image(const Image& image, const Profile& profile,
                          Mutation mutation = Mutation::None);
/// Parses first; malformed images throw ImageFormatError.
VerifyReport verify_image(std::span<const uint8_t> bytes, const Profile& profile,
                          Mutation mutation = Mutation::None);

/// {"ok": bool, "violations": [{"offset", "reason", "text"}]}
std::string verify_json(const VerifyReport& report);
std::string verify_text(const VerifyReport& report);

}  // namespace sfi
