#include "sfi/verifier.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <json.hpp>

namespace sfi {

std::string VerifyViolation::reason_text() const {
  return reason ? std::string(reason_name(*reason)) : std::string("BadEntry");
}

VerifyReport verify_image(const Image& image, const Profile& profile, Mutation mutation) {
  VerifyReport report;
  const uint64_t code_bytes = 4 * static_cast<uint64_t>(image.code.size());
  for (size_t k = 0; k < image.code.size(); ++k) {
    const uint64_t offset = 4 * k;
    const uint32_t word = image.code[k];
    const Verdict v = accepts(decode(word), kRtPageSize + offset, profile, mutation);
    if (!v.accepted()) report.violations.push_back({offset, v.reject, disassemble_word(word)});
  }
  std::optional<std::string> entry_problem;
  if (image.entry % 4 != 0)
    entry_problem = fmt::format("entry offset {:#x} is not 4-aligned", image.entry);
  else if (image.entry >= code_bytes)
    entry_problem = fmt::format("entry offset {:#x} lies outside {} bytes of code", image.entry, code_bytes);
  else if (code_bytes > kSandboxSize - kRtPageSize)
    entry_problem = fmt::format("{} bytes of code do not fit the sandbox", code_bytes);
  if (entry_problem) {
    const VerifyViolation v{image.entry, std::nullopt, *entry_problem};
    const auto at = std::upper_bound(report.violations.begin(), report.violations.end(), v,
                                     [](const auto& a, const auto& b) { return a.offset < b.offset; });
    report.violations.insert(at, v);
  }
  return report;
}

VerifyReport verify_image(std::span<const uint8_t> bytes, const Profile& profile, Mutation mutation) {
  return verify_image(parse_image(bytes), profile, mutation);
}

std::string verify_json(const VerifyReport& report) {
  nlohmann::ordered_json j;
  j["ok"] = report.ok();
  j["violations"] = nlohmann::ordered_json::array();
  for (const auto& v : report.violations)
    j["violations"].push_back({{"offset", v.offset}, {"reason", v.reason_text()}, {"text", v.text}});
  return j.dump(2) + "\n";
}

std::string verify_text(const VerifyReport& report) {
  if (report.ok()) return "ok\n";
  std::string out;
  for (const auto& v : report.violations)
    out += fmt::format("{:#010x}  {:<26} {}\n", v.offset, v.reason_text(), v.text);
  out += fmt::format("{} violation{}\n", report.violations.size(), report.violations.size() == 1 ? "" : "s");
  return out;
}

}  // namespace sfi
