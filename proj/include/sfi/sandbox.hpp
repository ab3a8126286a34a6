#pragma once

// Trusted-runtime simulator. One Sandbox owns the guest memory of a single
// sandbox and runs verified images on the concrete interpreter.
//
// Runtime calls (address in r30 after a trampoline load, reached by `br x30`):
//   rt0  exit(code = r0 mod 2^32)
//   rt1  write(ptr = r0, len = r1)
//   rt2  read(ptr = r0, len = r1)
// The host clamps ptr into the sandbox as base + (r0 mod 2^32), truncates len
// at the sandbox end, leaves the byte count in r0, and resumes the guest at
// base + (r9 mod 2^32). A read never stores below code_end.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sfi/image.hpp"
#include "sfi/policy.hpp"
#include "sfi/semantics.hpp"

namespace sfi {

class BootError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Byte store for [base, base + 2^32), allocated in chunks on first write.
/// Unwritten bytes read as zero.
class SandboxMemory {
 public:
  static constexpr uint64_t kChunk = 1ull << 16;

  explicit SandboxMemory(uint64_t base) : base_(base) {}

  uint8_t read(uint64_t addr) const;
  void write(uint64_t addr, uint8_t value);
  uint64_t read_le(uint64_t addr, unsigned bytes) const;
  void write_le(uint64_t addr, uint64_t value, unsigned bytes);
  std::vector<uint8_t> read_range(uint64_t addr, uint64_t len) const;
  bool contains(uint64_t addr) const { return addr - base_ < kSandboxSize; }

 private:
  uint64_t base_;
  std::unordered_map<uint64_t, std::unique_ptr<std::array<uint8_t, kChunk>>> chunks_;
};

struct RuntimeRecord {
  enum class Kind : uint8_t { Exit, Write, Read };

  Kind kind = Kind::Exit;
  uint64_t addr = 0;  // clamped guest address
  uint64_t code = 0;  // exit code
  std::vector<uint8_t> bytes;
  uint64_t resume = 0;

  friend bool operator==(const RuntimeRecord&, const RuntimeRecord&) = default;
};

struct ExitStatus {
  enum class Kind : uint8_t { Exit, Fault, StepLimit };

  Kind kind = Kind::StepLimit;
  uint32_t code = 0;                 // Exit
  FaultKind fault = FaultKind::Undefined;
  uint64_t pc = 0;                   // Fault: the faulting instruction
  std::optional<uint64_t> addr;      // Fault: first offending byte, or the bad target
  uint64_t steps = 0;

  std::string describe() const;
};

class Sandbox {
 public:
  /// Refuses images the verifier rejects, invalid layouts and runtime tables.
  static Sandbox boot(std::span<const uint8_t> image_bytes, const Profile& profile,
                      uint64_t base = kSandboxSize, std::optional<RtTable> rt = std::nullopt);
  static Sandbox boot(const Image& image, const Profile& profile, uint64_t base = kSandboxSize,
                      std::optional<RtTable> rt = std::nullopt);

  /// Addresses used when no table is given: outside every admissible model range.
  static RtTable default_rt();

  ExitStatus run(uint64_t max_steps);

  const MemoryLayout& layout() const { return layout_; }
  const RtTable& rt() const { return rt_; }
  const MachineState& state() const { return state_; }
  MachineState& state() { return state_; }
  const SandboxMemory& memory() const { return mem_; }
  SandboxMemory& memory() { return mem_; }
  const std::vector<RuntimeRecord>& trace() const { return trace_; }
  /// Bytes served to rt2 reads, consumed front to back.
  void set_input(std::vector<uint8_t> bytes) { input_ = std::move(bytes), input_pos_ = 0; }
  /// Concatenation of every rt1 write.
  std::vector<uint8_t> output() const;

 private:
  Sandbox(const MemoryLayout& layout, const RtTable& rt);
  std::optional<ExitStatus> runtime_call(unsigned index, uint64_t steps);
  void monitor(const StepOutcome& out) const;

  MemoryLayout layout_;
  RtTable rt_;
  SandboxMemory mem_;
  MachineState state_;
  std::vector<RuntimeRecord> trace_;
  std::vector<uint8_t> input_;
  size_t input_pos_ = 0;
};

/// One JSON object per line.
std::string trace_json_lines(const std::vector<RuntimeRecord>& trace);
std::string exit_json(const ExitStatus& status);

}  // namespace sfi
