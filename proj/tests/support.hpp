#pragma once

// Shared fixtures: an independent bit packer for encodings, and random
// layouts/states/instructions for property tests.

#include <cstdint>
#include <random>

#include "sfi/isa.hpp"
#include "sfi/policy.hpp"
#include "sfi/semantics.hpp"

namespace sfi::testing {

/// Packs (value, lsb, width) fields into a word; deliberately unaware of the
/// decoder's tables.
inline uint32_t pack(std::initializer_list<std::array<uint32_t, 3>> fields) {
  uint32_t w = 0;
  for (const auto& [value, lsb, width] : fields) w |= (value & ((1u << width) - 1)) << lsb;
  return w;
}

inline MemoryLayout random_layout(std::mt19937_64& rng, const Profile& p) {
  MemoryLayout l;
  l.profile = p;
  const uint64_t lo_slot = std::max<uint64_t>(1, (p.guard_size + kSandboxSize - 1) / kSandboxSize);
  const uint64_t hi_slot = max_base(p) / kSandboxSize;
  l.base = std::uniform_int_distribution<uint64_t>(lo_slot, hi_slot)(rng) * kSandboxSize;
  const uint64_t pages = std::uniform_int_distribution<uint64_t>(1, 3)(rng) == 1
                             ? std::uniform_int_distribution<uint64_t>(1, kSandboxSize / kRtPageSize - 1)(rng)
                             : std::uniform_int_distribution<uint64_t>(1, 64)(rng);
  l.code_end = l.base + kRtPageSize + pages * kRtPageSize;
  if (l.code_end > l.base + kSandboxSize) l.code_end = l.base + kSandboxSize;
  return l;
}

inline RtTable random_rt(std::mt19937_64& rng, const MemoryLayout& l) {
  RtTable t;
  for (;;) {
    for (auto& a : t.rt) a = rng() & ~3ull;
    if (!validate_rt(l, t)) return t;
  }
}

/// Values clustered around the interesting boundaries of the layout.
inline uint64_t interesting_value(std::mt19937_64& rng, const MemoryLayout& l, const RtTable& rt) {
  const auto near = [&](uint64_t x) {
    return x + static_cast<uint64_t>(std::uniform_int_distribution<int64_t>(-300, 300)(rng));
  };
  switch (rng() % 10) {
    case 0: return near(l.base);
    case 1: return near(l.base + kSandboxSize);
    case 2: return near(l.code_end);
    case 3: return near(l.base - l.profile.guard_size);
    case 4: return near(l.base + kSandboxSize + l.profile.guard_size);
    case 5: return rt.rt[rng() % kRtCount];
    case 6: return l.base + (rng() & 0xFFFFFFFFull);
    case 7: return rng() & 0xFFFF;
    case 8: return near(l.code_start());
    default: return rng();
  }
}

inline MachineState random_state(std::mt19937_64& rng, const MemoryLayout& l, const RtTable& rt) {
  MachineState s;
  for (auto& r : s.r) r = interesting_value(rng, l, rt);
  s.sp = interesting_value(rng, l, rt);
  s.pc = rng() % 4 == 0 ? interesting_value(rng, l, rt)
                        : l.code_start() + 4 * (rng() % ((l.code_end - l.code_start()) / 4));
  if (rng() % 2) s.r[21] = l.base;
  return s;
}

inline Instr random_decodable(std::mt19937_64& rng) {
  for (;;) {
    const auto i = decode(static_cast<uint32_t>(rng()));
    if (i) return *i;
    // Most random words are undecodable; bias towards valid shapes by
    // clearing the must-be-zero bits of a random opcode.
    const uint32_t op = rng() % kOpcodeCount;
    uint32_t w = static_cast<uint32_t>(rng());
    switch (op) {
      case 0: w = rng() % 2; break;
      case 1: w = (op << 28) | ((rng() % 5) << 24) | (w & 0x00FFFE00u); break;
      case 2: w = (op << 28) | ((rng() % 2) << 24) | (w & 0x00FFFFFCu); break;
      case 3: w = (op << 28) | (w & 0x00FFFE00u); break;
      case 4:
      case 5: w = (op << 28) | (w & 0x0FFFFFE0u); break;
      case 6:
      case 7: w = (op << 28) | (w & 0x03FFFFFFu); break;
      case 8:
      case 9: w = (op << 28) | (w & 0x00FFFFFFu); break;
      default: w = (op << 28) | (w & 0x0007C000u); break;
    }
    if (const auto j = decode(w)) return *j;
  }
}

/// Memory contents as a pure function of the address, with the runtime-call
/// table in its first 24 bytes.
inline ByteReader hashed_memory(const MemoryLayout& l, const RtTable& rt) {
  return [base = l.base, rt](uint64_t a) -> uint8_t {
    const uint64_t off = a - base;
    if (off < 8 * kRtCount) return static_cast<uint8_t>(rt.rt[off / 8] >> (8 * (off % 8)));
    uint64_t x = a * 0x9E3779B97F4A7C15ull;
    return static_cast<uint8_t>(x >> 56);
  };
}

}  // namespace sfi::testing
