#pragma once

// Accepted-encoding counts per class, computed by hand from the whitelist
// rules and the field widths. Independent of decode() and accepts(); used
// as the oracle for the exhaustive census sweep (reference offset 2^31).

#include <array>
#include <cstdint>

#include "sfi/isa.hpp"

namespace sfi::testing {

inline std::array<uint64_t, kOpcodeCount> closed_form_census() {
  constexpr uint64_t regs = 32;         // 5-bit register field
  constexpr uint64_t data_regs = 31;    // x0..x30 (31 is not a data register)
  constexpr uint64_t free_dests = 28;   // 0..31 minus x18, x21, x30, sp
  constexpr uint64_t sizes = 4;         // 1, 2, 4, 8 bytes
  constexpr uint64_t simm9 = 1 << 9;
  // Memory addressing: [x18] with no immediate, or any of the three
  // immediate modes on sp.
  constexpr uint64_t addressing = 1 + 3 * simm9;

  std::array<uint64_t, kOpcodeCount> n{};
  n[0] = 2;                                                 // udf, nop
  n[1] = 5 * free_dests * regs * regs;                      // add sub and orr eor
  n[2] = 2 * free_dests * regs * (1 << 12);                 // add/sub #imm12
  n[3] = free_dests * regs * regs + 3 * 1 * regs;           // plain, plus guards into x18/x30/sp from x21
  n[4] = sizes * free_dests * addressing + 3;               // plus ldr x30, [x21, #0|8|16]
  n[5] = sizes * data_regs * addressing;                    // any data register may be stored
  n[6] = n[7] = uint64_t{1} << 26;                          // every target in range at 2^31
  n[8] = n[9] = data_regs * (uint64_t{1} << 19);
  n[10] = 2;                                                // br x18, br x30
  return n;
}

}  // namespace sfi::testing
