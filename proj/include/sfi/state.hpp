#pragma once

#include <array>
#include <cstdint>

#include "sfi/isa.hpp"

namespace sfi {

struct MachineState {
  std::array<uint64_t, 31> r{};
  uint64_t sp = 0;
  uint64_t pc = 0;

  /// Index 31 reads sp (ALU operand / addressing base convention).
  uint64_t get(Reg reg) const { return reg.is_sp() ? sp : r[reg.index]; }
  void set(Reg reg, uint64_t v) {
    if (reg.is_sp())
      sp = v;
    else
      r[reg.index] = v;
  }

  friend bool operator==(const MachineState&, const MachineState&) = default;
};

}  // namespace sfi
