#pragma once

// SBX64: a 32-bit fixed-width, ARM64-flavoured model ISA.
//
// Every instruction is one little-endian 32-bit word. The top nibble selects
// the class; the remaining layout is documented next to decode() in isa.cpp.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sfi {

/// Register index 0..31. Index 31 is `sp` wherever a register is used as an
/// ALU operand or as an addressing base; it is not a valid data register.
struct Reg {
  uint8_t index = 0;

  constexpr Reg() = default;
  constexpr explicit Reg(unsigned i) : index(static_cast<uint8_t>(i)) {}

  constexpr bool is_sp() const { return index == 31; }
  friend constexpr auto operator<=>(Reg, Reg) = default;
};

namespace reg {
inline constexpr Reg kScratch{17};
inline constexpr Reg kAddr{18};
inline constexpr Reg kBase{21};
inline constexpr Reg kLink{30};
inline constexpr Reg kSp{31};
}  // namespace reg

enum class Opcode : uint8_t {
  Sys = 0,
  AluReg = 1,
  AluImm = 2,
  AddUxtw = 3,
  Load = 4,
  Store = 5,
  B = 6,
  Bl = 7,
  Cbz = 8,
  Cbnz = 9,
  Br = 10,
};
inline constexpr int kOpcodeCount = 11;

enum class SysKind : uint8_t { Udf = 0, Nop = 1 };
enum class AluFn : uint8_t { Add = 0, Sub = 1, And = 2, Orr = 3, Xor = 4 };
enum class AddrMode : uint8_t { Base = 0, Offset = 1, Pre = 2, Post = 3 };

/// A decoded instruction. Fields a class does not use stay zero so that
/// defaulted equality is exact.
struct Instr {
  Opcode op = Opcode::Sys;
  SysKind sys = SysKind::Udf;
  AluFn fn = AluFn::Add;
  AddrMode mode = AddrMode::Base;
  uint8_t size_log2 = 0;  // access width is 1 << size_log2 bytes
  Reg rd, rn, rm, rt;
  int64_t imm = 0;  // imm12 (unsigned) or simm9/simm19/simm26 (signed)

  unsigned access_bytes() const { return 1u << size_log2; }
  bool is_memory() const { return op == Opcode::Load || op == Opcode::Store; }
  bool is_direct_branch() const {
    return op == Opcode::B || op == Opcode::Bl || op == Opcode::Cbz || op == Opcode::Cbnz;
  }

  friend bool operator==(const Instr&, const Instr&) = default;

  static Instr udf();
  static Instr nop();
  static Instr alu_reg(AluFn fn, Reg rd, Reg rn, Reg rm);
  static Instr alu_imm(AluFn fn, Reg rd, Reg rn, uint32_t imm12);
  static Instr add_uxtw(Reg rd, Reg rn, Reg rm);
  static Instr load(unsigned bytes, AddrMode mode, Reg rt, Reg rn, int32_t simm9);
  static Instr store(unsigned bytes, AddrMode mode, Reg rt, Reg rn, int32_t simm9);
  static Instr b(int32_t simm26);
  static Instr bl(int32_t simm26);
  static Instr cbz(Reg rt, int32_t simm19);
  static Instr cbnz(Reg rt, int32_t simm19);
  static Instr br(Reg rn);
};

/// Field ranges for the immediate-carrying classes.
inline constexpr int64_t kImm12Max = (1 << 12) - 1;
inline constexpr int64_t kSimm9Min = -(1 << 8), kSimm9Max = (1 << 8) - 1;
inline constexpr int64_t kSimm19Min = -(1 << 18), kSimm19Max = (1 << 18) - 1;
inline constexpr int64_t kSimm26Min = -(1 << 25), kSimm26Max = (1 << 25) - 1;

/// Returns nullopt for words outside the encoding table. Never throws.
std::optional<Instr> decode(uint32_t word);

/// Throws std::invalid_argument for fields outside their representable range
/// or for operand combinations decode() would refuse.
uint32_t encode(const Instr& instr);

/// True when encode() would accept the instruction.
bool is_encodable(const Instr& instr);

std::string disassemble(const Instr& instr);

/// Disassembly for decodable words, "0xXXXXXXXX" otherwise.
std::string disassemble_word(uint32_t word);

std::string_view opcode_name(Opcode op);
std::string register_name(Reg r);  // "x5" / "sp"

}  // namespace sfi
