#include "sfi/isa.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace sfi {

// Bit layout (w = 32-bit word, fields inclusive):
//   op = w[31:28]
//   0 SYS     w[27:0] = 0 UDF, 1 NOP
//   1 AluReg  f=w[27:24] rd=w[23:19] rn=w[18:14] rm=w[13:9] w[8:0]=0
//   2 AluImm  f=w[27:24] rd=w[23:19] rn=w[18:14] imm12=w[13:2] w[1:0]=0
//   3 AddUxtw w[27:24]=0 rd=w[23:19] rn=w[18:14] rm=w[13:9] w[8:0]=0
//   4 Load    sz=w[27:26] mode=w[25:24] rt=w[23:19] rn=w[18:14] simm9=w[13:5] w[4:0]=0
//   5 Store   as Load
//   6 B, 7 Bl w[27:26]=0 simm26=w[25:0]
//   8 Cbz, 9 Cbnz  w[27:24]=0 rt=w[23:19] simm19=w[18:0]
//   10 Br     rn=w[18:14], everything else zero
//   11..15    undecodable

namespace {

constexpr uint32_t bits(uint32_t w, unsigned hi, unsigned lo) {
  return (w >> lo) & ((hi - lo == 31) ? 0xFFFFFFFFu : ((1u << (hi - lo + 1)) - 1));
}

constexpr int64_t sign_extend(uint32_t v, unsigned width) {
  const uint32_t sign = 1u << (width - 1);
  return static_cast<int64_t>(static_cast<int32_t>((v ^ sign) - sign));
}

constexpr uint32_t field(uint32_t v, unsigned lo) { return v << lo; }

uint32_t pack_signed(int64_t v, unsigned width) {
  return static_cast<uint32_t>(v) & ((1u << width) - 1);
}

bool in_range(int64_t v, int64_t lo, int64_t hi) { return v >= lo && v <= hi; }

}  // namespace

Instr Instr::udf() { return Instr{}; }

Instr Instr::nop() {
  Instr i;
  i.sys = SysKind::Nop;
  return i;
}

Instr Instr::alu_reg(AluFn fn, Reg rd, Reg rn, Reg rm) {
  Instr i;
  i.op = Opcode::AluReg;
  i.fn = fn;
  i.rd = rd;
  i.rn = rn;
  i.rm = rm;
  return i;
}

Instr Instr::alu_imm(AluFn fn, Reg rd, Reg rn, uint32_t imm12) {
  Instr i;
  i.op = Opcode::AluImm;
  i.fn = fn;
  i.rd = rd;
  i.rn = rn;
  i.imm = imm12;
  return i;
}

Instr Instr::add_uxtw(Reg rd, Reg rn, Reg rm) {
  Instr i;
  i.op = Opcode::AddUxtw;
  i.rd = rd;
  i.rn = rn;
  i.rm = rm;
  return i;
}

static Instr memory(Opcode op, unsigned bytes, AddrMode mode, Reg rt, Reg rn, int32_t simm9) {
  Instr i;
  i.op = op;
  switch (bytes) {
    case 1: i.size_log2 = 0; break;
    case 2: i.size_log2 = 1; break;
    case 4: i.size_log2 = 2; break;
    case 8: i.size_log2 = 3; break;
    default: throw std::invalid_argument(fmt::format("access size {} is not 1, 2, 4 or 8", bytes));
  }
  i.mode = mode;
  i.rt = rt;
  i.rn = rn;
  i.imm = simm9;
  return i;
}

Instr Instr::load(unsigned bytes, AddrMode mode, Reg rt, Reg rn, int32_t simm9) {
  return memory(Opcode::Load, bytes, mode, rt, rn, simm9);
}

Instr Instr::store(unsigned bytes, AddrMode mode, Reg rt, Reg rn, int32_t simm9) {
  return memory(Opcode::Store, bytes, mode, rt, rn, simm9);
}

Instr Instr::b(int32_t simm26) {
  Instr i;
  i.op = Opcode::B;
  i.imm = simm26;
  return i;
}

Instr Instr::bl(int32_t simm26) {
  Instr i = b(simm26);
  i.op = Opcode::Bl;
  return i;
}

Instr Instr::cbz(Reg rt, int32_t simm19) {
  Instr i;
  i.op = Opcode::Cbz;
  i.rt = rt;
  i.imm = simm19;
  return i;
}

Instr Instr::cbnz(Reg rt, int32_t simm19) {
  Instr i = cbz(rt, simm19);
  i.op = Opcode::Cbnz;
  return i;
}

Instr Instr::br(Reg rn) {
  Instr i;
  i.op = Opcode::Br;
  i.rn = rn;
  return i;
}

std::optional<Instr> decode(uint32_t w) {
  Instr i;
  switch (bits(w, 31, 28)) {
    case 0: {
      const uint32_t payload = bits(w, 27, 0);
      if (payload > 1) return std::nullopt;
      i.sys = static_cast<SysKind>(payload);
      return i;
    }
    case 1: {
      const uint32_t f = bits(w, 27, 24);
      if (f > 4 || bits(w, 8, 0) != 0) return std::nullopt;
      return Instr::alu_reg(static_cast<AluFn>(f), Reg(bits(w, 23, 19)), Reg(bits(w, 18, 14)),
                            Reg(bits(w, 13, 9)));
    }
    case 2: {
      const uint32_t f = bits(w, 27, 24);
      if (f > 1 || bits(w, 1, 0) != 0) return std::nullopt;
      return Instr::alu_imm(static_cast<AluFn>(f), Reg(bits(w, 23, 19)), Reg(bits(w, 18, 14)),
                            bits(w, 13, 2));
    }
    case 3:
      if (bits(w, 27, 24) != 0 || bits(w, 8, 0) != 0) return std::nullopt;
      return Instr::add_uxtw(Reg(bits(w, 23, 19)), Reg(bits(w, 18, 14)), Reg(bits(w, 13, 9)));
    case 4:
    case 5: {
      const uint32_t rt = bits(w, 23, 19);
      const auto mode = static_cast<AddrMode>(bits(w, 25, 24));
      const uint32_t raw_imm = bits(w, 13, 5);
      if (rt == 31 || bits(w, 4, 0) != 0) return std::nullopt;
      if (mode == AddrMode::Base && raw_imm != 0) return std::nullopt;
      i.op = bits(w, 31, 28) == 4 ? Opcode::Load : Opcode::Store;
      i.size_log2 = static_cast<uint8_t>(bits(w, 27, 26));
      i.mode = mode;
      i.rt = Reg(rt);
      i.rn = Reg(bits(w, 18, 14));
      i.imm = sign_extend(raw_imm, 9);
      return i;
    }
    case 6:
    case 7:
      if (bits(w, 27, 26) != 0) return std::nullopt;
      i.op = bits(w, 31, 28) == 6 ? Opcode::B : Opcode::Bl;
      i.imm = sign_extend(bits(w, 25, 0), 26);
      return i;
    case 8:
    case 9: {
      const uint32_t rt = bits(w, 23, 19);
      if (bits(w, 27, 24) != 0 || rt == 31) return std::nullopt;
      i.op = bits(w, 31, 28) == 8 ? Opcode::Cbz : Opcode::Cbnz;
      i.rt = Reg(rt);
      i.imm = sign_extend(bits(w, 18, 0), 19);
      return i;
    }
    case 10:
      if ((w & ~(0xFu << 28) & ~(0x1Fu << 14)) != 0) return std::nullopt;
      return Instr::br(Reg(bits(w, 18, 14)));
    default:
      return std::nullopt;
  }
}

namespace {

// Checks the operand invariants that encode() relies on; returns an error
// message or nullptr.
const char* encoding_error(const Instr& i) {
  const auto reg_ok = [](Reg r) { return r.index <= 31; };
  const auto data_reg_ok = [](Reg r) { return r.index <= 30; };
  const auto unused_zero = [&](bool rd, bool rn, bool rm, bool rt, bool imm) {
    return (rd || i.rd.index == 0) && (rn || i.rn.index == 0) && (rm || i.rm.index == 0) &&
           (rt || i.rt.index == 0) && (imm || i.imm == 0);
  };
  const bool no_sys = i.sys == SysKind::Udf;
  const bool no_fn = i.fn == AluFn::Add;
  const bool no_mem = i.mode == AddrMode::Base && i.size_log2 == 0;
  switch (i.op) {
    case Opcode::Sys:
      if (!no_fn || !no_mem || !unused_zero(false, false, false, false, false))
        return "SYS carries no operands";
      if (i.sys != SysKind::Udf && i.sys != SysKind::Nop) return "unknown SYS kind";
      return nullptr;
    case Opcode::AluReg:
      if (static_cast<unsigned>(i.fn) > 4) return "unknown ALU function";
      if (!reg_ok(i.rd) || !reg_ok(i.rn) || !reg_ok(i.rm)) return "register out of range";
      if (!no_sys || !no_mem || !unused_zero(true, true, true, false, false))
        return "unused AluReg field set";
      return nullptr;
    case Opcode::AluImm:
      if (static_cast<unsigned>(i.fn) > 1) return "immediate ALU supports add/sub only";
      if (!reg_ok(i.rd) || !reg_ok(i.rn)) return "register out of range";
      if (!in_range(i.imm, 0, kImm12Max)) return "imm12 out of range";
      if (!no_sys || !no_mem || !unused_zero(true, true, false, false, true))
        return "unused AluImm field set";
      return nullptr;
    case Opcode::AddUxtw:
      if (!reg_ok(i.rd) || !reg_ok(i.rn) || !reg_ok(i.rm)) return "register out of range";
      if (!no_sys || !no_fn || !no_mem || !unused_zero(true, true, true, false, false))
        return "unused AddUxtw field set";
      return nullptr;
    case Opcode::Load:
    case Opcode::Store:
      if (i.size_log2 > 3) return "access size out of range";
      if (static_cast<unsigned>(i.mode) > 3) return "unknown addressing mode";
      if (!data_reg_ok(i.rt)) return "sp is not a data register";
      if (!reg_ok(i.rn)) return "register out of range";
      if (!in_range(i.imm, kSimm9Min, kSimm9Max)) return "simm9 out of range";
      if (i.mode == AddrMode::Base && i.imm != 0) return "base addressing takes no offset";
      if (!no_sys || !no_fn || !unused_zero(false, true, false, true, true))
        return "unused memory field set";
      return nullptr;
    case Opcode::B:
    case Opcode::Bl:
      if (!in_range(i.imm, kSimm26Min, kSimm26Max)) return "simm26 out of range";
      if (!no_sys || !no_fn || !no_mem || !unused_zero(false, false, false, false, true))
        return "unused branch field set";
      return nullptr;
    case Opcode::Cbz:
    case Opcode::Cbnz:
      if (!data_reg_ok(i.rt)) return "sp is not a data register";
      if (!in_range(i.imm, kSimm19Min, kSimm19Max)) return "simm19 out of range";
      if (!no_sys || !no_fn || !no_mem || !unused_zero(false, false, false, true, true))
        return "unused compare-branch field set";
      return nullptr;
    case Opcode::Br:
      if (!reg_ok(i.rn)) return "register out of range";
      if (!no_sys || !no_fn || !no_mem || !unused_zero(false, true, false, false, false))
        return "unused br field set";
      return nullptr;
  }
  return "unknown opcode";
}

}  // namespace

bool is_encodable(const Instr& instr) { return encoding_error(instr) == nullptr; }

uint32_t encode(const Instr& i) {
  if (const char* err = encoding_error(i)) throw std::invalid_argument(err);
  const uint32_t op = field(static_cast<uint32_t>(i.op), 28);
  switch (i.op) {
    case Opcode::Sys:
      return op | static_cast<uint32_t>(i.sys);
    case Opcode::AluReg:
      return op | field(static_cast<uint32_t>(i.fn), 24) | field(i.rd.index, 19) |
             field(i.rn.index, 14) | field(i.rm.index, 9);
    case Opcode::AluImm:
      return op | field(static_cast<uint32_t>(i.fn), 24) | field(i.rd.index, 19) |
             field(i.rn.index, 14) | field(static_cast<uint32_t>(i.imm), 2);
    case Opcode::AddUxtw:
      return op | field(i.rd.index, 19) | field(i.rn.index, 14) | field(i.rm.index, 9);
    case Opcode::Load:
    case Opcode::Store:
      return op | field(i.size_log2, 26) | field(static_cast<uint32_t>(i.mode), 24) |
             field(i.rt.index, 19) | field(i.rn.index, 14) | field(pack_signed(i.imm, 9), 5);
    case Opcode::B:
    case Opcode::Bl:
      return op | pack_signed(i.imm, 26);
    case Opcode::Cbz:
    case Opcode::Cbnz:
      return op | field(i.rt.index, 19) | pack_signed(i.imm, 19);
    case Opcode::Br:
      return op | field(i.rn.index, 14);
  }
  throw std::invalid_argument("unknown opcode");
}

std::string_view opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Sys: return "sys";
    case Opcode::AluReg: return "alu-reg";
    case Opcode::AluImm: return "alu-imm";
    case Opcode::AddUxtw: return "add-uxtw";
    case Opcode::Load: return "load";
    case Opcode::Store: return "store";
    case Opcode::B: return "b";
    case Opcode::Bl: return "bl";
    case Opcode::Cbz: return "cbz";
    case Opcode::Cbnz: return "cbnz";
    case Opcode::Br: return "br";
  }
  return "?";
}

std::string register_name(Reg r) {
  return r.is_sp() ? std::string("sp") : fmt::format("x{}", r.index);
}

namespace {

std::string wreg(Reg r) { return r.is_sp() ? std::string("wsp") : fmt::format("w{}", r.index); }

std::string displacement(int64_t units) {
  const int64_t bytes = units * 4;
  return bytes < 0 ? fmt::format(".-{}", -bytes) : fmt::format(".+{}", bytes);
}

constexpr std::string_view kAluNames[] = {"add", "sub", "and", "orr", "eor"};
constexpr std::string_view kLoadNames[] = {"ldrb", "ldrh", "ldrw", "ldr"};
constexpr std::string_view kStoreNames[] = {"strb", "strh", "strw", "str"};

}  // namespace

std::string disassemble(const Instr& i) {
  switch (i.op) {
    case Opcode::Sys:
      return i.sys == SysKind::Nop ? "nop" : "udf";
    case Opcode::AluReg:
      return fmt::format("{} {}, {}, {}", kAluNames[static_cast<int>(i.fn)], register_name(i.rd),
                         register_name(i.rn), register_name(i.rm));
    case Opcode::AluImm:
      return fmt::format("{} {}, {}, #{}", kAluNames[static_cast<int>(i.fn)], register_name(i.rd),
                         register_name(i.rn), i.imm);
    case Opcode::AddUxtw:
      return fmt::format("add {}, {}, {}, uxtw", register_name(i.rd), register_name(i.rn),
                         wreg(i.rm));
    case Opcode::Load:
    case Opcode::Store: {
      const auto mnemonic =
          (i.op == Opcode::Load ? kLoadNames : kStoreNames)[i.size_log2];
      const auto rt = register_name(i.rt);
      const auto rn = register_name(i.rn);
      switch (i.mode) {
        case AddrMode::Base: return fmt::format("{} {}, [{}]", mnemonic, rt, rn);
        case AddrMode::Offset: return fmt::format("{} {}, [{}, #{}]", mnemonic, rt, rn, i.imm);
        case AddrMode::Pre: return fmt::format("{} {}, [{}, #{}]!", mnemonic, rt, rn, i.imm);
        case AddrMode::Post: return fmt::format("{} {}, [{}], #{}", mnemonic, rt, rn, i.imm);
      }
      break;
    }
    case Opcode::B: return fmt::format("b {}", displacement(i.imm));
    case Opcode::Bl: return fmt::format("bl {}", displacement(i.imm));
    case Opcode::Cbz:
      return fmt::format("cbz {}, {}", register_name(i.rt), displacement(i.imm));
    case Opcode::Cbnz:
      return fmt::format("cbnz {}, {}", register_name(i.rt), displacement(i.imm));
    case Opcode::Br: return fmt::format("br {}", register_name(i.rn));
  }
  return "?";
}

std::string disassemble_word(uint32_t word) {
  if (auto i = decode(word)) return disassemble(*i);
  return fmt::format("0x{:08X}", word);
}

}  // namespace sfi
