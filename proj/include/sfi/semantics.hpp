#pragma once

// Instruction semantics, written once against an abstract value domain.
//
// `execute<D>` is the only definition of what an SBX64 instruction does. It
// is instantiated with ConcreteDomain (plain 64-bit arithmetic, used by the
// simulator and by counterexample replay) and with SymbolicDomain (term
// construction, used by the prover). Register indices and immediates are
// domain values too, so the symbolic instantiation can leave operand fields
// unknown and cover a whole instruction class in one query.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sfi/isa.hpp"
#include "sfi/policy.hpp"
#include "sfi/state.hpp"
#include "sfi/term.hpp"

namespace sfi {

enum class AccessKind : uint8_t { ReadByte, WriteByte };

template <class D>
struct GState {
  std::array<typename D::Bv, 31> r;
  typename D::Bv sp;
  typename D::Bv pc;
};

template <class D>
struct GLayout {
  typename D::Bv base;
  typename D::Bv code_end;
  std::array<typename D::Bv, kRtCount> rt;
  uint64_t guard_size;
};

/// Register fields are 5-bit indices; imm is the 64-bit two's complement
/// value of the immediate field.
template <class D>
struct GOperands {
  typename D::Bv rd, rn, rm, rt;
  typename D::Bv imm;
};

template <class D>
struct GAccess {
  AccessKind kind;
  typename D::Bv addr;
  typename D::Bv value;  // 8-bit; loaded or stored byte
};

/// Everything one instruction does. Termination flags are independent
/// booleans; StepOutcome applies the priority order
/// undefined > memory fault > runtime call > bad pc.
template <class D>
struct GEffects {
  GState<D> post;
  std::vector<GAccess<D>> accesses;
  typename D::Bool undefined;
  typename D::Bool mem_unmapped;
  typename D::Bool mem_perm;
  std::array<typename D::Bool, kRtCount> rt_call;
  typename D::Bool bad_pc;
  typename D::Bool outside_model;
};

template <class D>
typename D::Bv alu(D& d, AluFn fn, typename D::Bv a, typename D::Bv b) {
  switch (fn) {
    case AluFn::Add: return d.add(a, b);
    case AluFn::Sub: return d.sub(a, b);
    case AluFn::And: return d.band(a, b);
    case AluFn::Orr: return d.bor(a, b);
    case AluFn::Xor: return d.bxor(a, b);
  }
  return a;
}

template <class D>
GState<D> select_state(D& d, typename D::Bool c, const GState<D>& a, const GState<D>& b) {
  GState<D> out;
  for (size_t i = 0; i < out.r.size(); ++i) out.r[i] = d.ite(c, a.r[i], b.r[i]);
  out.sp = d.ite(c, a.sp, b.sp);
  out.pc = d.ite(c, a.pc, b.pc);
  return out;
}

template <class D>
GEffects<D> execute(D& d, const GState<D>& pre, const GLayout<D>& layout, const Instr& shape,
                    const GOperands<D>& ops) {
  using Bv = typename D::Bv;
  using Bool = typename D::Bool;

  GEffects<D> fx{pre, {}, d.no(), d.no(), d.no(), {d.no(), d.no(), d.no()}, d.no(), d.no()};
  GState<D>& post = fx.post;
  const Bv next_pc = d.add(pre.pc, d.k(4));
  const Bv sandbox_last = d.add(layout.base, d.k(kSandboxSize - 1));

  switch (shape.op) {
    case Opcode::Sys:
      if (shape.sys == SysKind::Udf)
        fx.undefined = d.yes();
      else
        post.pc = next_pc;
      break;

    case Opcode::AluReg:
      d.write_reg(post, ops.rd,
                  alu(d, shape.fn, d.read_reg(pre, ops.rn), d.read_reg(pre, ops.rm)));
      post.pc = next_pc;
      break;

    case Opcode::AluImm:
      d.write_reg(post, ops.rd, alu(d, shape.fn, d.read_reg(pre, ops.rn), ops.imm));
      post.pc = next_pc;
      break;

    case Opcode::AddUxtw:
      d.write_reg(post, ops.rd, d.add(d.read_reg(pre, ops.rn), d.low32(d.read_reg(pre, ops.rm))));
      post.pc = next_pc;
      break;

    case Opcode::Load:
    case Opcode::Store: {
      const bool is_load = shape.op == Opcode::Load;
      const Bv base_value = d.read_reg(pre, ops.rn);
      const Bv offset_addr = d.add(base_value, ops.imm);
      const bool uses_offset = shape.mode == AddrMode::Offset || shape.mode == AddrMode::Pre;
      const Bv addr = uses_offset ? offset_addr : base_value;
      const Bv stored = is_load ? d.k(0) : d.read_reg(pre, ops.rt);

      Bool unmapped = d.no();
      Bool forbidden = d.no();
      std::vector<Bv> loaded;
      for (unsigned k = 0; k < shape.access_bytes(); ++k) {
        const Bv byte_addr = d.add(addr, d.k(k));
        const Bool in_sandbox = d.land(d.ule(layout.base, byte_addr), d.ule(byte_addr, sandbox_last));
        unmapped = d.lor(unmapped, d.lnot(in_sandbox));
        if (is_load) {
          const Bv value = d.load_byte(byte_addr);
          loaded.push_back(value);
          fx.accesses.push_back({AccessKind::ReadByte, byte_addr, value});
        } else {
          const Bool writable = d.ule(layout.code_end, byte_addr);
          forbidden = d.lor(forbidden, d.land(in_sandbox, d.lnot(writable)));
          fx.accesses.push_back({AccessKind::WriteByte, byte_addr, d.byte_of(stored, k)});
        }
      }
      fx.mem_unmapped = unmapped;
      fx.mem_perm = d.land(d.lnot(unmapped), forbidden);

      GState<D> done = pre;
      if (is_load) d.write_reg(done, ops.rt, d.little_endian(loaded));
      if (shape.mode == AddrMode::Pre || shape.mode == AddrMode::Post)
        d.write_reg(done, ops.rn, offset_addr);
      done.pc = next_pc;
      post = select_state(d, d.lor(unmapped, forbidden), pre, done);
      break;
    }

    case Opcode::B:
      post.pc = d.add(pre.pc, d.times4(ops.imm));
      break;

    case Opcode::Bl:
      post.r[reg::kLink.index] = next_pc;
      post.pc = d.add(pre.pc, d.times4(ops.imm));
      break;

    case Opcode::Cbz:
    case Opcode::Cbnz: {
      const Bool zero = d.eq(d.read_reg(pre, ops.rt), d.k(0));
      const Bool taken = shape.op == Opcode::Cbz ? zero : d.lnot(zero);
      post.pc = d.branch(taken) ? d.add(pre.pc, d.times4(ops.imm)) : next_pc;
      break;
    }

    case Opcode::Br:
      post.pc = d.read_reg(pre, ops.rn);
      break;
  }

  // Where control goes next.
  const Bv pc = post.pc;
  Bool any_rt = d.no();
  for (unsigned i = 0; i < kRtCount; ++i) {
    fx.rt_call[i] = d.eq(pc, layout.rt[i]);
    any_rt = d.lor(any_rt, fx.rt_call[i]);
  }
  const Bv code_start = d.add(layout.base, d.k(kRtPageSize));
  const Bool executable = d.land(d.land(d.ule(code_start, pc), d.ult(pc, layout.code_end)),
                                 d.eq(d.band(pc, d.k(3)), d.k(0)));
  fx.bad_pc = d.land(d.lnot(any_rt), d.lnot(executable));
  const Bv model_lo = d.sub(layout.base, d.k(layout.guard_size));
  const Bv model_last = d.add(layout.base, d.k(kSandboxSize + (layout.guard_size - 1)));
  const Bool in_model = d.land(d.ule(model_lo, pc), d.ule(pc, model_last));
  fx.outside_model = d.land(fx.bad_pc, d.lnot(in_model));
  return fx;
}

// ---------------------------------------------------------------------------
// Concrete interpretation.

using ByteReader = std::function<uint8_t(uint64_t addr)>;

struct ConcreteDomain {
  using Bv = uint64_t;
  using Bool = bool;

  const ByteReader* reader = nullptr;

  static Bv k(uint64_t v) { return v; }
  static Bool yes() { return true; }
  static Bool no() { return false; }
  static Bv add(Bv a, Bv b) { return a + b; }
  static Bv sub(Bv a, Bv b) { return a - b; }
  static Bv band(Bv a, Bv b) { return a & b; }
  static Bv bor(Bv a, Bv b) { return a | b; }
  static Bv bxor(Bv a, Bv b) { return a ^ b; }
  static Bv low32(Bv a) { return a & 0xFFFFFFFFull; }
  static Bv times4(Bv a) { return a << 2; }
  static Bv byte_of(Bv v, unsigned k) { return (v >> (8 * k)) & 0xFF; }
  static Bv little_endian(const std::vector<Bv>& bytes) {
    Bv v = 0;
    for (size_t i = 0; i < bytes.size(); ++i) v |= bytes[i] << (8 * i);
    return v;
  }
  static Bool eq(Bv a, Bv b) { return a == b; }
  static Bool ult(Bv a, Bv b) { return a < b; }
  static Bool ule(Bv a, Bv b) { return a <= b; }
  static Bool lnot(Bool a) { return !a; }
  static Bool land(Bool a, Bool b) { return a && b; }
  static Bool lor(Bool a, Bool b) { return a || b; }
  static Bv ite(Bool c, Bv a, Bv b) { return c ? a : b; }
  static bool branch(Bool c) { return c; }

  static Bv read_reg(const GState<ConcreteDomain>& s, Bv idx) {
    return idx == 31 ? s.sp : s.r[idx];
  }
  static void write_reg(GState<ConcreteDomain>& s, Bv idx, Bv v) {
    if (idx == 31)
      s.sp = v;
    else
      s.r[idx] = v;
  }
  Bv load_byte(Bv addr) const { return (*reader)(addr); }
};

struct Event {
  AccessKind kind = AccessKind::ReadByte;
  uint64_t addr = 0;
  Opcode source = Opcode::Sys;
  friend bool operator==(const Event&, const Event&) = default;
};

enum class FaultKind : uint8_t { Undefined, MemUnmapped, MemPermission, BadPc };
std::string_view fault_name(FaultKind k);

struct StepOutcome {
  enum class Kind : uint8_t { Next, Fault, RuntimeCall };

  Kind kind = Kind::Next;
  FaultKind fault = FaultKind::Undefined;
  bool outside_model = false;  // BadPc beyond the guard zones
  unsigned rt_index = 0;
  /// Successor state. For faults this is the pre-state; for runtime calls it
  /// is the state handed to the runtime.
  MachineState state;
  std::vector<Event> events;
  /// Bytes to commit, in event order. Empty unless the step did not fault.
  std::vector<std::pair<uint64_t, uint8_t>> writes;
};

GOperands<ConcreteDomain> concrete_operands(const Instr& instr);

/// One concrete step. `mem` is consulted for every byte a load touches
/// (including bytes of an access that faults).
StepOutcome step(const MachineState& state, const MemoryLayout& layout, const RtTable& rt,
                 const ByteReader& mem, const Instr& instr);

// ---------------------------------------------------------------------------
// Symbolic interpretation.

/// Fresh load symbols are named `<prefix><n>`; each path of one instruction
/// restarts at `next`, so the same load gets the same name on every path.
struct FreshNames {
  std::string prefix = "ld";
  unsigned next = 0;
};

class SymbolicDomain {
 public:
  using Bv = sym::Term;
  using Bool = sym::Term;

  SymbolicDomain(sym::TermStore& ts, const GLayout<SymbolicDomain>& layout, FreshNames& fresh,
                 std::vector<bool> script)
      : ts_(ts), layout_(layout), fresh_(fresh), script_(std::move(script)), guard_(ts.truth()) {}

  Bv k(uint64_t v) { return ts_.bv(v, 64); }
  Bool yes() { return ts_.truth(); }
  Bool no() { return ts_.falsity(); }
  Bv add(Bv a, Bv b) { return ts_.add(a, b); }
  Bv sub(Bv a, Bv b) { return ts_.sub(a, b); }
  Bv band(Bv a, Bv b) { return ts_.band(a, b); }
  Bv bor(Bv a, Bv b) { return ts_.bor(a, b); }
  Bv bxor(Bv a, Bv b) { return ts_.bxor(a, b); }
  Bv low32(Bv a) { return ts_.zext(ts_.extract(a, 31, 0), 64); }
  Bv times4(Bv a) { return ts_.shl(a, ts_.bv(2, 64)); }
  Bv byte_of(Bv v, unsigned k) { return ts_.extract(v, 8 * k + 7, 8 * k); }
  Bv little_endian(const std::vector<Bv>& bytes);
  Bool eq(Bv a, Bv b) { return ts_.eq(a, b); }
  Bool ult(Bv a, Bv b) { return ts_.ult(a, b); }
  Bool ule(Bv a, Bv b) { return ts_.ule(a, b); }
  Bool lnot(Bool a) { return ts_.lnot(a); }
  Bool land(Bool a, Bool b) { return ts_.land(a, b); }
  Bool lor(Bool a, Bool b) { return ts_.lor(a, b); }
  Bv ite(Bool c, Bv a, Bv b) { return ts_.ite(c, a, b); }

  /// Path splitting: replays the decision script, then defaults to `true`.
  bool branch(Bool c);

  Bv read_reg(const GState<SymbolicDomain>& s, Bv idx);
  void write_reg(GState<SymbolicDomain>& s, Bv idx, Bv v);

  /// Fresh byte, except that bytes in [base, base+24) are the runtime-call
  /// table entries.
  Bv load_byte(Bv addr);

  Bool path_guard() const { return guard_; }
  const std::vector<bool>& decisions() const { return taken_; }

 private:
  sym::TermStore& ts_;
  const GLayout<SymbolicDomain>& layout_;
  FreshNames& fresh_;
  std::vector<bool> script_;
  std::vector<bool> taken_;
  Bool guard_;
};

using SymState = GState<SymbolicDomain>;
using SymLayout = GLayout<SymbolicDomain>;
using SymOperands = GOperands<SymbolicDomain>;
using SymEffects = GEffects<SymbolicDomain>;

struct SymPath {
  sym::Term guard;
  SymEffects effects;
};

/// Standard symbol names: r0..r30, sp, pc, base, code_end, rt0..rt2.
SymState symbolic_state(sym::TermStore& ts);
SymLayout symbolic_layout(sym::TermStore& ts, const Profile& profile);
/// Operands fixed to the fields of a concrete instruction.
SymOperands constant_operands(sym::TermStore& ts, const Instr& instr);

/// Enumerates every path through the instruction (at most two today: the
/// compare-and-branch split). Terminating behaviour is carried by the
/// effect flags inside each path.
std::vector<SymPath> sym_step(sym::TermStore& ts, const SymState& pre, const SymLayout& layout,
                              const Instr& shape, const SymOperands& ops, FreshNames& fresh);

/// Assignment that maps the standard symbols to a concrete state/layout.
void bind_state(sym::Assignment& out, const MachineState& s, const MemoryLayout& layout,
                const RtTable& rt);

/// Operand fields as 5-bit symbols f_rd, f_rn, f_rm, f_rt and a 64-bit f_imm.
SymOperands symbolic_operands(sym::TermStore& ts);
void bind_operands(sym::Assignment& out, const Instr& instr);

/// Runs both interpretations on the same inputs and describes the first
/// difference in post-state, events, stored bytes or outcome, or returns
/// nullopt. With `symbolic_fields` the operand fields stay symbolic (as in
/// class-mode proofs) and are bound to the instruction's values.
std::optional<std::string> engine_mismatch(const MachineState& state, const MemoryLayout& layout,
                                           const RtTable& rt, const ByteReader& mem,
                                           const Instr& instr, bool symbolic_fields = false);

}  // namespace sfi
