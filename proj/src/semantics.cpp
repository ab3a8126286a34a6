#include "sfi/semantics.hpp"

#include <algorithm>

namespace sfi {

std::string_view fault_name(FaultKind k) {
  switch (k) {
    case FaultKind::Undefined: return "Undefined";
    case FaultKind::MemUnmapped: return "MemUnmapped";
    case FaultKind::MemPermission: return "MemPermission";
    case FaultKind::BadPc: return "BadPc";
  }
  return "?";
}

GOperands<ConcreteDomain> concrete_operands(const Instr& i) {
  return {i.rd.index, i.rn.index, i.rm.index, i.rt.index, static_cast<uint64_t>(i.imm)};
}

StepOutcome step(const MachineState& s, const MemoryLayout& layout, const RtTable& rt,
                 const ByteReader& mem, const Instr& instr) {
  ConcreteDomain d{&mem};
  const GState<ConcreteDomain> pre{s.r, s.sp, s.pc};
  const GLayout<ConcreteDomain> gl{layout.base, layout.code_end, rt.rt, layout.profile.guard_size};
  const auto fx = execute(d, pre, gl, instr, concrete_operands(instr));

  StepOutcome out;
  out.state = MachineState{fx.post.r, fx.post.sp, fx.post.pc};
  for (const auto& a : fx.accesses) out.events.push_back({a.kind, a.addr, instr.op});

  if (fx.undefined || fx.mem_unmapped || fx.mem_perm) {
    out.kind = StepOutcome::Kind::Fault;
    out.fault = fx.undefined      ? FaultKind::Undefined
                : fx.mem_unmapped ? FaultKind::MemUnmapped
                                  : FaultKind::MemPermission;
    out.state = s;
    return out;
  }
  for (const auto& a : fx.accesses)
    if (a.kind == AccessKind::WriteByte)
      out.writes.emplace_back(a.addr, static_cast<uint8_t>(a.value));

  const auto call = std::find(fx.rt_call.begin(), fx.rt_call.end(), true);
  if (call != fx.rt_call.end()) {
    out.kind = StepOutcome::Kind::RuntimeCall;
    out.rt_index = static_cast<unsigned>(call - fx.rt_call.begin());
  } else if (fx.bad_pc) {
    out.kind = StepOutcome::Kind::Fault;
    out.fault = FaultKind::BadPc;
    out.outside_model = fx.outside_model;
  }
  return out;
}

// ---------------------------------------------------------------------------

using sym::Term;

SymbolicDomain::Bv SymbolicDomain::little_endian(const std::vector<Bv>& bytes) {
  Term v = bytes.back();
  for (size_t i = bytes.size() - 1; i-- > 0;) v = ts_.concat(v, bytes[i]);
  return ts_.zext(v, 64);
}

bool SymbolicDomain::branch(Bool c) {
  if (auto v = ts_.as_const(c)) return *v != 0;
  const size_t n = taken_.size();
  const bool choice = n < script_.size() ? script_[n] : true;
  taken_.push_back(choice);
  guard_ = ts_.land(guard_, choice ? c : ts_.lnot(c));
  return choice;
}

SymbolicDomain::Bv SymbolicDomain::read_reg(const GState<SymbolicDomain>& s, Bv idx) {
  if (auto v = ts_.as_const(idx)) return *v == 31 ? s.sp : s.r[*v];
  Term out = s.sp;
  for (unsigned i = 31; i-- > 0;) out = ts_.ite(ts_.eq(idx, ts_.bv(i, 5)), s.r[i], out);
  return out;
}

void SymbolicDomain::write_reg(GState<SymbolicDomain>& s, Bv idx, Bv v) {
  if (auto k = ts_.as_const(idx)) {
    (*k == 31 ? s.sp : s.r[*k]) = v;
    return;
  }
  for (unsigned i = 0; i < 31; ++i) s.r[i] = ts_.ite(ts_.eq(idx, ts_.bv(i, 5)), v, s.r[i]);
  s.sp = ts_.ite(ts_.eq(idx, ts_.bv(31, 5)), v, s.sp);
}

SymbolicDomain::Bv SymbolicDomain::load_byte(Bv addr) {
  Term value = ts_.symbol(fresh_.prefix + std::to_string(fresh_.next++), 8);
  const Term offset = ts_.sub(addr, layout_.base);
  for (unsigned j = 8 * kRtCount; j-- > 0;) {
    const Term rt_byte = ts_.extract(layout_.rt[j / 8], 8 * (j % 8) + 7, 8 * (j % 8));
    value = ts_.ite(ts_.eq(offset, ts_.bv(j, 64)), rt_byte, value);
  }
  return value;
}

SymState symbolic_state(sym::TermStore& ts) {
  SymState s;
  for (unsigned i = 0; i < 31; ++i) s.r[i] = ts.symbol("r" + std::to_string(i), 64);
  s.sp = ts.symbol("sp", 64);
  s.pc = ts.symbol("pc", 64);
  return s;
}

SymLayout symbolic_layout(sym::TermStore& ts, const Profile& profile) {
  SymLayout l;
  l.base = ts.symbol("base", 64);
  l.code_end = ts.symbol("code_end", 64);
  for (unsigned i = 0; i < kRtCount; ++i) l.rt[i] = ts.symbol("rt" + std::to_string(i), 64);
  l.guard_size = profile.guard_size;
  return l;
}

SymOperands constant_operands(sym::TermStore& ts, const Instr& i) {
  return {ts.bv(i.rd.index, 5), ts.bv(i.rn.index, 5), ts.bv(i.rm.index, 5), ts.bv(i.rt.index, 5),
          ts.bv(static_cast<uint64_t>(i.imm), 64)};
}

std::vector<SymPath> sym_step(sym::TermStore& ts, const SymState& pre, const SymLayout& layout,
                              const Instr& shape, const SymOperands& ops, FreshNames& fresh) {
  std::vector<SymPath> paths;
  const unsigned first = fresh.next;
  unsigned last = first;
  std::vector<bool> script;
  for (;;) {
    fresh.next = first;
    SymbolicDomain d(ts, layout, fresh, script);
    auto fx = execute(d, pre, layout, shape, ops);
    last = std::max(last, fresh.next);
    paths.push_back({d.path_guard(), std::move(fx)});

    script = d.decisions();
    while (!script.empty() && !script.back()) script.pop_back();
    if (script.empty()) break;
    script.back() = false;
  }
  fresh.next = last;
  return paths;
}

void bind_state(sym::Assignment& out, const MachineState& s, const MemoryLayout& layout,
                const RtTable& rt) {
  for (unsigned i = 0; i < 31; ++i) out["r" + std::to_string(i)] = s.r[i];
  out["sp"] = s.sp;
  out["pc"] = s.pc;
  out["base"] = layout.base;
  out["code_end"] = layout.code_end;
  for (unsigned i = 0; i < kRtCount; ++i) out["rt" + std::to_string(i)] = rt.rt[i];
}

SymOperands symbolic_operands(sym::TermStore& ts) {
  return {ts.symbol("f_rd", 5), ts.symbol("f_rn", 5), ts.symbol("f_rm", 5), ts.symbol("f_rt", 5),
          ts.symbol("f_imm", 64)};
}

void bind_operands(sym::Assignment& out, const Instr& i) {
  out["f_rd"] = i.rd.index;
  out["f_rn"] = i.rn.index;
  out["f_rm"] = i.rm.index;
  out["f_rt"] = i.rt.index;
  out["f_imm"] = static_cast<uint64_t>(i.imm);
}

std::optional<std::string> engine_mismatch(const MachineState& s, const MemoryLayout& layout,
                                           const RtTable& rt, const ByteReader& mem,
                                           const Instr& instr, bool symbolic_fields) {
  std::vector<uint8_t> reads;
  const ByteReader recording = [&](uint64_t a) {
    const uint8_t v = mem(a);
    reads.push_back(v);
    return v;
  };
  const StepOutcome want = step(s, layout, rt, recording, instr);

  sym::TermStore ts;
  const SymState pre = symbolic_state(ts);
  const SymLayout sl = symbolic_layout(ts, layout.profile);
  const SymOperands ops = symbolic_fields ? symbolic_operands(ts) : constant_operands(ts, instr);
  FreshNames fresh;
  const auto paths = sym_step(ts, pre, sl, instr, ops, fresh);

  sym::Assignment env;
  bind_state(env, s, layout, rt);
  if (symbolic_fields) bind_operands(env, instr);
  if (fresh.next != reads.size())
    return "symbolic engine created " + std::to_string(fresh.next) + " load symbols for " +
           std::to_string(reads.size()) + " concrete reads";
  for (unsigned k = 0; k < fresh.next; ++k) env[fresh.prefix + std::to_string(k)] = reads[k];

  sym::Evaluator ev(ts, env);
  const SymPath* live = nullptr;
  for (const auto& p : paths) {
    if (!ev.truth(p.guard)) continue;
    if (live) return std::string("two path guards hold");
    live = &p;
  }
  if (!live) return std::string("no path guard holds");
  const SymEffects& fx = live->effects;

  for (unsigned i = 0; i < 31; ++i)
    if (ev(fx.post.r[i]) != want.state.r[i]) return "r" + std::to_string(i) + " differs";
  if (ev(fx.post.sp) != want.state.sp) return std::string("sp differs");
  if (ev(fx.post.pc) != want.state.pc) return std::string("pc differs");

  if (fx.accesses.size() != want.events.size()) return std::string("event count differs");
  for (size_t k = 0; k < fx.accesses.size(); ++k) {
    if (fx.accesses[k].kind != want.events[k].kind) return std::string("event kind differs");
    if (ev(fx.accesses[k].addr) != want.events[k].addr) return std::string("event address differs");
  }

  StepOutcome got;
  if (ev.truth(fx.undefined)) {
    got.kind = StepOutcome::Kind::Fault;
    got.fault = FaultKind::Undefined;
  } else if (ev.truth(fx.mem_unmapped)) {
    got.kind = StepOutcome::Kind::Fault;
    got.fault = FaultKind::MemUnmapped;
  } else if (ev.truth(fx.mem_perm)) {
    got.kind = StepOutcome::Kind::Fault;
    got.fault = FaultKind::MemPermission;
  } else {
    for (const auto& a : fx.accesses)
      if (a.kind == AccessKind::WriteByte)
        got.writes.emplace_back(ev(a.addr), static_cast<uint8_t>(ev(a.value)));
    for (unsigned i = 0; i < kRtCount && got.kind == StepOutcome::Kind::Next; ++i) {
      if (ev.truth(fx.rt_call[i])) {
        got.kind = StepOutcome::Kind::RuntimeCall;
        got.rt_index = i;
      }
    }
    if (got.kind == StepOutcome::Kind::Next && ev.truth(fx.bad_pc)) {
      got.kind = StepOutcome::Kind::Fault;
      got.fault = FaultKind::BadPc;
      got.outside_model = ev.truth(fx.outside_model);
    }
  }
  if (got.kind != want.kind || (got.kind == StepOutcome::Kind::Fault && got.fault != want.fault) ||
      got.rt_index != want.rt_index || got.outside_model != want.outside_model)
    return std::string("outcome differs");
  if (got.writes != want.writes) return std::string("stored bytes differ");
  return std::nullopt;
}

}  // namespace sfi
