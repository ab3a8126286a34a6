#include "sfi/prover.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

namespace sfi {

using sym::Term;
using sym::TermStore;

std::string word_id(uint32_t word) { return fmt::format("0x{:08X}", word); }

namespace {

Term in_model(TermStore& ts, const SymLayout& l, Term addr) {
  const Term lo = ts.sub(l.base, ts.bv(l.guard_size, 64));
  const Term last = ts.add(l.base, ts.bv(kSandboxSize + (l.guard_size - 1), 64));
  return ts.land(ts.ule(lo, addr), ts.ule(addr, last));
}

/// Constrains a 5-bit register field to the registers set in `mask`.
Term register_constraint(TermStore& ts, Term field, uint32_t mask) {
  std::vector<Term> parts;
  if (std::popcount(mask) <= 16) {
    for (unsigned i = 0; i < 32; ++i)
      if ((mask >> i) & 1u) parts.push_back(ts.eq(field, ts.bv(i, 5)));
    return ts.lor_all(parts);
  }
  for (unsigned i = 0; i < 32; ++i)
    if (!((mask >> i) & 1u)) parts.push_back(ts.ne(field, ts.bv(i, 5)));
  return ts.land_all(parts);
}

ClassSubject singleton(const Instr& i) {
  ClassSubject s;
  s.id = word_id(encode(i));
  s.family = "word";
  s.shape = i;
  s.rd_mask = reg_bit(i.rd.index);
  s.rn_mask = reg_bit(i.rn.index);
  s.rm_mask = reg_bit(i.rm.index);
  s.rt_mask = reg_bit(i.rt.index);
  return s;
}

Obligation make_obligation(std::string id, const ClassSubject& subject, bool single,
                           const Profile& profile, Mutation mutation) {
  Obligation ob;
  ob.id = std::move(id);
  ob.profile = profile;
  ob.mutation = mutation;
  ob.subject = subject;
  ob.single = single;
  TermStore& ts = ob.ts;
  ob.layout = symbolic_layout(ts, profile);
  ob.pre = symbolic_state(ts);
  const SymLayout& l = ob.layout;
  const Instr& shape = subject.shape;
  auto& as = ob.assumptions;

  const auto field = [&](uint32_t mask, Reg fixed, const char* name) {
    if (single) return ts.bv(fixed.index, 5);
    if (std::popcount(mask) == 1) return ts.bv(static_cast<unsigned>(std::countr_zero(mask)), 5);
    const Term f = ts.symbol(name, 5);
    as.push_back(register_constraint(ts, f, mask));
    return f;
  };
  ob.ops.rd = field(subject.rd_mask, shape.rd, "f_rd");
  ob.ops.rn = field(subject.rn_mask, shape.rn, "f_rn");
  ob.ops.rm = field(subject.rm_mask, shape.rm, "f_rm");
  ob.ops.rt = field(subject.rt_mask, shape.rt, "f_rt");
  if (single || subject.imm_rule == ImmRule::Fixed) {
    ob.ops.imm = ts.bv(static_cast<uint64_t>(shape.imm), 64);
  } else {
    const Term f = ts.symbol("f_imm", subject.imm_bits);
    ob.ops.imm = subject.imm_signed ? ts.sext(f, 64) : ts.zext(f, 64);
    if (subject.imm_rule == ImmRule::OneOf) {
      std::vector<Term> choices;
      for (int64_t v : subject.imm_values)
        choices.push_back(ts.eq(f, ts.bv(static_cast<uint64_t>(v), subject.imm_bits)));
      as.push_back(ts.lor_all(choices));
    }
  }

  // Layout and runtime-table constraints.
  const uint64_t guard = profile.guard_size;
  as.push_back(ts.eq(ts.extract(l.base, 31, 0), ts.bv(0, 32)));
  as.push_back(ts.ule(ts.bv(std::max(kSandboxSize, guard), 64), l.base));
  as.push_back(ts.ule(l.base, ts.bv(0ull - kSandboxSize - guard, 64)));
  as.push_back(ts.eq(ts.extract(l.code_end, 11, 0), ts.bv(0, 12)));
  as.push_back(ts.ule(ts.add(l.base, ts.bv(kRtPageSize, 64)), l.code_end));
  as.push_back(ts.ule(l.code_end, ts.add(l.base, ts.bv(kSandboxSize, 64))));
  for (unsigned i = 0; i < kRtCount; ++i) {
    as.push_back(ts.lnot(in_model(ts, l, l.rt[i])));
    as.push_back(ts.eq(ts.extract(l.rt[i], 1, 0), ts.bv(0, 2)));
    for (unsigned j = 0; j < i; ++j) as.push_back(ts.ne(l.rt[i], l.rt[j]));
  }
  // The verifier only admits direct branches whose target stays inside.
  if (shape.is_direct_branch()) {
    const Term target =
        ts.add(ts.sub(ob.pre.pc, l.base), ts.shl(ob.ops.imm, ts.bv(2, 64)));
    as.push_back(ts.ult(target, ts.bv(kSandboxSize, 64)));
  }
  ob.pre_invariant = invariant_term(ts, ob.pre, l, profile);

  FreshNames fresh;
  for (auto& p : sym_step(ts, ob.pre, l, shape, ob.ops, fresh)) {
    const SymEffects& fx = p.effects;
    std::vector<Term> bad;
    for (const auto& a : fx.accesses) bad.push_back(ts.lnot(in_model(ts, l, a.addr)));
    bad.push_back(fx.outside_model);
    std::vector<Term> stop{fx.undefined, fx.mem_unmapped, fx.mem_perm, fx.bad_pc};
    stop.insert(stop.end(), fx.rt_call.begin(), fx.rt_call.end());
    ob.paths.push_back({p.guard, ts.lor_all(bad), ts.lor_all(stop),
                        invariant_term(ts, fx.post, l, profile), fx.post, fx.accesses,
                        fx.outside_model});
  }
  ob.load_symbols = fresh.next;
  return ob;
}

}  // namespace

Obligation build_obligation(const ClassSubject& subject, const Profile& profile, Mutation mutation) {
  return make_obligation(subject.id, subject, false, profile, mutation);
}

Obligation build_obligation(const Instr& instr, const Profile& profile, Mutation mutation) {
  if (!is_encodable(instr)) throw ObligationError("instruction has no encoding");
  if (!accepts(instr, kCensusOffset, profile, mutation).accepted())
    throw ObligationError(fmt::format("'{}' is not whitelisted", disassemble(instr)));
  const ClassSubject s = singleton(instr);
  return make_obligation(s.id, s, true, profile, mutation);
}

Term invariant_term(TermStore& ts, const SymState& s, const SymLayout& l, const Profile& p) {
  const Term lo = ts.sub(l.base, ts.bv(p.slack, 64));
  const Term hi = ts.add(l.base, ts.bv(kSandboxSize + p.slack, 64));
  const auto in_range = [&](Term v) { return ts.land(ts.ule(lo, v), ts.ult(v, hi)); };
  const Term link = s.r[reg::kLink.index];
  return ts.land_all({
      ts.eq(s.r[reg::kBase.index], l.base),
      in_range(s.r[reg::kAddr.index]),
      in_range(s.sp),
      ts.ule(ts.add(l.base, ts.bv(kRtPageSize, 64)), s.pc),
      ts.ult(s.pc, l.code_end),
      ts.eq(ts.band(s.pc, ts.bv(3, 64)), ts.bv(0, 64)),
      ts.lor_all({ts.land(ts.ule(l.base, link),
                          ts.ule(link, ts.add(l.base, ts.bv(kSandboxSize, 64)))),
                  ts.eq(link, l.rt[0]), ts.eq(link, l.rt[1]), ts.eq(link, l.rt[2])}),
  });
}

std::string invariant_smt_definition(const Profile& p) {
  const auto k = [](uint64_t v) { return sym::SmtWriter::literal(v, 64); };
  const std::string lo = fmt::format("(bvsub p_base {})", k(p.slack));
  const std::string hi = fmt::format("(bvadd p_base {})", k(kSandboxSize + p.slack));
  std::string out = "(define-fun sfi-inv ((p_base (_ BitVec 64)) (p_code_end (_ BitVec 64))\n";
  out += "    (p_rt0 (_ BitVec 64)) (p_rt1 (_ BitVec 64)) (p_rt2 (_ BitVec 64))\n";
  out += "    (p_x21 (_ BitVec 64)) (p_x18 (_ BitVec 64)) (p_sp (_ BitVec 64))\n";
  out += "    (p_pc (_ BitVec 64)) (p_x30 (_ BitVec 64))) Bool\n";
  out += "  (and (= p_x21 p_base)\n";
  out += fmt::format("       (bvule {} p_x18) (bvult p_x18 {})\n", lo, hi);
  out += fmt::format("       (bvule {} p_sp) (bvult p_sp {})\n", lo, hi);
  out += fmt::format("       (bvule (bvadd p_base {}) p_pc) (bvult p_pc p_code_end)\n", k(kRtPageSize));
  out += "       (= ((_ extract 1 0) p_pc) #b00)\n";
  out += fmt::format("       (or (and (bvule p_base p_x30) (bvule p_x30 (bvadd p_base {})))\n",
                     k(kSandboxSize));
  out += "           (= p_x30 p_rt0) (= p_x30 p_rt1) (= p_x30 p_rt2))))\n";
  return out;
}

namespace {

std::string invariant_call(sym::SmtWriter& w, const SymLayout& l, const SymState& s) {
  return fmt::format("(sfi-inv {} {} {} {} {} {} {} {} {} {})", w.reference(l.base),
                     w.reference(l.code_end), w.reference(l.rt[0]), w.reference(l.rt[1]),
                     w.reference(l.rt[2]), w.reference(s.r[reg::kBase.index]),
                     w.reference(s.r[reg::kAddr.index]), w.reference(s.sp), w.reference(s.pc),
                     w.reference(s.r[reg::kLink.index]));
}

}  // namespace

std::string emit_smt(const Obligation& ob, bool with_goal) {
  sym::SmtWriter w(ob.ts);
  std::vector<std::string> asserts;
  for (Term a : ob.assumptions) asserts.push_back(w.reference(a));
  asserts.push_back(invariant_call(w, ob.layout, ob.pre));
  if (with_goal) {
    std::vector<std::string> cases;
    for (const auto& p : ob.paths) {
      const std::string bad = w.reference(p.bad);
      const std::string stop = w.reference(p.terminated);
      const std::string inv = invariant_call(w, ob.layout, p.post);
      const std::string broken = fmt::format("(or {} (and (not {}) (not {})))", bad, stop, inv);
      cases.push_back(p.guard == ob.ts.truth()
                          ? broken
                          : fmt::format("(and {} {})", w.reference(p.guard), broken));
    }
    asserts.push_back(cases.size() == 1 ? cases[0] : fmt::format("(or {})", fmt::join(cases, " ")));
  }

  std::string out = fmt::format("; obligation {} profile {} mutation {}\n", ob.id, ob.profile.name,
                                mutation_name(ob.mutation));
  out += "(set-logic QF_BV)\n(set-option :produce-models true)\n";
  for (Term s : ob.ts.symbols())
    out += fmt::format("(declare-fun {} () {})\n", ob.ts.symbol_name(s),
                       sym::SmtWriter::sort(ob.ts.width(s)));
  out += invariant_smt_definition(ob.profile);
  out += w.take_definitions();
  for (const auto& a : asserts) out += fmt::format("(assert {})\n", a);
  out += "(check-sat)\n(get-model)\n";
  return out;
}

SolverResult check(const Obligation& ob, const SolverOptions& options) {
  return run_solver(emit_smt(ob), options);
}

// ---------------------------------------------------------------------------

std::string_view violation_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::BadRead: return "BadRead";
    case ViolationKind::BadWrite: return "BadWrite";
    case ViolationKind::BadExec: return "BadExec";
    case ViolationKind::InvariantBroken: return "InvariantBroken";
  }
  return "?";
}

std::string Violation::describe() const {
  if (kind == ViolationKind::InvariantBroken) return fmt::format("InvariantBroken{{{}}}", conjunct);
  return fmt::format("{}@{:#x}", violation_name(kind), addr);
}

Counterexample extract_counterexample(const Obligation& ob, const sym::Assignment& model,
                                      bool complete_missing) {
  sym::Assignment env;
  for (Term s : ob.ts.symbols()) {
    const std::string& name = ob.ts.symbol_name(s);
    const auto it = model.find(name);
    if (it != model.end())
      env[name] = it->second & sym::width_mask(ob.ts.width(s));
    else if (complete_missing)
      env[name] = 0;
    else
      throw ReplayError(fmt::format("model has no value for '{}'", name));
  }

  Counterexample cex;
  cex.layout.profile = ob.profile;
  cex.layout.base = env.at("base");
  cex.layout.code_end = env.at("code_end");
  for (unsigned i = 0; i < kRtCount; ++i) cex.rt.rt[i] = env.at(fmt::format("rt{}", i));
  for (unsigned i = 0; i < 31; ++i) cex.state.r[i] = env.at(fmt::format("r{}", i));
  cex.state.sp = env.at("sp");
  cex.state.pc = env.at("pc");
  for (unsigned k = 0; k < ob.load_symbols; ++k)
    cex.loads.push_back(static_cast<uint8_t>(env.at(fmt::format("ld{}", k))));

  sym::Evaluator ev(ob.ts, env);
  Instr& i = cex.instr;
  i = ob.subject.shape;
  i.rd = Reg(static_cast<uint8_t>(ev(ob.ops.rd)));
  i.rn = Reg(static_cast<uint8_t>(ev(ob.ops.rn)));
  i.rm = Reg(static_cast<uint8_t>(ev(ob.ops.rm)));
  i.rt = Reg(static_cast<uint8_t>(ev(ob.ops.rt)));
  i.imm = static_cast<int64_t>(ev(ob.ops.imm));
  if (is_encodable(i)) cex.word = encode(i);

  for (const auto& p : ob.paths) {
    if (!ev.truth(p.guard)) continue;
    if (ev.truth(p.bad)) {
      const uint64_t lo = cex.layout.model_lo();
      const uint64_t last = cex.layout.base + kSandboxSize + (ob.profile.guard_size - 1);
      for (const auto& a : p.accesses) {
        const uint64_t addr = ev(a.addr);
        if (addr < lo || addr > last) {
          cex.claimed = Violation{a.kind == AccessKind::ReadByte ? ViolationKind::BadRead
                                                                 : ViolationKind::BadWrite,
                                  0, addr};
          break;
        }
      }
      if (!cex.claimed) cex.claimed = Violation{ViolationKind::BadExec, 0, ev(p.post.pc)};
    } else if (!ev.truth(p.terminated) && !ev.truth(p.post_invariant)) {
      MachineState post;
      for (unsigned r = 0; r < 31; ++r) post.r[r] = ev(p.post.r[r]);
      post.sp = ev(p.post.sp);
      post.pc = ev(p.post.pc);
      const auto k = violated_conjunct(post, cex.layout, cex.rt);
      cex.claimed = Violation{ViolationKind::InvariantBroken, k.value_or(0), 0};
    }
    break;
  }
  return cex;
}

namespace {

/// First escaping effect of a concrete step, or the broken conjunct.
std::optional<Violation> observe(const StepOutcome& out, const MemoryLayout& l, const RtTable& rt) {
  const uint64_t lo = l.model_lo();
  const uint64_t last = l.base + kSandboxSize + (l.profile.guard_size - 1);
  for (const auto& e : out.events) {
    if (e.addr < lo || e.addr > last)
      return Violation{e.kind == AccessKind::ReadByte ? ViolationKind::BadRead : ViolationKind::BadWrite,
                       0, e.addr};
  }
  if (out.kind == StepOutcome::Kind::Fault && out.fault == FaultKind::BadPc && out.outside_model)
    return Violation{ViolationKind::BadExec, 0, out.state.pc};
  if (out.kind == StepOutcome::Kind::Next)
    if (const auto k = violated_conjunct(out.state, l, rt))
      return Violation{ViolationKind::InvariantBroken, *k, 0};
  return std::nullopt;
}

}  // namespace

ReplayResult replay(const Counterexample& cex, const Obligation& ob) {
  ReplayResult r;
  const auto refuted = [&](std::string why) {
    r.confirmed = false;
    r.detail = std::move(why);
    return r;
  };
  if (auto e = validate_layout(cex.layout)) return refuted("layout assumption fails: " + *e);
  if (auto e = validate_rt(cex.layout, cex.rt)) return refuted("runtime table assumption fails: " + *e);
  if (auto k = violated_conjunct(cex.state, cex.layout, cex.rt))
    return refuted(fmt::format("pre-state breaks invariant conjunct {}", *k));
  const uint64_t offset = cex.state.pc - cex.layout.base;
  if (!is_encodable(cex.instr)) return refuted("instruction has no encoding");
  if (!accepts(cex.instr, offset, ob.profile, ob.mutation).accepted())
    return refuted(fmt::format("'{}' is not whitelisted at offset {:#x}", disassemble(cex.instr), offset));
  if (!ob.single && !matches(ob.subject, cex.instr, offset))
    return refuted(fmt::format("'{}' is outside subject {}", disassemble(cex.instr), ob.subject.id));
  if (ob.single && cex.instr != ob.subject.shape) return refuted("instruction differs from subject");

  size_t next = 0;
  const uint64_t base = cex.layout.base;
  const ByteReader oracle = [&](uint64_t a) -> uint8_t {
    const size_t k = next++;
    const uint64_t off = a - base;
    if (off < 8 * kRtCount) return static_cast<uint8_t>(cex.rt.rt[off / 8] >> (8 * (off % 8)));
    return k < cex.loads.size() ? cex.loads[k] : 0;
  };
  const StepOutcome out = step(cex.state, cex.layout, cex.rt, oracle, cex.instr);
  r.violation = observe(out, cex.layout, cex.rt);
  if (!cex.claimed) return refuted("model claims no violation");
  if (!r.violation) return refuted("concrete step shows no violation");
  if (*cex.claimed != *r.violation)
    return refuted(fmt::format("model claims {}, concrete step shows {}", cex.claimed->describe(),
                               r.violation->describe()));
  r.confirmed = true;
  return r;
}

// ---------------------------------------------------------------------------

std::vector<ProofSubject> class_proof_subjects(Mutation mutation,
                                               const std::vector<std::string>& families) {
  std::vector<ProofSubject> out;
  for (auto& s : class_subjects(mutation)) {
    if (!families.empty() && std::find(families.begin(), families.end(), s.family) == families.end())
      continue;
    out.push_back({s.id, s, std::nullopt});
  }
  return out;
}

ProofSubject word_proof_subject(uint32_t word) {
  const auto i = decode(word);
  if (!i) throw ObligationError(fmt::format("{} is undecodable", word_id(word)));
  return {word_id(word), *i, word};
}

std::vector<std::string> small_families() {
  return {"sys", "guard", "load-x18", "load-rt", "store-x18", "br"};
}

namespace {

std::vector<uint8_t> registers_in(uint32_t mask) {
  std::vector<uint8_t> out;
  for (unsigned i = 0; i < 32; ++i)
    if ((mask >> i) & 1u) out.push_back(static_cast<uint8_t>(i));
  return out;
}

std::vector<int64_t> immediates_of(const ClassSubject& s) {
  switch (s.imm_rule) {
    case ImmRule::Fixed: return {s.shape.imm};
    case ImmRule::OneOf: return s.imm_values;
    case ImmRule::Any:
    case ImmRule::InSandbox: break;
  }
  std::vector<int64_t> out;
  const int64_t n = int64_t{1} << s.imm_bits;
  for (int64_t v = 0; v < n; ++v) out.push_back(s.imm_signed ? v - n / 2 : v);
  return out;
}

Instr with_fields(const ClassSubject& s, uint8_t rd, uint8_t rn, uint8_t rm, uint8_t rt, int64_t imm) {
  Instr i = s.shape;
  i.rd = Reg(rd);
  i.rn = Reg(rn);
  i.rm = Reg(rm);
  i.rt = Reg(rt);
  i.imm = imm;
  return i;
}

}  // namespace

std::vector<ProofSubject> enumerate_small_subjects(Mutation mutation) {
  const auto small = small_families();
  std::set<uint32_t> words;
  for (const auto& s : class_subjects(mutation)) {
    if (std::find(small.begin(), small.end(), s.family) == small.end()) continue;
    for (uint8_t rd : registers_in(s.rd_mask))
      for (uint8_t rn : registers_in(s.rn_mask))
        for (uint8_t rm : registers_in(s.rm_mask))
          for (uint8_t rt : registers_in(s.rt_mask))
            for (int64_t imm : immediates_of(s)) words.insert(encode(with_fields(s, rd, rn, rm, rt, imm)));
  }
  std::vector<ProofSubject> out;
  for (uint32_t w : words) out.push_back(word_proof_subject(w));
  return out;
}

std::vector<ClassSubject> heavy_subjects(Mutation mutation) {
  const auto small = small_families();
  std::vector<ClassSubject> out;
  for (auto& s : class_subjects(mutation))
    if (std::find(small.begin(), small.end(), s.family) == small.end()) out.push_back(s);
  return out;
}

namespace {

std::vector<ProofSubject> as_subjects(const std::set<uint32_t>& words) {
  std::vector<ProofSubject> out;
  for (uint32_t w : words) out.push_back(word_proof_subject(w));
  return out;
}

}  // namespace

std::vector<ProofSubject> sample_subjects(const ClassSubject& s, size_t count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  count = static_cast<size_t>(std::min<uint64_t>(count, subject_population(s)));
  std::set<uint32_t> words;
  while (words.size() < count) words.insert(encode(draw_instr(s, rng)));
  return as_subjects(words);
}

std::vector<Opcode> heavy_opcodes() {
  std::vector<Opcode> out;
  for (const auto& s : heavy_subjects())
    if (std::find(out.begin(), out.end(), s.shape.op) == out.end()) out.push_back(s.shape.op);
  return out;
}

std::vector<ProofSubject> sample_heavy_class(Opcode op, size_t count, uint64_t seed) {
  std::vector<ClassSubject> parts;
  std::vector<uint64_t> weights;
  for (auto& s : heavy_subjects())
    if (s.shape.op == op) {
      weights.push_back(subject_population(s));
      parts.push_back(std::move(s));
    }
  if (parts.empty()) throw std::invalid_argument(fmt::format("no heavy subjects for {}", opcode_name(op)));
  const uint64_t total = std::accumulate(weights.begin(), weights.end(), uint64_t{0});
  count = static_cast<size_t>(std::min<uint64_t>(count, total));

  std::mt19937_64 rng(seed);
  std::set<uint32_t> words;
  while (words.size() < count) {
    uint64_t at = rng() % total;
    size_t k = 0;
    while (at >= weights[k]) at -= weights[k++];
    words.insert(encode(draw_instr(parts[k], rng)));
  }
  return as_subjects(words);
}

std::vector<ProofSubject> range_subjects(uint64_t lo, uint64_t hi, const Profile& profile,
                                         Mutation mutation) {
  std::vector<ProofSubject> out;
  for (uint64_t w = lo; w < hi; ++w) {
    const auto i = decode(static_cast<uint32_t>(w));
    if (i && accepts(i, kCensusOffset, profile, mutation).accepted())
      out.push_back({word_id(static_cast<uint32_t>(w)), *i, static_cast<uint32_t>(w)});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view status_name(ProofStatus s) {
  switch (s) {
    case ProofStatus::Proved: return "Proved";
    case ProofStatus::Refuted: return "Refuted";
    case ProofStatus::Unknown: return "Unknown";
    case ProofStatus::ReplayMismatch: return "ReplayMismatch";
  }
  return "?";
}

size_t ProofReport::count(ProofStatus s) const {
  return static_cast<size_t>(
      std::count_if(results.begin(), results.end(), [s](const SubjectResult& r) { return r.status == s; }));
}

namespace {

SubjectResult prove_one(const ProofSubject& subject, const ProveOptions& o) {
  SubjectResult r;
  r.id = subject.id;
  try {
    const Obligation ob = std::holds_alternative<ClassSubject>(subject.what)
                              ? build_obligation(std::get<ClassSubject>(subject.what), o.profile, o.mutation)
                              : build_obligation(std::get<Instr>(subject.what), o.profile, o.mutation);
    const std::string script = emit_smt(ob);
    if (o.out_dir) {
      std::ofstream f(std::filesystem::path(*o.out_dir) / fmt::format("{}.{}.smt2", subject.id, o.profile.name),
                      std::ios::binary);
      f << script;
      if (!f) throw std::runtime_error("cannot write SMT-LIB2 file into " + *o.out_dir);
    }
    if (o.vacuity_check) {
      const SolverResult v = run_solver(emit_smt(ob, false), o.solver);
      if (v.kind == SolverResult::Kind::Unknown) {
        r.diagnostic = "vacuity check: " + v.diagnostic;
        return r;
      }
      r.assumptions_satisfiable = v.kind == SolverResult::Kind::Sat;
      if (!*r.assumptions_satisfiable) {
        r.diagnostic = "assumptions are unsatisfiable";
        return r;
      }
    }
    const SolverResult res = run_solver(script, o.solver);
    switch (res.kind) {
      case SolverResult::Kind::Unsat:
        r.status = ProofStatus::Proved;
        break;
      case SolverResult::Kind::Unknown:
        r.diagnostic = res.diagnostic;
        break;
      case SolverResult::Kind::Sat: {
        Counterexample cex = extract_counterexample(ob, res.model);
        const ReplayResult rr = replay(cex, ob);
        r.status = rr.confirmed ? ProofStatus::Refuted : ProofStatus::ReplayMismatch;
        r.violation = rr.violation;
        r.diagnostic = rr.detail;
        r.counterexample = std::move(cex);
        break;
      }
    }
  } catch (const std::exception& e) {
    r.status = ProofStatus::Unknown;
    r.diagnostic = e.what();
  }
  return r;
}

}  // namespace

ProofReport prove_range(const std::vector<ProofSubject>& subjects, const ProveOptions& o) {
  if (o.workers == 0) throw std::invalid_argument("worker count must be at least 1");
  if (!o.allow_invalid_profile)
    if (auto e = validate_profile(o.profile)) throw std::invalid_argument("invalid profile: " + *e);

  ProofReport report;
  report.profile = o.profile.name;
  report.mutation = std::string(mutation_name(o.mutation));
  report.results.resize(subjects.size());
  std::atomic<bool> stop{false};

  const size_t n = subjects.size();
  const unsigned workers = static_cast<unsigned>(std::min<size_t>(o.workers, std::max<size_t>(n, 1)));
  const auto run = [&](unsigned w) {
    const size_t first = n * w / workers, last = n * (w + 1) / workers;
    for (size_t i = first; i < last; ++i) {
      SubjectResult& r = report.results[i];
      if (stop.load()) {
        r.id = subjects[i].id;
        r.diagnostic = "skipped after a replay mismatch";
        continue;
      }
      const auto t0 = std::chrono::steady_clock::now();
      r = prove_one(subjects[i], o);
      r.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      r.worker = w;
      if (r.status == ProofStatus::ReplayMismatch) stop = true;
    }
  };
  std::vector<std::jthread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  pool.clear();
  report.aborted = stop.load();
  return report;
}

namespace {

std::string hex(uint64_t v) { return fmt::format("{:#x}", v); }

nlohmann::ordered_json counterexample_json(const Counterexample& c) {
  nlohmann::ordered_json j;
  j["instr"] = disassemble(c.instr);
  if (c.word) j["word"] = word_id(*c.word);
  j["base"] = hex(c.layout.base);
  j["code_end"] = hex(c.layout.code_end);
  j["rt"] = {hex(c.rt.rt[0]), hex(c.rt.rt[1]), hex(c.rt.rt[2])};
  nlohmann::ordered_json regs;
  for (unsigned i = 0; i < 31; ++i) regs[fmt::format("x{}", i)] = hex(c.state.r[i]);
  regs["sp"] = hex(c.state.sp);
  regs["pc"] = hex(c.state.pc);
  j["state"] = regs;
  if (!c.loads.empty()) {
    std::string bytes;
    for (uint8_t b : c.loads) bytes += fmt::format("{:02x}", b);
    j["loads"] = bytes;
  }
  return j;
}

}  // namespace

std::string report_json(const ProofReport& report, bool timing) {
  nlohmann::ordered_json j;
  j["profile"] = report.profile;
  j["mutation"] = report.mutation;
  j["aborted"] = report.aborted;
  j["counts"] = {{"proved", report.count(ProofStatus::Proved)},
                 {"refuted", report.count(ProofStatus::Refuted)},
                 {"unknown", report.count(ProofStatus::Unknown)},
                 {"replay_mismatch", report.count(ProofStatus::ReplayMismatch)}};
  auto& list = j["subjects"] = nlohmann::ordered_json::array();
  for (const auto& r : report.results) {
    nlohmann::ordered_json e;
    e["id"] = r.id;
    e["status"] = status_name(r.status);
    if (r.violation) e["violation"] = r.violation->describe();
    if (!r.diagnostic.empty()) e["diagnostic"] = r.diagnostic;
    if (r.assumptions_satisfiable) e["assumptions_satisfiable"] = *r.assumptions_satisfiable;
    if (r.counterexample) e["counterexample"] = counterexample_json(*r.counterexample);
    if (timing) {
      e["millis"] = r.millis;
      e["worker"] = r.worker;
    }
    list.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string report_text(const ProofReport& report, bool timing) {
  std::string out;
  for (const auto& r : report.results) {
    out += fmt::format("{:<24} {}", r.id, status_name(r.status));
    if (r.violation) out += " " + r.violation->describe();
    if (r.counterexample) out += fmt::format(" [{}]", disassemble(r.counterexample->instr));
    if (!r.diagnostic.empty()) out += " (" + r.diagnostic + ")";
    if (timing) out += fmt::format(" {:.1f}ms w{}", r.millis, r.worker);
    out += "\n";
  }
  out += fmt::format("profile {} mutation {}: {} proved, {} refuted, {} unknown, {} replay mismatches{}\n",
                     report.profile, report.mutation, report.count(ProofStatus::Proved),
                     report.count(ProofStatus::Refuted), report.count(ProofStatus::Unknown),
                     report.count(ProofStatus::ReplayMismatch), report.aborted ? " (aborted)" : "");
  return out;
}

int report_exit_code(const ProofReport& report) {
  if (report.count(ProofStatus::ReplayMismatch) || report.count(ProofStatus::Unknown) || report.aborted)
    return 3;
  if (report.count(ProofStatus::Refuted)) return 1;
  return 0;
}

}  // namespace sfi
