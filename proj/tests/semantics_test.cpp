#include <doctest.h>

#include <map>
#include <random>

#include "sfi/semantics.hpp"
#include "support.hpp"

using namespace sfi;

namespace {

struct Fixture {
  MemoryLayout layout{1ull << 32, (1ull << 32) + 2 * kRtPageSize, Profile::sparse()};
  RtTable rt{{0xFFFF000000010000, 0xFFFF000000020000, 0xFFFF000000030000}};
  std::map<uint64_t, uint8_t> bytes;

  Fixture() {
    for (unsigned i = 0; i < 24; ++i) bytes[layout.base + i] = static_cast<uint8_t>(rt.rt[i / 8] >> (8 * (i % 8)));
  }
  ByteReader reader() const {
    return [this](uint64_t a) -> uint8_t {
      const auto it = bytes.find(a);
      return it == bytes.end() ? 0 : it->second;
    };
  }
  MachineState boot() const {
    MachineState s;
    s.r[21] = layout.base;
    s.r[18] = layout.base;
    s.r[30] = layout.base;
    s.sp = layout.base + kSandboxSize;
    s.pc = layout.code_start();
    return s;
  }
  StepOutcome run(const MachineState& s, const Instr& i) const { return step(s, layout, rt, reader(), i); }
};

}  // namespace

TEST_CASE("writeback load from the stack") {
  Fixture f;
  auto s = f.boot();
  s.sp = f.layout.base;
  const auto out = f.run(s, Instr::load(8, AddrMode::Post, Reg(0), Reg(31), -8));
  CHECK(out.kind == StepOutcome::Kind::Next);
  CHECK(out.state.sp == f.layout.base - 8);
  CHECK(out.state.r[0] == f.rt.rt[0]);
  CHECK(out.state.pc == s.pc + 4);
  REQUIRE(out.events.size() == 8);
  for (unsigned k = 0; k < 8; ++k) {
    CHECK(out.events[k].kind == AccessKind::ReadByte);
    CHECK(out.events[k].addr == f.layout.base + k);
  }
  // A second one starts in guard_lo and traps without committing anything.
  const auto again = f.run(out.state, Instr::load(8, AddrMode::Post, Reg(0), Reg(31), -8));
  CHECK(again.kind == StepOutcome::Kind::Fault);
  CHECK(again.fault == FaultKind::MemUnmapped);
  CHECK(again.state == out.state);
}

TEST_CASE("guard instruction") {
  Fixture f;
  auto s = f.boot();
  s.r[5] = 0xDEADBEEF12345678ull;
  const auto out = f.run(s, Instr::add_uxtw(Reg(18), Reg(21), Reg(5)));
  CHECK(out.kind == StepOutcome::Kind::Next);
  CHECK(out.state.r[18] == 0x112345678ull);
  CHECK(out.events.empty());
}

TEST_CASE("store into the read-only page") {
  Fixture f;
  auto s = f.boot();
  s.sp = f.layout.base + 16;
  const auto out = f.run(s, Instr::store(8, AddrMode::Base, Reg(0), Reg(31), 0));
  CHECK(out.kind == StepOutcome::Kind::Fault);
  CHECK(out.fault == FaultKind::MemPermission);
  CHECK(out.events.size() == 8);
  CHECK(out.writes.empty());
  s.sp = f.layout.code_start();
  CHECK(f.run(s, Instr::store(1, AddrMode::Base, Reg(0), Reg(31), 0)).fault == FaultKind::MemPermission);
  s.sp = f.layout.code_end - 4;  // straddles code and data
  CHECK(f.run(s, Instr::store(8, AddrMode::Base, Reg(0), Reg(31), 0)).fault == FaultKind::MemPermission);
  s.sp = f.layout.sandbox_end() - 4;  // straddles data and guard_hi
  CHECK(f.run(s, Instr::store(8, AddrMode::Offset, Reg(0), Reg(31), 0)).fault == FaultKind::MemUnmapped);
}

TEST_CASE("stores commit little-endian bytes") {
  Fixture f;
  auto s = f.boot();
  s.r[18] = f.layout.code_end + 100;
  s.r[3] = 0x1122334455667788ull;
  const auto out = f.run(s, Instr::store(4, AddrMode::Base, Reg(3), Reg(18), 0));
  CHECK(out.kind == StepOutcome::Kind::Next);
  const std::vector<std::pair<uint64_t, uint8_t>> want{
      {s.r[18], 0x88}, {s.r[18] + 1, 0x77}, {s.r[18] + 2, 0x66}, {s.r[18] + 3, 0x55}};
  CHECK(out.writes == want);
}

TEST_CASE("control transfer") {
  Fixture f;
  auto s = f.boot();
  s.r[30] = f.rt.rt[1];
  auto out = f.run(s, Instr::br(Reg(30)));
  CHECK(out.kind == StepOutcome::Kind::RuntimeCall);
  CHECK(out.rt_index == 1);
  CHECK(out.state.pc == f.rt.rt[1]);

  out = f.run(s, Instr::bl(1));
  CHECK(out.state.r[30] == s.pc + 4);
  CHECK(out.state.pc == s.pc + 4);
  CHECK(out.kind == StepOutcome::Kind::Next);

  s.r[3] = 0;
  CHECK(f.run(s, Instr::cbz(Reg(3), 1)).state.pc == s.pc + 4);
  CHECK(f.run(s, Instr::cbnz(Reg(3), 1)).state.pc == s.pc + 4);
  out = f.run(s, Instr::b(-1));  // into the rt page
  CHECK(out.kind == StepOutcome::Kind::Fault);
  CHECK(out.fault == FaultKind::BadPc);
  CHECK_FALSE(out.outside_model);

  s.r[18] = f.layout.base + 2;  // misaligned
  CHECK(f.run(s, Instr::br(Reg(18))).fault == FaultKind::BadPc);
  s.r[18] = f.layout.model_hi();
  out = f.run(s, Instr::br(Reg(18)));
  CHECK(out.fault == FaultKind::BadPc);
  CHECK(out.outside_model);
  CHECK(f.run(s, Instr::udf()).fault == FaultKind::Undefined);
  CHECK(f.run(s, Instr::nop()).state.pc == s.pc + 4);
}

TEST_CASE("symbolic paths") {
  sym::TermStore ts;
  const auto pre = symbolic_state(ts);
  const auto layout = symbolic_layout(ts, Profile::sparse());
  FreshNames fresh;

  auto paths = sym_step(ts, pre, layout, Instr::add_uxtw(Reg(18), Reg(21), Reg(5)),
                        constant_operands(ts, Instr::add_uxtw(Reg(18), Reg(21), Reg(5))), fresh);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].guard == ts.truth());
  CHECK(paths[0].effects.post.r[18] == ts.add(pre.r[21], ts.zext(ts.extract(pre.r[5], 31, 0), 64)));

  const Instr cbz = Instr::cbz(Reg(3), 2);
  paths = sym_step(ts, pre, layout, cbz, constant_operands(ts, cbz), fresh);
  REQUIRE(paths.size() == 2);
  const auto zero = ts.eq(pre.r[3], ts.bv(0, 64));
  CHECK(paths[0].guard == zero);
  CHECK(paths[1].guard == ts.lnot(zero));
  CHECK(paths[0].effects.post.pc == ts.add(pre.pc, ts.bv(8, 64)));
  CHECK(paths[1].effects.post.pc == ts.add(pre.pc, ts.bv(4, 64)));

  // With r21 pinned to base, the trampoline load yields rt1 exactly.
  SymState pinned = pre;
  pinned.r[21] = layout.base;
  const Instr tramp = Instr::load(8, AddrMode::Offset, Reg(30), Reg(21), 8);
  fresh = {};
  paths = sym_step(ts, pinned, layout, tramp, constant_operands(ts, tramp), fresh);
  REQUIRE(paths.size() == 1);
  CHECK(fresh.next == 8);
  const auto& fx = paths[0].effects;
  const sym::Assignment env{{"base", 1ull << 32}, {"code_end", (1ull << 32) + 8192}, {"rt0", 0x10},
                            {"rt1", 0xABCDEF0012345678ull}, {"rt2", 0x30}, {"r30", 7}};
  sym::Assignment full = env;
  for (unsigned k = 0; k < 8; ++k) full["ld" + std::to_string(k)] = 0xEE;
  CHECK(sym::eval(ts, fx.post.r[30], full) == 0xABCDEF0012345678ull);
  CHECK(sym::eval(ts, fx.mem_unmapped, full) == 0);
}

TEST_CASE("unaligned loads splice runtime-table bytes") {
  Fixture f;
  auto s = f.boot();
  s.sp = f.layout.base + 6;
  const auto out = f.run(s, Instr::load(8, AddrMode::Offset, Reg(0), Reg(31), 0));
  const uint64_t want = (f.rt.rt[0] >> 48) | (f.rt.rt[1] << 16);
  CHECK(out.state.r[0] == want);
  CHECK_FALSE(engine_mismatch(s, f.layout, f.rt, f.reader(), Instr::load(8, AddrMode::Offset, Reg(0), Reg(31), 0)));
}

TEST_CASE("engine agreement on random states and instructions") {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int n = 0; n < 100000; ++n) {
    const Profile p = n % 2 ? Profile::dense() : Profile::sparse();
    const auto layout = sfi::testing::random_layout(rng, p);
    const auto rt = sfi::testing::random_rt(rng, layout);
    const auto state = sfi::testing::random_state(rng, layout, rt);
    const Instr instr = sfi::testing::random_decodable(rng);
    const bool symbolic_fields = n % 4 == 3;
    const auto why = engine_mismatch(state, layout, rt, sfi::testing::hashed_memory(layout, rt), instr,
                                     symbolic_fields);
    if (why) {
      FAIL_CHECK(disassemble(instr) << ": " << *why);
      break;
    }
    ++checked;
  }
  CHECK(checked == 100000);
}

TEST_CASE("fault atomicity and access-size bound") {
  std::mt19937_64 rng(5);
  for (int n = 0; n < 20000; ++n) {
    const auto layout = sfi::testing::random_layout(rng, Profile::dense());
    const auto rt = sfi::testing::random_rt(rng, layout);
    const auto s = sfi::testing::random_state(rng, layout, rt);
    const Instr i = sfi::testing::random_decodable(rng);
    const auto out = step(s, layout, rt, sfi::testing::hashed_memory(layout, rt), i);
    if (i.is_memory()) {
      REQUIRE(out.events.size() == i.access_bytes());
      for (size_t k = 1; k < out.events.size(); ++k) CHECK(out.events[k].addr == out.events[0].addr + k);
    } else {
      CHECK(out.events.empty());
    }
    if (out.kind == StepOutcome::Kind::Fault && out.fault != FaultKind::BadPc) {
      CHECK(out.state == s);
      CHECK(out.writes.empty());
    }
    for (const auto& [addr, byte] : out.writes) {
      (void)byte;
      CHECK(region_of(layout, addr).perms.write);
    }
  }
}
