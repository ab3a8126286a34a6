#include <doctest.h>

#include <random>

#include <json.hpp>

#include "sfi/asm.hpp"
#include "sfi/rewriter.hpp"
#include "sfi/sandbox.hpp"
#include "sfi/verifier.hpp"
#include "support.hpp"

using namespace sfi;

namespace {

Image program(std::string_view src, ProfileKind kind = ProfileKind::Sparse) {
  return assemble(parse_program(src), kind);
}

Image program_file(const std::string& name) {
  const auto bytes = read_file(std::string(SFI_SOURCE_DIR) + "/tests/programs/" + name);
  return assemble(rewrite(parse_program(std::string(bytes.begin(), bytes.end()))), ProfileKind::Sparse,
                  std::nullopt);
}

std::vector<uint8_t> snapshot(const Sandbox& sb, uint64_t from, uint64_t to) {
  return sb.memory().read_range(from, to - from);
}

}  // namespace

TEST_CASE("boot lays out the sandbox") {
  const Image img = program("nop\nnop\nnop\n");
  for (const Profile& p : {Profile::sparse(), Profile::dense()}) {
    const Sandbox sb = Sandbox::boot(img, p);
    const auto& l = sb.layout();
    CHECK(l.base == kSandboxSize);
    CHECK(l.code_end == l.base + 2 * kRtPageSize);
    CHECK(invariant_holds(sb.state(), l, sb.rt()));
    CHECK(sb.state().pc == l.code_start());
    CHECK(sb.state().sp == l.sandbox_end());
    CHECK(sb.state().r[21] == l.base);
    for (unsigned i = 0; i < kRtCount; ++i) CHECK(sb.memory().read_le(l.base + 8 * i, 8) == sb.rt().rt[i]);
    CHECK(sb.memory().read_le(l.code_start() + 4, 4) == encode(Instr::nop()));
    CHECK(sb.memory().read(l.code_end) == 0);
    CHECK(sb.memory().read(l.sandbox_end() - 1) == 0);
  }

  // One page of code fills [base+4096, base+8192) exactly.
  Image full;
  full.code.assign(1024, encode(Instr::nop()));
  CHECK(Sandbox::boot(full, Profile::sparse()).layout().code_end == kSandboxSize + 2 * kRtPageSize);
  full.code.push_back(encode(Instr::nop()));
  CHECK(Sandbox::boot(full, Profile::sparse()).layout().code_end == kSandboxSize + 3 * kRtPageSize);

  const Image entry = assemble(parse_program("nop\nstart: nop\n"), ProfileKind::Sparse, "start");
  CHECK(Sandbox::boot(entry, Profile::sparse()).state().pc == kSandboxSize + kRtPageSize + 4);
}

TEST_CASE("boot satisfies the invariant at random valid bases") {
  std::mt19937_64 rng(17);
  const Image img = program("nop\n");
  for (int k = 0; k < 200; ++k) {
    const Profile p = k % 2 ? Profile::dense() : Profile::sparse();
    const MemoryLayout l = testing::random_layout(rng, p);
    const RtTable rt = testing::random_rt(rng, l);
    const Sandbox sb = Sandbox::boot(img, p, l.base, rt);
    CHECK(invariant_holds(sb.state(), sb.layout(), sb.rt()));
    CHECK(sb.memory().read_le(l.base + 16, 8) == rt.rt[2]);
  }
}

TEST_CASE("boot refusals") {
  const Image bad = program("add x21, x0, #1\n");
  CHECK_THROWS_AS(Sandbox::boot(bad, Profile::sparse()), BootError);
  const Image good = program("nop\n");
  CHECK_THROWS_AS(Sandbox::boot(good, Profile::sparse(), kSandboxSize + 4096), BootError);
  CHECK_THROWS_AS(Sandbox::boot(good, Profile::sparse(), 0), BootError);
  // An rt entry inside the sandbox is not a valid runtime-call address.
  RtTable inside{{kSandboxSize + 64, 0xFFFF800000000000ull, 0xFFFF800000001000ull}};
  CHECK_THROWS_AS(Sandbox::boot(good, Profile::sparse(), kSandboxSize, inside), BootError);
  RtTable dup{{0xFFFF800000000000ull, 0xFFFF800000000000ull, 0xFFFF800000001000ull}};
  CHECK_THROWS_AS(Sandbox::boot(good, Profile::sparse(), kSandboxSize, dup), BootError);

  auto bytes = serialize_image(good);
  bytes[1] = 'Z';
  CHECK_THROWS_AS(Sandbox::boot(std::span<const uint8_t>(bytes), Profile::sparse()), ImageFormatError);
}

TEST_CASE("hello demo") {
  Sandbox sb = Sandbox::boot(program_file("hello.s"), Profile::sparse());
  const auto code_before = snapshot(sb, sb.layout().base, sb.layout().code_end);
  const ExitStatus st = sb.run(10000);
  CHECK(st.kind == ExitStatus::Kind::Exit);
  CHECK(st.code == 0);
  REQUIRE(sb.trace().size() == 2);
  const auto& w = sb.trace()[0];
  CHECK(w.kind == RuntimeRecord::Kind::Write);
  CHECK(w.bytes == std::vector<uint8_t>{'h', 'e', 'l', 'l', 'o'});
  CHECK(w.addr == sb.layout().sandbox_end() - 16);
  CHECK(sb.output() == std::vector<uint8_t>{'h', 'e', 'l', 'l', 'o'});
  CHECK(sb.trace()[1].kind == RuntimeRecord::Kind::Exit);
  CHECK(snapshot(sb, sb.layout().base, sb.layout().code_end) == code_before);

  const std::string lines = trace_json_lines(sb.trace());
  const auto first = nlohmann::json::parse(lines.substr(0, lines.find('\n')));
  CHECK(first["call"] == "write");
  CHECK(first["len"] == 5);
  CHECK(first["bytes"] == "68656c6c6f");
  CHECK(nlohmann::json::parse(lines.substr(lines.find('\n') + 1))["call"] == "exit");
}

TEST_CASE("sp writeback escape traps in the low guard") {
  Sandbox sb = Sandbox::boot(program_file("escape.s"), Profile::sparse());
  const ExitStatus st = sb.run(100);
  REQUIRE(st.kind == ExitStatus::Kind::Fault);
  CHECK(st.fault == FaultKind::MemUnmapped);
  CHECK(st.pc == sb.layout().code_start() + 8);
  CHECK(st.addr == sb.layout().base - 8);
  CHECK(st.steps == 3);
  // The first load read the rt0 word; the faulting load changed nothing.
  CHECK(sb.state().r[0] == sb.rt().rt[0]);
  CHECK(sb.state().sp == sb.layout().base - 8);
}

TEST_CASE("step limit") {
  Sandbox sb = Sandbox::boot(program("l: b l\n"), Profile::sparse());
  const ExitStatus st = sb.run(1000);
  CHECK(st.kind == ExitStatus::Kind::StepLimit);
  CHECK(st.steps == 1000);
}

TEST_CASE("exit code is r0 mod 2^32") {
  Sandbox sb = Sandbox::boot(program("sub x0, x0, #1\nldr x30, [x21, #0]\nbr x30\n"), Profile::sparse());
  const ExitStatus st = sb.run(10);
  CHECK(st.kind == ExitStatus::Kind::Exit);
  CHECK(st.code == 0xFFFFFFFFu);
}

TEST_CASE("runtime calls clamp guest ranges") {
  // write(ptr = -4, len = 100): the range starts at base + 0xFFFFFFFC and is
  // cut at the sandbox end.
  Sandbox sb = Sandbox::boot(program(R"(
      sub x0, x0, #4
      add x1, x1, #100
      add x9, x9, #4095
      add x9, x9, #25
      ldr x30, [x21, #8]
      br x30
      udf
  )"),
                             Profile::sparse());
  sb.memory().write(sb.layout().sandbox_end() - 1, 0xAB);
  const ExitStatus st = sb.run(100);
  REQUIRE(sb.trace().size() == 1);
  CHECK(sb.trace()[0].addr == sb.layout().sandbox_end() - 4);
  CHECK(sb.trace()[0].bytes == std::vector<uint8_t>{0, 0, 0, 0xAB});
  CHECK(sb.state().r[0] == 4);
  // Resumed at code offset 24 (base + 4096 + 24), which holds the udf.
  CHECK(st.kind == ExitStatus::Kind::Fault);
  CHECK(st.fault == FaultKind::Undefined);
  CHECK(st.pc == sb.layout().code_start() + 24);
}

TEST_CASE("read skips the read-only pages") {
  // read(ptr = base + 4090, len = 12): bytes below code_end are consumed
  // but not stored.
  Sandbox sb = Sandbox::boot(program(R"(
      add x0, x0, #4095
      add x1, x1, #12
      add x0, x0, #4091
      add x9, x9, #4095
      add x9, x9, #29
      ldr x30, [x21, #16]
      br x30
      udf
  )"),
                             Profile::sparse());
  // ptr = 8186 = code_end - 6
  std::vector<uint8_t> input(12);
  for (size_t i = 0; i < input.size(); ++i) input[i] = static_cast<uint8_t>(0xC0 + i);
  sb.set_input(input);
  const auto code_before = snapshot(sb, sb.layout().base, sb.layout().code_end);
  sb.run(100);
  REQUIRE(sb.trace().size() == 1);
  CHECK(sb.trace()[0].kind == RuntimeRecord::Kind::Read);
  CHECK(sb.trace()[0].bytes == input);
  CHECK(sb.state().r[0] == 12);
  CHECK(snapshot(sb, sb.layout().base, sb.layout().code_end) == code_before);
  for (uint64_t i = 6; i < 12; ++i) CHECK(sb.memory().read(sb.layout().code_end - 6 + i) == input[i]);

  // Short input: r0 reports what was delivered.
  Sandbox sc = Sandbox::boot(program("add x1, x1, #8\nadd x9, x9, #4095\nadd x9, x9, #21\nldr x30, [x21, #16]\nbr x30\nudf\n"),
                             Profile::sparse());
  sc.set_input({1, 2, 3});
  sc.run(100);
  CHECK(sc.state().r[0] == 3);
}

TEST_CASE("a bad resume address faults") {
  for (uint64_t r9 : {uint64_t{4096 + 2}, uint64_t{0}, uint64_t{8192}}) {
    Sandbox sb = Sandbox::boot(program("ldr x30, [x21, #8]\nbr x30\n"), Profile::sparse());
    sb.state().r[9] = r9;
    const ExitStatus st = sb.run(10);
    REQUIRE(st.kind == ExitStatus::Kind::Fault);
    CHECK(st.fault == FaultKind::BadPc);
    CHECK(st.addr == sb.layout().base + r9);
  }
  // Only the low 32 bits of r9 count.
  Sandbox sb = Sandbox::boot(program("ldr x30, [x21, #8]\nbr x30\nudf\n"), Profile::sparse());
  sb.state().r[9] = 0xABCD000000000000ull + 4096 + 8;
  const ExitStatus st = sb.run(10);
  CHECK(st.fault == FaultKind::Undefined);
  CHECK(st.pc == sb.layout().code_start() + 8);
}

TEST_CASE("faults are returned as they happen") {
  Sandbox a = Sandbox::boot(program("str x0, [sp, #-8]!\nstr x0, [x18]\n"), Profile::sparse());
  ExitStatus st = a.run(10);
  REQUIRE(st.kind == ExitStatus::Kind::Fault);
  CHECK(st.fault == FaultKind::MemPermission);  // x18 = base: the rt page
  CHECK(st.addr == a.layout().base);

  Sandbox b = Sandbox::boot(program("br x18\n"), Profile::sparse());
  st = b.run(10);
  CHECK(st.fault == FaultKind::BadPc);
  CHECK(st.addr == b.layout().base);
}

TEST_CASE("random verified programs never touch the rt page or code") {
  std::mt19937_64 rng(23);
  const auto subjects = class_subjects();
  for (int k = 0; k < 100; ++k) {
    Image img;
    const MemoryLayout l = testing::random_layout(rng, Profile::sparse());
    img.code.resize(64);
    for (size_t i = 0; i < img.code.size(); ++i) {
      for (;;) {
        const Instr ins = draw_instr(subjects[rng() % subjects.size()], rng);
        if (accepts(ins, kRtPageSize + 4 * i, Profile::sparse()).accepted()) {
          img.code[i] = encode(ins);
          break;
        }
      }
    }
    Sandbox sb = Sandbox::boot(img, Profile::sparse(), l.base, testing::random_rt(rng, l));
    for (unsigned r = 0; r < 31; ++r)
      if (r != 18 && r != 21 && r != 30) sb.state().r[r] = testing::interesting_value(rng, sb.layout(), sb.rt());
    sb.set_input(std::vector<uint8_t>(64, 0x5A));
    const auto before = snapshot(sb, sb.layout().base, sb.layout().code_end);
    sb.run(500);
    CHECK(snapshot(sb, sb.layout().base, sb.layout().code_end) == before);
  }
}
