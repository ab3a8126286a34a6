#include <doctest.h>

#include <algorithm>
#include <random>

#include <json.hpp>

#include "sfi/image.hpp"
#include "sfi/prover.hpp"
#include "sfi/verifier.hpp"
#include "support.hpp"

using namespace sfi;

namespace {

Image image_of(std::vector<uint32_t> code, uint32_t entry = 0) {
  Image img;
  img.code = std::move(code);
  img.entry = entry;
  return img;
}

const uint32_t kNop = encode(Instr::nop());

}  // namespace

TEST_CASE("verify examples") {
  CHECK(verify_image(image_of({kNop}), Profile::sparse()).ok());

  const uint32_t bad = encode(Instr::alu_imm(AluFn::Add, Reg(21), Reg(0), 1));
  const auto r = verify_image(image_of({kNop, bad}), Profile::sparse());
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].offset == 4);
  CHECK(r.violations[0].reason == RejectReason::WritesBase);
  CHECK(r.violations[0].text == "add x21, x0, #1");

  const auto u = verify_image(image_of({0xF0000000u}), Profile::sparse());
  REQUIRE(u.violations.size() == 1);
  CHECK(u.violations[0].reason == RejectReason::Undecodable);
  CHECK(u.violations[0].text == "0xF0000000");
}

TEST_CASE("bad entry points") {
  auto r = verify_image(image_of({kNop, kNop}, 6), Profile::sparse());
  REQUIRE(r.violations.size() == 1);
  CHECK_FALSE(r.violations[0].reason.has_value());
  CHECK(r.violations[0].reason_text() == "BadEntry");

  r = verify_image(image_of({kNop}, 4), Profile::sparse());
  REQUIRE(r.violations.size() == 1);
  CHECK_FALSE(r.violations[0].reason.has_value());

  // An empty code section has no valid entry.
  CHECK_FALSE(verify_image(image_of({}), Profile::sparse()).ok());

  // Entry violations sort among word violations by offset.
  const uint32_t bad = encode(Instr::udf()) | 0xF0000000u;
  r = verify_image(image_of({bad, kNop, bad}, 5), Profile::sparse());
  REQUIRE(r.violations.size() == 3);
  CHECK(r.violations[0].offset == 0);
  CHECK(r.violations[1].offset == 5);
  CHECK(r.violations[2].offset == 8);
}

TEST_CASE("malformed image bytes are rejected before verification") {
  auto bytes = serialize_image(image_of({kNop}));
  bytes[0] = 'X';
  CHECK_THROWS_AS(verify_image(std::span<const uint8_t>(bytes), Profile::sparse()), ImageFormatError);
  bytes = serialize_image(image_of({kNop}));
  CHECK(verify_image(std::span<const uint8_t>(bytes), Profile::sparse()).ok());
}

TEST_CASE("violations are the per-word verdicts and follow words under permutation") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 50; ++round) {
    std::vector<uint32_t> code(64);
    for (auto& w : code) {
      const auto i = testing::random_decodable(rng);
      // Direct branches depend on their offset; keep them out of the shuffle.
      w = i.is_direct_branch() ? kNop : encode(i);
      if (rng() % 8 == 0) w = static_cast<uint32_t>(rng());
      if (auto d = decode(w); d && d->is_direct_branch()) w = kNop;
    }
    const auto rejected = [](const std::vector<uint32_t>& c) {
      std::vector<uint32_t> out;
      for (const auto& v : verify_image(image_of(c), Profile::sparse()).violations) out.push_back(c[v.offset / 4]);
      std::sort(out.begin(), out.end());
      return out;
    };
    std::vector<uint32_t> want;
    for (uint32_t w : code)
      if (!accepts(decode(w), 0, Profile::sparse()).accepted()) want.push_back(w);
    std::sort(want.begin(), want.end());

    CHECK(rejected(code) == want);
    std::shuffle(code.begin(), code.end(), rng);
    CHECK(rejected(code) == want);
  }
}

TEST_CASE("branch verdicts use the word's own offset") {
  // Code starts 4096 bytes into the sandbox. b -1100 lands at sandbox offset
  // 4096 + 4*k - 4400: outside for k = 75, exactly the sandbox base for k = 76.
  const uint32_t back = encode(Instr::b(-1100));
  std::vector<uint32_t> code(75, kNop);
  code.push_back(back);
  auto r = verify_image(image_of(code), Profile::sparse());
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].offset == 300);
  CHECK(r.violations[0].reason == RejectReason::BranchTargetOutOfSandbox);
  code.insert(code.begin(), kNop);
  CHECK(verify_image(image_of(code), Profile::sparse()).ok());
}

TEST_CASE("mutations reach the verifier") {
  const uint32_t w = encode(Instr::alu_imm(AluFn::Add, Reg(21), Reg(0), 1));
  CHECK_FALSE(verify_image(image_of({w}), Profile::sparse()).ok());
  CHECK(verify_image(image_of({w}), Profile::sparse(), Mutation::AluWritesBase).ok());
}

TEST_CASE("verify_json schema") {
  const uint32_t bad = encode(Instr::alu_imm(AluFn::Add, Reg(21), Reg(0), 1));
  const auto j = nlohmann::json::parse(verify_json(verify_image(image_of({kNop, bad}), Profile::sparse())));
  CHECK(j["ok"] == false);
  REQUIRE(j["violations"].size() == 1);
  CHECK(j["violations"][0]["offset"] == 4);
  CHECK(j["violations"][0]["reason"] == "WritesBase");
  CHECK(j["violations"][0]["text"] == "add x21, x0, #1");
  CHECK(nlohmann::json::parse(verify_json(verify_image(image_of({kNop}), Profile::sparse())))["ok"] == true);
}

TEST_CASE("words the verifier accepts are proved safe") {
  std::mt19937_64 rng(77);
  const auto subjects = class_subjects();
  for (const auto& profile : {Profile::sparse(), Profile::dense()}) {
    std::vector<uint32_t> accepted;
    for (int round = 0; round < 20; ++round) {
      std::vector<uint32_t> code;
      for (int k = 0; k < 64; ++k) {
        const Instr i = rng() % 2 ? draw_instr(subjects[rng() % subjects.size()], rng)
                                  : testing::random_decodable(rng);
        code.push_back(encode(i));
      }
      const auto report = verify_image(image_of(code), profile);
      std::vector<bool> bad(code.size());
      for (const auto& v : report.violations) bad[v.offset / 4] = true;
      for (size_t k = 0; k < code.size(); ++k)
        if (!bad[k]) accepted.push_back(code[k]);
    }
    std::sort(accepted.begin(), accepted.end());
    accepted.erase(std::unique(accepted.begin(), accepted.end()), accepted.end());
    REQUIRE(accepted.size() >= 8);
    std::shuffle(accepted.begin(), accepted.end(), rng);
    accepted.resize(8);

    std::vector<ProofSubject> sample;
    for (uint32_t w : accepted) sample.push_back(word_proof_subject(w));
    ProveOptions o;
    o.profile = profile;
    o.solver = {default_solver_command(), std::chrono::milliseconds(60000)};
    const auto r = prove_range(sample, o);
    CAPTURE(report_text(r));
    CHECK(r.count(ProofStatus::Proved) == sample.size());
  }
}
