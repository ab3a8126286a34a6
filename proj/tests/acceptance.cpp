// Acceptance run: one PASS/FAIL line per criterion. Time limits stated for
// four cores are scaled by 4 / cores on smaller machines.
//
//   acceptance [--only 1,3,...] [--workers N]

#include <omp.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "census_oracle.hpp"
#include "sfi/asm.hpp"
#include "sfi/census.hpp"
#include "sfi/fuzz.hpp"
#include "sfi/prover.hpp"
#include "sfi/rewriter.hpp"
#include "sfi/sandbox.hpp"
#include "sfi/verifier.hpp"

using namespace sfi;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned limits.
constexpr double kClassProofMinutes = 30;     // criterion 1, on 4 cores
constexpr double kCensusMinutes = 15;         // criterion 2, per profile
constexpr double kEnumerationMinutes = 45;    // criterion 3, on 4 cores
constexpr size_t kSamplesPerHeavyClass = 1000;
constexpr double kMutationSeconds = 60;       // criterion 4, per mutation
constexpr uint64_t kFuzzIterations = 100000;  // criterion 5, per profile
constexpr double kFuzzMinutes = 5;
constexpr size_t kTextSample = 100000;        // criterion 8
// Accepted encodings of the small families: sys 2, guard 3*32, load-x18
// 4 sizes * 28 rt, load-rt 3, store-x18 4 * 31, br 2.
constexpr size_t kSmallEncodings = 2 + 3 * 32 + 4 * 28 + 3 + 4 * 31 + 2;

struct Context {
  unsigned workers = 1;
  double core_scale = 1;  // 4 / cores, at least 1
  SolverOptions solver;
  size_t replay_mismatches = 0;  // across every proof run here
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double minutes_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count() / 60;
}

ProofReport prove(Context& ctx, const std::vector<ProofSubject>& subjects, const Profile& profile,
                  Mutation mutation = Mutation::None) {
  ProveOptions o;
  o.profile = profile;
  o.mutation = mutation;
  o.workers = ctx.workers;
  o.solver = ctx.solver;
  o.allow_invalid_profile = mutation == Mutation::DenseGuardShrunk;
  ProofReport r = prove_range(subjects, o);
  ctx.replay_mismatches += r.count(ProofStatus::ReplayMismatch);
  return r;
}

std::string first_problem(const ProofReport& r) {
  for (const auto& s : r.results)
    if (s.status != ProofStatus::Proved)
      return fmt::format("; first: {} {} {}", s.id, status_name(s.status), s.diagnostic);
  return "";
}

Outcome class_proofs(Context& ctx) {
  const auto t0 = Clock::now();
  size_t proved = 0, total = 0;
  std::string problem;
  for (const Profile& p : {Profile::sparse(), Profile::dense()}) {
    const ProofReport r = prove(ctx, class_proof_subjects(), p);
    proved += r.count(ProofStatus::Proved);
    total += r.results.size();
    if (problem.empty()) problem = first_problem(r);
  }
  const double mins = minutes_since(t0), limit = kClassProofMinutes * ctx.core_scale;
  return {proved == total && total > 0 && mins < limit,
          fmt::format("{}/{} class subjects proved over sparse+dense in {:.1f} min (limit {:.0f}){}", proved, total,
                      mins, limit, problem)};
}

Outcome census_sweep(Context&) {
  const auto want = testing::closed_form_census();
  bool ok = true;
  std::string detail;
  for (const Profile& p : {Profile::sparse(), Profile::dense()}) {
    const auto t0 = Clock::now();
    const Census c = census(p);
    const double mins = minutes_since(t0);
    int wrong = 0;
    for (int op = 0; op < kOpcodeCount; ++op)
      if (c.per_class[op].accepted != want[op]) ++wrong;
    ok = ok && wrong == 0 && c.subject_mismatches == 0 && mins < kCensusMinutes;
    detail += fmt::format("{}: {} accepted, {} classes off the closed form, {} subject mismatches, {:.1f} min; ",
                          p.name, c.accepted_total(), wrong, c.subject_mismatches, mins);
  }
  detail += fmt::format("AddUxtw {} Br {} SYS {} (limit {:.0f} min per profile)",
                        want[static_cast<size_t>(Opcode::AddUxtw)], want[static_cast<size_t>(Opcode::Br)],
                        want[static_cast<size_t>(Opcode::Sys)], kCensusMinutes);
  return {ok, detail};
}

Outcome enumeration_proofs(Context& ctx) {
  const auto t0 = Clock::now();
  std::vector<ProofSubject> subjects = enumerate_small_subjects();
  const size_t small = subjects.size();
  size_t sampled = 0;
  for (Opcode op : heavy_opcodes()) {
    auto s = sample_heavy_class(op, kSamplesPerHeavyClass, 2024 + static_cast<uint64_t>(op));
    sampled += s.size();
    for (auto& x : s) subjects.push_back(std::move(x));
  }
  const ProofReport r = prove(ctx, subjects, Profile::sparse());
  const double mins = minutes_since(t0), limit = kEnumerationMinutes * ctx.core_scale;
  const size_t proved = r.count(ProofStatus::Proved), unknown = r.count(ProofStatus::Unknown);
  const bool ok = small == kSmallEncodings && sampled == kSamplesPerHeavyClass * heavy_opcodes().size() &&
                  proved == subjects.size() && unknown == 0 && mins < limit;
  return {ok, fmt::format("{} small-family encodings (expected {}) + {} samples over {} heavy classes: {} proved, "
                          "{} unknown in {:.1f} min (limit {:.0f}){}",
                          small, kSmallEncodings, sampled, heavy_opcodes().size(), proved, unknown, mins, limit,
                          first_problem(r))};
}

Outcome mutation_catalog(Context& ctx) {
  struct Case {
    Mutation m;
    std::vector<std::string> families;
    Profile profile;
  };
  const std::vector<Case> cases{
      {Mutation::AluWritesBase, {"alu-reg", "alu-imm"}, Profile::sparse()},
      {Mutation::LinkLoadAnyOffset, {"load-rt"}, Profile::sparse()},
      {Mutation::StoreAnyBase, {"store-x18"}, Profile::sparse()},
      {Mutation::GuardAnySource, {"guard"}, Profile::sparse()},
      {Mutation::DenseGuardShrunk, {"load-sp", "store-sp"}, Profile::dense()},
      {Mutation::BrAnyRegister, {"br"}, Profile::sparse()},
  };
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const auto t0 = Clock::now();
    const ProofReport r = prove(ctx, class_proof_subjects(c.m, c.families), mutate_profile(c.profile, c.m), c.m);
    const double secs = minutes_since(t0) * 60;
    const size_t refuted = r.count(ProofStatus::Refuted);
    const bool good = refuted > 0 && r.count(ProofStatus::ReplayMismatch) == 0 &&
                      r.count(ProofStatus::Unknown) == 0 && secs < kMutationSeconds;
    std::string first;
    for (const auto& s : r.results)
      if (s.violation) {
        first = s.violation->describe();
        break;
      }
    ok = ok && good;
    detail += fmt::format("{} {} confirmed ({}) {:.1f}s; ", mutation_name(c.m), refuted, first, secs);
  }
  detail += fmt::format("limit {:.0f}s each", kMutationSeconds);
  return {ok, detail};
}

Outcome differential_fuzz(Context&) {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (const Profile& p : {Profile::sparse(), Profile::dense()}) {
    FuzzOptions o;
    o.seed = 1;
    o.iterations = kFuzzIterations;
    o.profile = p;
    const FuzzReport a = fuzz_parallel(o);
    const FuzzReport b = fuzz_serial(o);
    const bool clean = !a.violation && a.iterations == kFuzzIterations;
    ok = ok && clean && a == b && fuzz_json(a) == fuzz_json(b);
    detail += fmt::format("{}: {} iterations, {} violations, {}; ", p.name, a.iterations, a.violation ? 1 : 0,
                          a == b ? "serial and parallel reports identical" : "REPORTS DIFFER");
    if (a.violation) detail += fuzz_text(a);
  }
  const double mins = minutes_since(t0);
  ok = ok && mins < kFuzzMinutes;
  return {ok, detail + fmt::format("{:.1f} min (limit {:.0f})", mins, kFuzzMinutes)};
}

std::string source_file(const std::string& rel) {
  std::ifstream f(std::string(SFI_SOURCE_DIR) + "/" + rel, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + rel);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome end_to_end(Context&) {
  const auto hello = assemble(rewrite(parse_program(source_file("tests/programs/hello.s"))), ProfileKind::Sparse);
  const bool verified = verify_image(hello, Profile::sparse()).ok();
  const bool raw_rejected =
      !verify_image(assemble(parse_program(source_file("tests/programs/hello.s")), ProfileKind::Sparse),
                    Profile::sparse())
           .ok();
  Sandbox sb = Sandbox::boot(hello, Profile::sparse());
  const ExitStatus st = sb.run(100000);
  const auto& trace = sb.trace();
  const bool wrote = trace.size() == 2 && trace[0].kind == RuntimeRecord::Kind::Write &&
                     trace[0].bytes == std::vector<uint8_t>{'h', 'e', 'l', 'l', 'o'};
  const bool exited = st.kind == ExitStatus::Kind::Exit && st.code == 0;

  Sandbox esc = Sandbox::boot(assemble(parse_program(source_file("tests/programs/escape.s")), ProfileKind::Sparse),
                              Profile::sparse());
  const ExitStatus es = esc.run(100);
  const bool trapped = es.kind == ExitStatus::Kind::Fault && es.fault == FaultKind::MemUnmapped &&
                       es.pc == esc.layout().code_start() + 8 && es.addr == esc.layout().base - 8;

  return {verified && raw_rejected && wrote && exited && trapped,
          fmt::format("hello: raw source rejected {}, rewritten verifies {}, run {} with {} runtime records "
                      "(write of {} bytes); escape: {} at pc {:#x}",
                      raw_rejected, verified, st.describe(), trace.size(), trace.empty() ? 0 : trace[0].bytes.size(),
                      es.describe(), es.pc)};
}

Outcome smt_determinism(Context& ctx) {
  const auto subject = [](const std::string& id) {
    for (auto& s : class_subjects())
      if (s.id == id) return s;
    throw std::runtime_error("no subject " + id);
  };
  struct Golden {
    std::string file;
    std::function<std::string()> emit;
  };
  const std::vector<Golden> goldens{
      {"0x30954A00.sparse.smt2", [] { return emit_smt(build_obligation(*decode(0x30954A00), Profile::sparse())); }},
      {"guard.dense.smt2", [&] { return emit_smt(build_obligation(subject("guard"), Profile::dense())); }},
      {"load-rt.sparse.smt2", [&] { return emit_smt(build_obligation(subject("load-rt"), Profile::sparse())); }},
      {"br.dense.smt2", [&] { return emit_smt(build_obligation(subject("br"), Profile::dense())); }},
  };
  int matched = 0, repeated = 0;
  for (const auto& g : goldens) {
    const std::string a = g.emit(), b = g.emit();
    matched += a == source_file("tests/golden/" + g.file);
    repeated += a == b;
  }

  // Scripts written by sweeps with one worker and with several.
  const auto dir = std::filesystem::temp_directory_path() / fmt::format("sfi-accept-{}", ::getpid());
  std::vector<std::string> reports;
  std::map<std::string, std::string> first;
  int same_files = 0, files = 0;
  for (unsigned workers : {1u, std::max(4u, ctx.workers)}) {
    const auto out = dir / std::to_string(workers);
    std::filesystem::create_directories(out);
    ProveOptions o;
    o.workers = workers;
    o.solver = ctx.solver;
    o.out_dir = out.string();
    auto subjects = class_proof_subjects({}, {"guard", "br", "load-rt", "sys"});
    subjects.push_back(word_proof_subject(0x30954A00));
    const ProofReport r = prove_range(subjects, o);
    ctx.replay_mismatches += r.count(ProofStatus::ReplayMismatch);
    reports.push_back(report_json(r));
    for (const auto& e : std::filesystem::directory_iterator(out)) {
      std::ifstream f(e.path(), std::ios::binary);
      std::stringstream ss;
      ss << f.rdbuf();
      const auto name = e.path().filename().string();
      if (!first.count(name)) {
        first[name] = ss.str();
        ++files;
      } else {
        same_files += first[name] == ss.str();
      }
    }
  }
  std::filesystem::remove_all(dir);
  const bool ok = matched == 4 && repeated == 4 && files > 0 && same_files == files && reports[0] == reports[1];
  return {ok, fmt::format("{}/4 golden files match, {}/4 repeat emissions identical, {}/{} swept scripts and the "
                          "report identical across worker counts ({})",
                          matched, repeated, same_files, files, reports[0] == reports[1] ? "yes" : "no")};
}

Outcome isa_properties(Context&) {
  const auto t0 = Clock::now();
  const RoundTripStats rt = roundtrip_parallel(0, uint64_t{1} << 32);
  std::mt19937_64 rng(8);
  size_t sampled = 0, text_failures = 0;
  while (sampled < kTextSample) {
    const uint32_t w = static_cast<uint32_t>(rng());
    const auto i = decode(w);
    if (!i) continue;
    ++sampled;
    try {
      const AsmLine line = parse_line(disassemble(*i));
      const auto* a = line.statement ? std::get_if<AsmInstr>(&*line.statement) : nullptr;
      if (!a || a->target || a->instr != *i || encode(a->instr) != w) ++text_failures;
    } catch (const AsmError&) {
      ++text_failures;
    }
  }
  return {rt.failures == 0 && text_failures == 0,
          fmt::format("2^32 sweep: {} decodable words, {} round-trip failures; text round-trip: {} of {} sampled "
                      "decodable words fail; {:.1f} min",
                      rt.decodable, rt.failures, text_failures, sampled, minutes_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-8"};
  std::vector<int> only;
  Context ctx;
  ctx.workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--workers", ctx.workers, "prover workers")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const unsigned cores = std::max(1, omp_get_num_procs());
  ctx.core_scale = std::max(1.0, 4.0 / cores);
  ctx.solver.command = default_solver_command();
  std::printf("cores %u, prover workers %u, time scale x%.1f for 4-core limits, solver '%s'\n", cores, ctx.workers,
              ctx.core_scale, ctx.solver.command.c_str());
  std::fflush(stdout);

  const std::vector<std::pair<std::string, Outcome (*)(Context&)>> criteria{
      {"class-mode proofs", class_proofs},        {"exhaustive census", census_sweep},
      {"enumeration proofs", enumeration_proofs}, {"mutation catalog", mutation_catalog},
      {"differential fuzz", differential_fuzz},   {"end-to-end demo", end_to_end},
      {"SMT determinism", smt_determinism},       {"ISA properties", isa_properties},
  };
  int failed = 0;
  std::set<int> wanted(only.begin(), only.end());
  for (size_t k = 0; k < criteria.size(); ++k) {
    const int n = static_cast<int>(k) + 1;
    if (!wanted.empty() && !wanted.count(n)) continue;
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s: %s\n", n, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  const bool clean = ctx.replay_mismatches == 0;
  std::printf("replay mismatches across all proof runs: %zu\n", ctx.replay_mismatches);
  return failed == 0 && clean ? 0 : 1;
}
