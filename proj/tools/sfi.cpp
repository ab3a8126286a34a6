// sfi: command-line front end.
//
// Exit codes: 0 success / proved, 1 violation or bug found, 2 usage,
// 3 infrastructure (solver failure, replay mismatch, I/O).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "sfi/asm.hpp"
#include "sfi/census.hpp"
#include "sfi/fuzz.hpp"
#include "sfi/prover.hpp"
#include "sfi/rewriter.hpp"
#include "sfi/sandbox.hpp"
#include "sfi/verifier.hpp"

using namespace sfi;

namespace {

enum Exit { kOk = 0, kViolation = 1, kUsage = 2, kInfra = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Failure to read or write a file the user named.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

uint64_t parse_number(const std::string& s) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(s, &used, 0);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(fmt::format("'{}' is not a number", s));
  }
}

uint32_t parse_word(const std::string& s) {
  const uint64_t v = parse_number(s);
  if (v > 0xFFFFFFFFull) throw UsageError(fmt::format("'{}' does not fit in 32 bits", s));
  return static_cast<uint32_t>(v);
}

Profile profile_arg(const std::string& selector) {
  try {
    return resolve_profile(selector);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

Mutation mutation_arg(const std::string& name) {
  if (auto m = parse_mutation(name)) return *m;
  throw UsageError(fmt::format("unknown mutation '{}' (none, M1..M6)", name));
}

std::vector<uint8_t> read_input(const std::string& path) {
  try {
    return read_file(path);
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
}

std::string read_text(const std::string& path) {
  const auto bytes = read_input(path);
  return {bytes.begin(), bytes.end()};
}

void write_output(const std::string& path, std::string_view text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  try {
    write_file(path, std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
}

Profile image_profile(const Image& img, const std::string& selector) {
  if (!selector.empty()) return profile_arg(selector);
  return img.profile == ProfileKind::Dense ? Profile::dense() : Profile::sparse();
}

// ---------------------------------------------------------------------------

struct Args {
  std::vector<std::string> words;
  std::string input, output = "-", profile, entry, solver_cmd, out_dir, mutation = "none";
  std::string base, max_steps = "1000000", stdin_file;
  bool json = false, trace = false, timing = false, vacuity = false, small = false;
  unsigned workers = 1;
  int threads = 0;
  uint64_t seed = 1, iters = 100000;
  std::vector<std::string> classes, ranges, word_args;
  size_t sample = 0;
  unsigned timeout_s = 60;
};

int cmd_decode(const Args& a) {
  int rc = kOk;
  for (const auto& s : a.words) {
    const uint32_t w = parse_word(s);
    if (const auto i = decode(w)) {
      std::cout << disassemble(*i) << "\n";
    } else {
      std::cout << fmt::format("0x{:08X}: undecodable", w) << "\n";
      rc = kViolation;
    }
  }
  return rc;
}

int cmd_asm(const Args& a) {
  const ProfileKind kind = a.profile.empty() ? ProfileKind::Sparse : profile_arg(a.profile).kind;
  const Image img = assemble(parse_program(read_text(a.input)), kind,
                             a.entry.empty() ? std::nullopt : std::optional<std::string>(a.entry));
  const auto bytes = serialize_image(img);
  write_output(a.output, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  return kOk;
}

int cmd_disasm(const Args& a) {
  const Image img = parse_image(read_input(a.input));
  std::string out = fmt::format("; profile {} entry {:#x}\n",
                                img.profile == ProfileKind::Dense ? "dense" : "sparse", img.entry);
  for (size_t k = 0; k < img.code.size(); ++k) {
    const auto i = decode(img.code[k]);
    const std::string text = i ? disassemble(*i) : fmt::format(".word 0x{:08X}", img.code[k]);
    out += fmt::format("    {:<32}; {:#06x}\n", text, 4 * k);
  }
  write_output(a.output, out);
  return kOk;
}

int cmd_verify(const Args& a) {
  const Image img = parse_image(read_input(a.input));
  const VerifyReport r = verify_image(img, image_profile(img, a.profile), mutation_arg(a.mutation));
  std::cout << (a.json ? verify_json(r) : verify_text(r));
  return r.ok() ? kOk : kViolation;
}

int cmd_rewrite(const Args& a) {
  if (!a.profile.empty()) profile_arg(a.profile);  // the rewrite is the same for both profiles
  write_output(a.output, format_program(rewrite(parse_program(read_text(a.input)))));
  return kOk;
}

int cmd_run(const Args& a) {
  const Image img = parse_image(read_input(a.input));
  const Profile p = image_profile(img, a.profile);
  Sandbox sb = Sandbox::boot(img, p, a.base.empty() ? kSandboxSize : parse_number(a.base));
  if (!a.stdin_file.empty()) sb.set_input(read_input(a.stdin_file));
  const ExitStatus st = sb.run(parse_number(a.max_steps));
  if (a.trace) {
    std::cout << trace_json_lines(sb.trace()) << exit_json(st);
  } else {
    const auto out = sb.output();
    std::cout.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    std::cout.flush();
    std::cerr << st.describe() << "\n";
  }
  return st.kind == ExitStatus::Kind::Exit ? kOk : kViolation;
}

int cmd_fuzz(const Args& a) {
  FuzzOptions o;
  o.seed = a.seed;
  o.iterations = a.iters;
  o.profile = profile_arg(a.profile.empty() ? "sparse" : a.profile);
  o.mutation = mutation_arg(a.mutation);
  o.threads = a.threads;
  const FuzzReport r = fuzz(o);
  std::cout << (a.json ? fuzz_json(r) : fuzz_text(r));
  return r.violation ? kViolation : kOk;
}

std::vector<ProofSubject> proof_subjects(const Args& a, const Profile& profile, Mutation m) {
  std::vector<ProofSubject> subjects;
  for (const auto& c : a.classes) {
    std::vector<std::string> families;
    if (c != "all") {
      const auto known = class_families();
      if (std::find(known.begin(), known.end(), c) == known.end()) {
        // A subject id rather than a family.
        bool found = false;
        for (auto& s : class_proof_subjects(m))
          if (s.id == c) subjects.push_back(std::move(s)), found = true;
        if (!found) throw UsageError(fmt::format("unknown class '{}'", c));
        continue;
      }
      families.push_back(c);
    }
    for (auto& s : class_proof_subjects(m, families)) subjects.push_back(std::move(s));
  }
  for (const auto& w : a.word_args) {
    try {
      subjects.push_back(word_proof_subject(parse_word(w)));
    } catch (const ObligationError& e) {
      throw UsageError(e.what());
    }
  }
  for (const auto& r : a.ranges) {
    const auto colon = r.find(':');
    if (colon == std::string::npos) throw UsageError("--range takes LO:HI");
    const uint64_t lo = parse_number(r.substr(0, colon)), hi = parse_number(r.substr(colon + 1));
    if (lo > hi || hi > (uint64_t{1} << 32)) throw UsageError("--range must satisfy LO <= HI <= 2^32");
    for (auto& s : range_subjects(lo, hi, profile, m)) subjects.push_back(std::move(s));
  }
  if (a.small)
    for (auto& s : enumerate_small_subjects(m)) subjects.push_back(std::move(s));
  if (a.sample > 0)
    for (Opcode op : heavy_opcodes())
      for (auto& s : sample_heavy_class(op, a.sample, a.seed)) subjects.push_back(std::move(s));
  if (subjects.empty()) throw UsageError("nothing to prove: give --class, --word, --range, --small or --sample");
  return subjects;
}

SolverOptions solver_options(const Args& a) {
  SolverOptions s;
  s.command = a.solver_cmd.empty() ? default_solver_command() : a.solver_cmd;
  s.timeout = std::chrono::seconds(a.timeout_s);
  return s;
}

int cmd_prove(const Args& a) {
  ProveOptions o;
  o.mutation = mutation_arg(a.mutation);
  o.profile = mutate_profile(profile_arg(a.profile.empty() ? "sparse" : a.profile), o.mutation);
  o.allow_invalid_profile = o.mutation == Mutation::DenseGuardShrunk;
  o.workers = a.workers;
  o.solver = solver_options(a);
  o.vacuity_check = a.vacuity;
  if (!a.out_dir.empty()) {
    std::filesystem::create_directories(a.out_dir);
    o.out_dir = a.out_dir;
  }
  const ProofReport r = prove_range(proof_subjects(a, o.profile, o.mutation), o);
  std::cout << (a.json ? report_json(r, a.timing) : report_text(r, a.timing));
  return report_exit_code(r);
}

int cmd_emit_smt(const Args& a) {
  const Mutation m = mutation_arg(a.mutation);
  const Profile p = mutate_profile(profile_arg(a.profile.empty() ? "sparse" : a.profile), m);
  const auto subjects = proof_subjects(a, p, m);
  if (subjects.size() != 1 && a.out_dir.empty())
    throw UsageError("emit-smt writes more than one script only with --out-dir");
  for (const auto& s : subjects) {
    const Obligation ob = std::holds_alternative<ClassSubject>(s.what)
                              ? build_obligation(std::get<ClassSubject>(s.what), p, m)
                              : build_obligation(std::get<Instr>(s.what), p, m);
    const std::string script = emit_smt(ob);
    if (a.out_dir.empty()) {
      std::cout << script;
    } else {
      std::filesystem::create_directories(a.out_dir);
      write_output((std::filesystem::path(a.out_dir) / fmt::format("{}.{}.smt2", s.id, p.name)).string(), script);
    }
  }
  return kOk;
}

int cmd_census(const Args& a) {
  const Profile p = profile_arg(a.profile.empty() ? "sparse" : a.profile);
  const Census c = census(p, mutation_arg(a.mutation), a.threads);
  if (a.json) {
    nlohmann::ordered_json j;
    j["profile"] = p.name;
    for (int op = 0; op < kOpcodeCount; ++op)
      j["classes"][std::string(opcode_name(static_cast<Opcode>(op)))] = {
          {"decodable", c.per_class[op].decodable}, {"accepted", c.per_class[op].accepted}};
    j["undecodable"] = c.undecodable;
    j["accepted"] = c.accepted_total();
    j["subject_mismatches"] = c.subject_mismatches;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << fmt::format("{:<10} {:>12} {:>12}\n", "class", "decodable", "accepted");
    for (int op = 0; op < kOpcodeCount; ++op)
      std::cout << fmt::format("{:<10} {:>12} {:>12}\n", opcode_name(static_cast<Opcode>(op)),
                               c.per_class[op].decodable, c.per_class[op].accepted);
    std::cout << fmt::format("{:<10} {:>12} {:>12}\n", "total", (uint64_t{1} << 32) - c.undecodable,
                             c.accepted_total());
    if (c.subject_mismatches) std::cout << fmt::format("{} words disagree with the class descriptions\n", c.subject_mismatches);
  }
  return c.subject_mismatches ? kViolation : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SBX64 software fault isolation toolkit"};
  app.require_subcommand(1);
  Args a;

  const auto add_profile = [&](CLI::App* c) {
    c->add_option("--profile", a.profile, "sparse, dense or file:PATH");
  };

  auto* decode_cmd = app.add_subcommand("decode", "Disassemble 32-bit words");
  decode_cmd->add_option("words", a.words, "words, e.g. 0x30954A00")->required();

  auto* asm_cmd = app.add_subcommand("asm", "Assemble a program into an SBX1 image");
  asm_cmd->add_option("input", a.input)->required();
  asm_cmd->add_option("-o,--output", a.output)->required();
  asm_cmd->add_option("--entry", a.entry, "entry label");
  add_profile(asm_cmd);

  auto* disasm_cmd = app.add_subcommand("disasm", "List the code of an image");
  disasm_cmd->add_option("input", a.input)->required();
  disasm_cmd->add_option("-o,--output", a.output);

  auto* verify_cmd = app.add_subcommand("verify", "Check every word of an image against the whitelist");
  verify_cmd->add_option("input", a.input)->required();
  verify_cmd->add_flag("--json", a.json);
  verify_cmd->add_option("--mutation", a.mutation);
  add_profile(verify_cmd);

  auto* rewrite_cmd = app.add_subcommand("rewrite", "Instrument assembly so that it verifies");
  rewrite_cmd->add_option("input", a.input)->required();
  rewrite_cmd->add_option("-o,--output", a.output);
  add_profile(rewrite_cmd);

  auto* run_cmd = app.add_subcommand("run", "Boot a verified image and run it");
  run_cmd->add_option("input", a.input)->required();
  run_cmd->add_option("--base", a.base);
  run_cmd->add_option("--max-steps", a.max_steps);
  run_cmd->add_option("--stdin", a.stdin_file, "bytes served to read calls");
  run_cmd->add_flag("--trace", a.trace, "print runtime calls as JSON lines");
  add_profile(run_cmd);

  auto* fuzz_cmd = app.add_subcommand("fuzz", "Differential fuzzing of single steps");
  fuzz_cmd->add_option("--seed", a.seed);
  fuzz_cmd->add_option("--iters", a.iters);
  fuzz_cmd->add_option("--mutation", a.mutation);
  fuzz_cmd->add_option("--threads", a.threads);
  fuzz_cmd->add_flag("--json", a.json);
  add_profile(fuzz_cmd);

  auto* prove_cmd = app.add_subcommand("prove", "Prove per-instruction safety with an SMT solver");
  auto* emit_cmd = app.add_subcommand("emit-smt", "Write the SMT-LIB2 obligation for a subject");
  for (auto* c : {prove_cmd, emit_cmd}) {
    c->add_option("--class", a.classes, "family, subject id, or all")->delimiter(',');
    c->add_option("--word", a.word_args, "single encoding")->delimiter(',');
    c->add_option("--range", a.ranges, "LO:HI, accepted words in [LO, HI)");
    c->add_flag("--small", a.small, "every accepted encoding of the small families");
    c->add_option("--sample", a.sample, "encodings sampled per heavy opcode class");
    c->add_option("--seed", a.seed, "sampling seed");
    c->add_option("--mutation", a.mutation);
    c->add_option("--out-dir", a.out_dir);
    add_profile(c);
  }
  prove_cmd->add_option("--workers", a.workers)->check(CLI::PositiveNumber);
  prove_cmd->add_option("--solver-cmd", a.solver_cmd, "default: $SFI_SOLVER_CMD or 'z3 -in'");
  prove_cmd->add_option("--timeout", a.timeout_s, "seconds per solver call");
  prove_cmd->add_flag("--json", a.json);
  prove_cmd->add_flag("--timing", a.timing, "add per-subject time and worker");
  prove_cmd->add_flag("--vacuity", a.vacuity, "also check that the assumptions alone are satisfiable");

  auto* census_cmd = app.add_subcommand("census", "Count decodable and accepted words of all 2^32");
  census_cmd->add_option("--mutation", a.mutation);
  census_cmd->add_option("--threads", a.threads);
  census_cmd->add_flag("--json", a.json);
  add_profile(census_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (decode_cmd->parsed()) return cmd_decode(a);
    if (asm_cmd->parsed()) return cmd_asm(a);
    if (disasm_cmd->parsed()) return cmd_disasm(a);
    if (verify_cmd->parsed()) return cmd_verify(a);
    if (rewrite_cmd->parsed()) return cmd_rewrite(a);
    if (run_cmd->parsed()) return cmd_run(a);
    if (fuzz_cmd->parsed()) return cmd_fuzz(a);
    if (prove_cmd->parsed()) return cmd_prove(a);
    if (emit_cmd->parsed()) return cmd_emit_smt(a);
    if (census_cmd->parsed()) return cmd_census(a);
  } catch (const UsageError& e) {
    std::cerr << "sfi: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "sfi: " << e.what() << "\n";
    return kInfra;
  } catch (const AsmError& e) {
    std::cerr << "sfi: " << a.input << ": " << e.what() << "\n";
    return kViolation;
  } catch (const RewriteError& e) {
    std::cerr << "sfi: " << a.input << ":" << e.line() << ": " << e.what() << "\n";
    return kViolation;
  } catch (const ImageFormatError& e) {
    std::cerr << "sfi: " << a.input << ": " << e.what() << "\n";
    return kViolation;
  } catch (const BootError& e) {
    std::cerr << "sfi: " << e.what() << "\n";
    return kViolation;
  } catch (const std::exception& e) {
    std::cerr << "sfi: " << e.what() << "\n";
    return kInfra;
  }
  return kUsage;
}
