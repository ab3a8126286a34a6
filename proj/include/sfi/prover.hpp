#pragma once

// Per-instruction and per-class proof obligations.
//
// An obligation says: under the layout/runtime-table assumptions and the SFI
// invariant on the pre-state, no path of the instruction touches memory (or
// transfers control) beyond the sandbox and its guards, and every path that
// does not terminate re-establishes the invariant. emit_smt() asserts the
// negation, so `unsat` means proved; a model is a counterexample candidate
// that replay() re-runs on the concrete interpreter before it is believed.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sfi/isa.hpp"
#include "sfi/policy.hpp"
#include "sfi/semantics.hpp"
#include "sfi/solver.hpp"
#include "sfi/term.hpp"

namespace sfi {

class ObligationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PathGoal {
  sym::Term guard;
  sym::Term bad;         // an escaping byte access or control transfer
  sym::Term terminated;  // trap or runtime call
  sym::Term post_invariant;
  SymState post;
  std::vector<GAccess<SymbolicDomain>> accesses;
  sym::Term outside_model;
};

struct Obligation {
  std::string id;
  Profile profile;
  Mutation mutation = Mutation::None;
  ClassSubject subject;  // single instructions use singleton masks
  bool single = false;   // operand fields are constants

  sym::TermStore ts;
  SymState pre;
  SymLayout layout;
  SymOperands ops;
  /// Layout, runtime-table and operand-field constraints. The pre-state
  /// invariant is rendered separately through the invariant function.
  std::vector<sym::Term> assumptions;
  sym::Term pre_invariant;
  std::vector<PathGoal> paths;
  unsigned load_symbols = 0;  // ld0 .. ld<n-1>
};

/// Class obligation with symbolic operand fields.
Obligation build_obligation(const ClassSubject& subject, const Profile& profile,
                            Mutation mutation = Mutation::None);
/// Single-instruction obligation. Throws ObligationError when the whitelist
/// (under `mutation`) rejects the instruction at every offset.
Obligation build_obligation(const Instr& instr, const Profile& profile,
                            Mutation mutation = Mutation::None);

/// "0x30954A00" style id used for single encodings.
std::string word_id(uint32_t word);

/// The invariant as a term over a symbolic state (used for evaluation).
sym::Term invariant_term(sym::TermStore& ts, const SymState& s, const SymLayout& l,
                         const Profile& profile);
/// The invariant as an SMT-LIB2 function `sfi-inv` of
/// (base code_end rt0 rt1 rt2 r21 r18 sp pc r30).
std::string invariant_smt_definition(const Profile& profile);

/// With `with_goal` false only the assumptions are asserted (vacuity check).
std::string emit_smt(const Obligation& ob, bool with_goal = true);

SolverResult check(const Obligation& ob, const SolverOptions& options);

// ---------------------------------------------------------------------------
// Counterexamples.

enum class ViolationKind : uint8_t { BadRead, BadWrite, BadExec, InvariantBroken };
std::string_view violation_name(ViolationKind k);

struct Violation {
  ViolationKind kind = ViolationKind::BadRead;
  int conjunct = 0;   // InvariantBroken
  uint64_t addr = 0;  // BadRead/BadWrite/BadExec

  std::string describe() const;
  friend bool operator==(const Violation&, const Violation&) = default;
};

struct Counterexample {
  MachineState state;
  MemoryLayout layout;
  RtTable rt;
  Instr instr;
  std::optional<uint32_t> word;
  std::vector<uint8_t> loads;        // model values of the fresh load bytes, in order
  std::optional<Violation> claimed;  // what the symbolic model says goes wrong
};

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a counterexample out of a model. Symbols the solver left out are
/// unconstrained; with `complete_missing` they default to zero, otherwise
/// their absence throws ReplayError.
Counterexample extract_counterexample(const Obligation& ob, const sym::Assignment& model,
                                      bool complete_missing = true);

struct ReplayResult {
  bool confirmed = false;
  std::optional<Violation> violation;  // observed concretely
  std::string detail;                  // why it was refuted
};

/// Re-checks the model's assumptions concretely, runs one concrete step with
/// a memory oracle that serves the runtime-call table and the model's load
/// values, and confirms the claimed violation.
ReplayResult replay(const Counterexample& cex, const Obligation& ob);

// ---------------------------------------------------------------------------
// Sweeps.

struct ProofSubject {
  std::string id;
  std::variant<ClassSubject, Instr> what;
  std::optional<uint32_t> word;
};

std::vector<ProofSubject> class_proof_subjects(Mutation mutation = Mutation::None,
                                               const std::vector<std::string>& families = {});
ProofSubject word_proof_subject(uint32_t word);

/// Families whose accepted encodings are few enough to enumerate.
std::vector<std::string> small_families();
/// Every accepted encoding of the small families, in ascending order.
std::vector<ProofSubject> enumerate_small_subjects(Mutation mutation = Mutation::None);
/// Class subjects of the remaining families.
std::vector<ClassSubject> heavy_subjects(Mutation mutation = Mutation::None);
/// `count` encodings drawn uniformly from the accepted encodings of
/// `subject` (at the census offset), ascending and without duplicates.
std::vector<ProofSubject> sample_subjects(const ClassSubject& subject, size_t count, uint64_t seed);
/// Opcode classes with heavy subjects, in opcode order.
std::vector<Opcode> heavy_opcodes();
/// As sample_subjects, uniform over the heavy encodings of one opcode class.
std::vector<ProofSubject> sample_heavy_class(Opcode op, size_t count, uint64_t seed);
/// Accepted words in [lo, hi), ascending.
std::vector<ProofSubject> range_subjects(uint64_t lo, uint64_t hi, const Profile& profile,
                                         Mutation mutation = Mutation::None);

enum class ProofStatus : uint8_t { Proved, Refuted, Unknown, ReplayMismatch };
std::string_view status_name(ProofStatus s);

struct SubjectResult {
  std::string id;
  ProofStatus status = ProofStatus::Unknown;
  std::optional<Counterexample> counterexample;
  std::optional<Violation> violation;
  std::string diagnostic;
  std::optional<bool> assumptions_satisfiable;  // vacuity check, when requested
  double millis = 0;
  unsigned worker = 0;
};

struct ProofReport {
  std::string profile;
  std::string mutation;
  std::vector<SubjectResult> results;  // subject order, whatever the worker count
  bool aborted = false;                // a replay mismatch stopped the sweep

  size_t count(ProofStatus s) const;
};

struct ProveOptions {
  Profile profile = Profile::sparse();
  Mutation mutation = Mutation::None;
  unsigned workers = 1;
  SolverOptions solver;
  std::optional<std::string> out_dir;  // writes <id>.<profile>.smt2
  bool vacuity_check = false;
  bool allow_invalid_profile = false;
};

ProofReport prove_range(const std::vector<ProofSubject>& subjects, const ProveOptions& options);

/// Canonical renderings; timing and worker ids only on request so that
/// reports compare byte-for-byte across worker counts.
std::string report_json(const ProofReport& report, bool timing = false);
std::string report_text(const ProofReport& report, bool timing = false);

/// 0 all proved, 1 a confirmed counterexample, 3 unknowns or a replay mismatch.
int report_exit_code(const ProofReport& report);

}  // namespace sfi
