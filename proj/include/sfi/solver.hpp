#pragma once

// External SMT solver driven over pipes.
//
// The solver is started with `/bin/sh -c <command>` and must read SMT-LIB2
// from stdin, answering each command as it arrives (`z3 -in` does). The
// script is sent up to its `(get-model)` line; the model is requested only
// after a `sat` answer, because some solvers exit with an error when asked
// for a model of an unsat problem.

#include <chrono>
#include <string>
#include <string_view>

#include "sfi/term.hpp"

namespace sfi {

struct SolverOptions {
  std::string command = "z3 -in";
  std::chrono::milliseconds timeout{60000};
};

struct SolverResult {
  enum class Kind : uint8_t { Unsat, Sat, Unknown };

  Kind kind = Kind::Unknown;
  sym::Assignment model;   // Sat only
  std::string diagnostic;  // Unknown only
};

std::string_view result_name(SolverResult::Kind k);

SolverResult run_solver(std::string_view script, const SolverOptions& options);

/// Reads `(define-fun name () sort value)` entries from a model printout.
/// Throws std::runtime_error on text that is not a well-formed model.
sym::Assignment parse_model(std::string_view text);

/// $SFI_SOLVER_CMD if set, else the default command.
std::string default_solver_command();

}  // namespace sfi
