#pragma once

// Assembly-level instrumentation that makes a program pass the verifier.
//
// Whitelisted instructions are kept as they are. Memory accesses through an
// arbitrary register are routed through x18 after a guard; immediate offsets
// are folded into the scratch register x17 first. ALU writes to sp go
// through x17 and a guard into sp, and `br` through anything but x18/x30 is
// guarded into x18. Writes to x21, x30 or x18 have no local rewrite and are
// errors, as is any other use of x17/x18 in a program that needs rewriting.

#include <stdexcept>
#include <string>

#include "sfi/asm.hpp"

namespace sfi {

inline constexpr Reg kRewriteScratch = reg::kScratch;

class RewriteError : public std::runtime_error {
 public:
  RewriteError(int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

/// Pure. Numeric branch displacements are turned into generated labels
/// (`__rw_<n>`) so that they survive expansion.
AsmProgram rewrite(const AsmProgram& program);

}  // namespace sfi
