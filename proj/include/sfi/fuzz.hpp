#pragma once

// Differential fuzzing of single whitelisted steps. Each iteration draws a
// layout, a runtime-call table, a state satisfying the SFI invariant and an
// accepted instruction, then runs one concrete step and checks it against
// the safety property and against the symbolic engine.

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "sfi/policy.hpp"
#include "sfi/state.hpp"

namespace sfi {

struct FuzzOptions {
  uint64_t seed = 1;
  uint64_t iterations = 100000;
  Profile profile = Profile::sparse();
  Mutation mutation = Mutation::None;
  int threads = 0;  // 0: OpenMP default
};

struct FuzzViolation {
  uint64_t iteration = 0;
  std::string kind;  // escape, outside-model, invariant, engine-mismatch
  std::string detail;
  std::string subject;
  uint32_t word = 0;
  MachineState state;
  MemoryLayout layout;
  RtTable rt;

  friend bool operator==(const FuzzViolation& a, const FuzzViolation& b);
};

struct FuzzReport {
  uint64_t seed = 0;
  std::string profile;
  std::string mutation;
  uint64_t iterations = 0;  // completed; stops at the first violation
  std::map<std::string, uint64_t> per_class;  // subject family
  std::map<std::string, uint64_t> outcomes;   // next, fault:<kind>, rt<i>
  std::optional<FuzzViolation> violation;     // the lowest failing iteration

  friend bool operator==(const FuzzReport& a, const FuzzReport& b);
};

FuzzReport fuzz_serial(const FuzzOptions& options);
FuzzReport fuzz_parallel(const FuzzOptions& options);
inline FuzzReport fuzz(const FuzzOptions& options) { return fuzz_parallel(options); }

/// Reruns one iteration of a report's seed (reproduction).
FuzzReport fuzz_one(const FuzzOptions& options, uint64_t iteration);

std::string fuzz_json(const FuzzReport& report);
std::string fuzz_text(const FuzzReport& report);

}  // namespace sfi
