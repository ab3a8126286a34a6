#pragma once

// Exhaustive sweeps over the 32-bit encoding space. Each kernel comes in a
// serial reference form and an OpenMP form; tests hold them equal on
// sub-ranges and the benchmark compares their throughput.

#include <array>
#include <cstdint>
#include <vector>

#include "sfi/isa.hpp"
#include "sfi/policy.hpp"

namespace sfi {

struct ClassCount {
  uint64_t decodable = 0;
  uint64_t accepted = 0;
  friend bool operator==(const ClassCount&, const ClassCount&) = default;
};

struct Census {
  std::array<ClassCount, kOpcodeCount> per_class{};
  uint64_t undecodable = 0;
  /// Accepted words attributed to each class subject (class_subjects order).
  std::vector<uint64_t> per_subject;
  /// Words where the whitelist and the class descriptions disagree: accepted
  /// but matching zero or several subjects, or rejected but matching one.
  uint64_t subject_mismatches = 0;

  uint64_t accepted_total() const;
  Census& operator+=(const Census& other);
  friend bool operator==(const Census&, const Census&) = default;
};

/// Words in [lo, hi). hi may be 2^32.
Census census_serial(uint64_t lo, uint64_t hi, const Profile& profile,
                     Mutation mutation = Mutation::None);
Census census_parallel(uint64_t lo, uint64_t hi, const Profile& profile,
                       Mutation mutation = Mutation::None, int threads = 0);

inline Census census(const Profile& profile, Mutation mutation = Mutation::None, int threads = 0) {
  return census_parallel(0, 1ull << 32, profile, mutation, threads);
}

struct RoundTripStats {
  uint64_t decodable = 0;
  uint64_t failures = 0;               // encode(decode(w)) != w, or re-decode mismatch
  uint64_t first_failure = ~0ull;      // smallest failing word
  friend bool operator==(const RoundTripStats&, const RoundTripStats&) = default;
};

RoundTripStats roundtrip_serial(uint64_t lo, uint64_t hi);
RoundTripStats roundtrip_parallel(uint64_t lo, uint64_t hi, int threads = 0);

}  // namespace sfi
