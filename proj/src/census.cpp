#include "sfi/census.hpp"

#include <algorithm>

#include <omp.h>

namespace sfi {

uint64_t Census::accepted_total() const {
  uint64_t n = 0;
  for (const auto& c : per_class) n += c.accepted;
  return n;
}

Census& Census::operator+=(const Census& o) {
  for (size_t i = 0; i < per_class.size(); ++i) {
    per_class[i].decodable += o.per_class[i].decodable;
    per_class[i].accepted += o.per_class[i].accepted;
  }
  undecodable += o.undecodable;
  if (per_subject.size() < o.per_subject.size()) per_subject.resize(o.per_subject.size());
  for (size_t i = 0; i < o.per_subject.size(); ++i) per_subject[i] += o.per_subject[i];
  subject_mismatches += o.subject_mismatches;
  return *this;
}

namespace {

struct SweepContext {
  const Profile& profile;
  Mutation mutation;
  std::vector<ClassSubject> subjects;
  std::array<std::vector<size_t>, kOpcodeCount> by_opcode;

  SweepContext(const Profile& p, Mutation m) : profile(p), mutation(m), subjects(class_subjects(m)) {
    for (size_t i = 0; i < subjects.size(); ++i)
      by_opcode[static_cast<size_t>(subjects[i].shape.op)].push_back(i);
  }

  Census empty() const {
    Census c;
    c.per_subject.assign(subjects.size(), 0);
    return c;
  }

  void tally(uint32_t word, Census& c) const {
    const auto instr = decode(word);
    if (!instr) {
      ++c.undecodable;
      return;
    }
    const auto op = static_cast<size_t>(instr->op);
    ++c.per_class[op].decodable;
    const bool accepted = accepts(instr, kCensusOffset, profile, mutation).accepted();
    size_t hits = 0, hit = 0;
    for (size_t s : by_opcode[op]) {
      if (matches(subjects[s], *instr, kCensusOffset)) {
        ++hits;
        hit = s;
      }
    }
    if (accepted) {
      ++c.per_class[op].accepted;
      if (hits == 1)
        ++c.per_subject[hit];
      else
        ++c.subject_mismatches;
    } else if (hits != 0) {
      ++c.subject_mismatches;
    }
  }
};

int thread_count(int requested) { return requested > 0 ? requested : omp_get_max_threads(); }

}  // namespace

Census census_serial(uint64_t lo, uint64_t hi, const Profile& profile, Mutation mutation) {
  const SweepContext ctx(profile, mutation);
  Census total = ctx.empty();
  for (uint64_t w = lo; w < hi; ++w) ctx.tally(static_cast<uint32_t>(w), total);
  return total;
}

Census census_parallel(uint64_t lo, uint64_t hi, const Profile& profile, Mutation mutation,
                       int threads) {
  const SweepContext ctx(profile, mutation);
  Census total = ctx.empty();
  const int64_t first = static_cast<int64_t>(lo), last = static_cast<int64_t>(hi);
#pragma omp parallel num_threads(thread_count(threads))
  {
    Census local = ctx.empty();
#pragma omp for schedule(static, 1 << 16) nowait
    for (int64_t w = first; w < last; ++w) ctx.tally(static_cast<uint32_t>(w), local);
#pragma omp critical
    total += local;
  }
  return total;
}

namespace {

void roundtrip_word(uint32_t w, RoundTripStats& s) {
  const auto instr = decode(w);
  if (!instr) return;
  ++s.decodable;
  bool ok = is_encodable(*instr) && encode(*instr) == w;
  if (ok) {
    const auto again = decode(encode(*instr));
    ok = again && *again == *instr;
  }
  if (!ok) {
    ++s.failures;
    s.first_failure = std::min<uint64_t>(s.first_failure, w);
  }
}

}  // namespace

RoundTripStats roundtrip_serial(uint64_t lo, uint64_t hi) {
  RoundTripStats s;
  for (uint64_t w = lo; w < hi; ++w) roundtrip_word(static_cast<uint32_t>(w), s);
  return s;
}

RoundTripStats roundtrip_parallel(uint64_t lo, uint64_t hi, int threads) {
  RoundTripStats total;
  const int64_t first = static_cast<int64_t>(lo), last = static_cast<int64_t>(hi);
#pragma omp parallel num_threads(thread_count(threads))
  {
    RoundTripStats local;
#pragma omp for schedule(static, 1 << 16) nowait
    for (int64_t w = first; w < last; ++w) roundtrip_word(static_cast<uint32_t>(w), local);
#pragma omp critical
    {
      total.decodable += local.decodable;
      total.failures += local.failures;
      total.first_failure = std::min(total.first_failure, local.first_failure);
    }
  }
  return total;
}

}  // namespace sfi
