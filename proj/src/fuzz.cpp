#include "sfi/fuzz.hpp"

#include <omp.h>

#include <algorithm>
#include <random>

#include <fmt/format.h>
#include <json.hpp>

#include "sfi/semantics.hpp"

namespace sfi {

bool operator==(const FuzzViolation& a, const FuzzViolation& b) {
  return a.iteration == b.iteration && a.kind == b.kind && a.detail == b.detail &&
         a.subject == b.subject && a.word == b.word && a.state == b.state &&
         a.layout.base == b.layout.base && a.layout.code_end == b.layout.code_end && a.rt == b.rt;
}

bool operator==(const FuzzReport& a, const FuzzReport& b) {
  return a.seed == b.seed && a.profile == b.profile && a.mutation == b.mutation &&
         a.iterations == b.iterations && a.per_class == b.per_class && a.outcomes == b.outcomes &&
         a.violation == b.violation;
}

namespace {

uint64_t mix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Setup {
  Profile profile;
  Mutation mutation;
  std::vector<ClassSubject> subjects;
  std::vector<std::vector<size_t>> families;  // subject indices per family
  std::vector<std::vector<uint64_t>> weights; // cumulative populations
};

struct IterResult {
  size_t subject = 0;
  std::string outcome;
  std::optional<FuzzViolation> violation;
};

uint64_t pick(std::mt19937_64& rng, uint64_t n) { return std::uniform_int_distribution<uint64_t>(0, n - 1)(rng); }

uint64_t small(std::mt19937_64& rng) { return pick(rng, 512); }

/// A value in [lo, hi] with extra weight on both ends.
uint64_t in_range(std::mt19937_64& rng, uint64_t lo, uint64_t hi) {
  const uint64_t span = hi - lo;
  switch (pick(rng, 4)) {
    case 0: return lo + std::min(span, small(rng));
    case 1: return hi - std::min(span, small(rng));
    default: return span == ~0ull ? rng() : lo + pick(rng, span + 1);
  }
}

uint64_t any_value(std::mt19937_64& rng, const MemoryLayout& l, const RtTable& rt) {
  const uint64_t base = l.base;
  switch (pick(rng, 8)) {
    case 0: return small(rng);
    case 1: return rng();
    case 2: return base + (rng() & 0xFFFFFFFFull);
    case 3: return base - small(rng);
    case 4: return base + kSandboxSize - 8 + small(rng) % 16;
    case 5: return rt.rt[pick(rng, kRtCount)];
    case 6: return ~0ull - small(rng);
    default: return rng() & 0xFFFFFFFFull;
  }
}

MemoryLayout draw_layout(std::mt19937_64& rng, const Profile& profile) {
  MemoryLayout l;
  l.profile = profile;
  const uint64_t first = std::max(kSandboxSize, (profile.guard_size + kSandboxSize - 1) / kSandboxSize * kSandboxSize);
  const uint64_t last = max_base(profile);
  l.base = pick(rng, 2) == 0 ? first : first + pick(rng, (last - first) / kSandboxSize + 1) * kSandboxSize;
  const uint64_t pages = pick(rng, 4) == 0 ? kSandboxSize / kRtPageSize - 1 : 1 + pick(rng, 4096);
  l.code_end = l.code_start() + pages * kRtPageSize;
  return l;
}

RtTable draw_rt(std::mt19937_64& rng, const MemoryLayout& l) {
  for (;;) {
    RtTable t;
    for (auto& a : t.rt) a = (pick(rng, 2) == 0 ? l.model_hi() + (rng() & 0xFFFFFF) : rng()) & ~3ull;
    if (!validate_rt(l, t)) return t;
  }
}

MachineState draw_state(std::mt19937_64& rng, const MemoryLayout& l, const RtTable& rt) {
  MachineState s;
  for (auto& r : s.r) r = any_value(rng, l, rt);
  const uint64_t lo = l.base - l.profile.slack;
  const uint64_t hi = l.base + kSandboxSize + l.profile.slack - 1;
  s.r[reg::kBase.index] = l.base;
  s.r[reg::kAddr.index] = in_range(rng, lo, hi);
  s.sp = in_range(rng, lo, hi);
  s.pc = in_range(rng, l.code_start() / 4, (l.code_end - 4) / 4) * 4;
  s.r[reg::kLink.index] = pick(rng, 4) == 0 ? rt.rt[pick(rng, kRtCount)] : in_range(rng, l.base, l.sandbox_end());
  return s;
}

std::string outcome_name(const StepOutcome& out) {
  switch (out.kind) {
    case StepOutcome::Kind::Next: return "next";
    case StepOutcome::Kind::RuntimeCall: return fmt::format("rt{}", out.rt_index);
    case StepOutcome::Kind::Fault: return fmt::format("fault:{}", fault_name(out.fault));
  }
  return "?";
}

IterResult run_iteration(const Setup& setup, uint64_t seed, uint64_t iteration) {
  std::mt19937_64 rng(mix(seed ^ mix(iteration)));
  IterResult res;
  const MemoryLayout layout = draw_layout(rng, setup.profile);
  const RtTable rt = draw_rt(rng, layout);
  const MachineState state = draw_state(rng, layout, rt);
  if (!invariant_holds(state, layout, rt)) throw std::logic_error("fuzz drew a state outside the invariant");

  Instr instr;
  for (;;) {
    const size_t f = pick(rng, setup.families.size());
    const auto& cum = setup.weights[f];
    const uint64_t x = pick(rng, cum.back());
    res.subject = setup.families[f][std::upper_bound(cum.begin(), cum.end(), x) - cum.begin()];
    const ClassSubject& subject = setup.subjects[res.subject];
    bool found = false;
    for (int attempt = 0; attempt < 64 && !found; ++attempt) {
      instr = draw_instr(subject, rng);
      found = accepts(instr, state.pc - layout.base, setup.profile, setup.mutation).accepted();
    }
    if (found) break;
  }

  const uint64_t mem_seed = rng();
  const ByteReader mem = [&](uint64_t a) -> uint8_t {
    if (a - layout.base < 8 * kRtCount) {
      const uint64_t off = a - layout.base;
      return static_cast<uint8_t>(rt.rt[off / 8] >> (8 * (off % 8)));
    }
    return static_cast<uint8_t>(mix(mem_seed ^ a));
  };

  const StepOutcome out = step(state, layout, rt, mem, instr);
  res.outcome = outcome_name(out);

  const auto fail = [&](std::string kind, std::string detail) {
    FuzzViolation v;
    v.iteration = iteration;
    v.kind = std::move(kind);
    v.detail = std::move(detail);
    v.subject = setup.subjects[res.subject].id;
    v.word = encode(instr);
    v.state = state;
    v.layout = layout;
    v.rt = rt;
    res.violation = std::move(v);
    return res;
  };

  const bool faulted = out.kind == StepOutcome::Kind::Fault;
  for (const auto& e : out.events) {
    const bool in_sandbox = e.addr - layout.base < kSandboxSize;
    if (!faulted && !in_sandbox)
      return fail("escape", fmt::format("{} of {:#x} succeeded", e.kind == AccessKind::ReadByte ? "read" : "write", e.addr));
    if (e.addr - layout.model_lo() >= layout.model_hi() - layout.model_lo())
      return fail("outside-model", fmt::format("access to {:#x} beyond the guard zones", e.addr));
  }
  if (faulted && out.outside_model)
    return fail("outside-model", fmt::format("control transfer to {:#x} beyond the guard zones", out.state.pc));
  if (out.kind == StepOutcome::Kind::Next) {
    if (const auto c = violated_conjunct(out.state, layout, rt))
      return fail("invariant", fmt::format("post-state breaks invariant conjunct {}", *c));
  }
  if (auto m = engine_mismatch(state, layout, rt, mem, instr, iteration % 2 == 1))
    return fail("engine-mismatch", *m);
  return res;
}

Setup make_setup(const FuzzOptions& o) {
  Setup s{mutate_profile(o.profile, o.mutation), o.mutation, class_subjects(o.mutation), {}, {}};
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < s.subjects.size(); ++i) {
    const auto [it, fresh] = index.emplace(s.subjects[i].family, s.families.size());
    if (fresh) {
      s.families.emplace_back();
      s.weights.emplace_back();
    }
    const uint64_t w = subject_population(s.subjects[i]);
    s.families[it->second].push_back(i);
    s.weights[it->second].push_back((s.weights[it->second].empty() ? 0 : s.weights[it->second].back()) + w);
  }
  return s;
}

FuzzReport empty_report(const FuzzOptions& o, const Setup& setup) {
  FuzzReport r;
  r.seed = o.seed;
  r.profile = setup.profile.name;
  r.mutation = std::string(mutation_name(o.mutation));
  return r;
}

/// Folds results in iteration order, stopping after the first violation.
bool absorb(FuzzReport& report, const Setup& setup, IterResult& res) {
  ++report.iterations;
  ++report.per_class[setup.subjects[res.subject].family];
  ++report.outcomes[res.outcome];
  if (res.violation) {
    report.violation = std::move(res.violation);
    return false;
  }
  return true;
}

}  // namespace

FuzzReport fuzz_serial(const FuzzOptions& o) {
  const Setup setup = make_setup(o);
  FuzzReport report = empty_report(o, setup);
  for (uint64_t i = 0; i < o.iterations; ++i) {
    IterResult res = run_iteration(setup, o.seed, i);
    if (!absorb(report, setup, res)) break;
  }
  return report;
}

FuzzReport fuzz_parallel(const FuzzOptions& o) {
  const Setup setup = make_setup(o);
  FuzzReport report = empty_report(o, setup);
  const int threads = o.threads > 0 ? o.threads : omp_get_max_threads();
  const uint64_t block = 4096;
  std::vector<IterResult> results;
  for (uint64_t start = 0; start < o.iterations; start += block) {
    const uint64_t n = std::min(block, o.iterations - start);
    results.assign(n, {});
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 64) num_threads(threads)
    for (int64_t k = 0; k < static_cast<int64_t>(n); ++k) {
      try {
        results[k] = run_iteration(setup, o.seed, start + k);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    for (auto& res : results)
      if (!absorb(report, setup, res)) return report;
  }
  return report;
}

FuzzReport fuzz_one(const FuzzOptions& o, uint64_t iteration) {
  const Setup setup = make_setup(o);
  FuzzReport report = empty_report(o, setup);
  IterResult res = run_iteration(setup, o.seed, iteration);
  absorb(report, setup, res);
  return report;
}

namespace {

nlohmann::ordered_json violation_json(const FuzzViolation& v) {
  nlohmann::ordered_json j;
  j["iteration"] = v.iteration;
  j["kind"] = v.kind;
  j["detail"] = v.detail;
  j["subject"] = v.subject;
  j["word"] = fmt::format("{:#010x}", v.word);
  j["instr"] = disassemble_word(v.word);
  j["base"] = fmt::format("{:#x}", v.layout.base);
  j["code_end"] = fmt::format("{:#x}", v.layout.code_end);
  auto& rt = j["rt"] = nlohmann::ordered_json::array();
  for (uint64_t a : v.rt.rt) rt.push_back(fmt::format("{:#x}", a));
  auto& regs = j["state"];
  for (size_t i = 0; i < v.state.r.size(); ++i) regs[fmt::format("x{}", i)] = fmt::format("{:#x}", v.state.r[i]);
  regs["sp"] = fmt::format("{:#x}", v.state.sp);
  regs["pc"] = fmt::format("{:#x}", v.state.pc);
  return j;
}

}  // namespace

std::string fuzz_json(const FuzzReport& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["profile"] = r.profile;
  j["mutation"] = r.mutation;
  j["iterations"] = r.iterations;
  j["per_class"] = r.per_class;
  j["outcomes"] = r.outcomes;
  j["violations"] = r.violation ? 1 : 0;
  if (r.violation) j["violation"] = violation_json(*r.violation);
  return j.dump(2) + "\n";
}

std::string fuzz_text(const FuzzReport& r) {
  std::string out = fmt::format("fuzz seed={} profile={} mutation={} iterations={}\n", r.seed, r.profile,
                                r.mutation, r.iterations);
  for (const auto& [k, n] : r.per_class) out += fmt::format("  class {:<12} {}\n", k, n);
  for (const auto& [k, n] : r.outcomes) out += fmt::format("  outcome {:<22} {}\n", k, n);
  if (!r.violation) return out + "0 violations\n";
  const auto& v = *r.violation;
  out += fmt::format("VIOLATION at iteration {} ({}): {}\n  {} [{}] {:#010x} at pc {:#x}, base {:#x}\n", v.iteration,
                     v.kind, v.detail, disassemble_word(v.word), v.subject, v.word, v.state.pc, v.layout.base);
  return out;
}

}  // namespace sfi
