#pragma once

// Sandbox geometry, region permissions, the SFI register invariant and the
// stateless instruction whitelist.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sfi/image.hpp"
#include "sfi/isa.hpp"
#include "sfi/state.hpp"

namespace sfi {

inline constexpr uint64_t kSandboxSize = 1ull << 32;
inline constexpr uint64_t kRtPageSize = 4096;
inline constexpr unsigned kRtCount = 3;
/// Largest writeback displacement magnitude plus the widest access.
inline constexpr uint64_t kMaxDisplacement = 256;
inline constexpr uint64_t kMaxAccess = 8;

struct Profile {
  ProfileKind kind = ProfileKind::Sparse;
  std::string name = "sparse";
  uint64_t sandbox_size = kSandboxSize;
  uint64_t guard_size = 1ull << 32;
  uint64_t slack = 1ull << 27;
  uint64_t rt_page = kRtPageSize;
  unsigned rt_count = kRtCount;
  uint64_t base_align = kSandboxSize;

  static Profile sparse();
  static Profile dense();

  friend bool operator==(const Profile&, const Profile&) = default;
};

/// nullopt when every geometry inequality holds, otherwise the violated one.
std::optional<std::string> validate_profile(const Profile& profile);

/// key=value lines: name, guard_size, slack, rt_page. `#` starts a comment.
Profile parse_profile_config(std::string_view text);
std::string format_profile_config(const Profile& profile);

/// "sparse", "dense" or "file:PATH".
Profile resolve_profile(std::string_view selector);

struct MemoryLayout {
  uint64_t base = kSandboxSize;
  uint64_t code_end = kSandboxSize + 2 * kRtPageSize;
  Profile profile;

  uint64_t code_start() const { return base + kRtPageSize; }
  uint64_t sandbox_end() const { return base + kSandboxSize; }
  uint64_t model_lo() const { return base - profile.guard_size; }
  uint64_t model_hi() const { return base + kSandboxSize + profile.guard_size; }
};

/// Largest base for which base + 2^32 + guard still fits in 64 bits.
uint64_t max_base(const Profile& profile);

std::optional<std::string> validate_layout(const MemoryLayout& layout);

struct RtTable {
  std::array<uint64_t, kRtCount> rt{};
  friend bool operator==(const RtTable&, const RtTable&) = default;
};

std::optional<std::string> validate_rt(const MemoryLayout& layout, const RtTable& rt);

enum class Region : uint8_t { GuardLo, RtPage, Code, Data, GuardHi, Outside };

struct Perms {
  bool read = false, write = false, execute = false;
  friend bool operator==(const Perms&, const Perms&) = default;
};

struct RegionInfo {
  Region region;
  Perms perms;
};

RegionInfo region_of(const MemoryLayout& layout, uint64_t addr);
std::string_view region_name(Region r);

/// 1-based index of the first failing invariant conjunct:
/// 1 r21 = base; 2 r18 range; 3 sp range; 4 pc in code and aligned;
/// 5 r30 in [base, base+2^32] or a runtime-call address.
std::optional<int> violated_conjunct(const MachineState& s, const MemoryLayout& layout,
                                     const RtTable& rt);
bool invariant_holds(const MachineState& s, const MemoryLayout& layout, const RtTable& rt);

enum class RejectReason : uint8_t {
  WritesBase,
  WritesAddrReg,
  WritesLink,
  WritesSp,
  BadAddressBase,
  BadGuardSource,
  BadTrampolineForm,
  BranchTargetOutOfSandbox,
  Undecodable,
};

std::string_view reason_name(RejectReason r);

struct Verdict {
  std::optional<RejectReason> reject;  // empty = Accept

  bool accepted() const { return !reject.has_value(); }
  static Verdict accept() { return {}; }
  static Verdict rejected(RejectReason r) { return {r}; }
  friend bool operator==(const Verdict&, const Verdict&) = default;
};

/// Seeded relaxations used to check that the prover notices unsafe rules.
enum class Mutation : uint8_t {
  None,
  AluWritesBase,        // M1
  LinkLoadAnyOffset,    // M2
  StoreAnyBase,         // M3
  GuardAnySource,       // M4
  DenseGuardShrunk,     // M5 (profile, not whitelist)
  BrAnyRegister,        // M6
};

std::optional<Mutation> parse_mutation(std::string_view name);  // "M1".."M6", "none"
std::string_view mutation_name(Mutation m);

/// Profile used when `m` alters geometry (M5); otherwise `base` unchanged.
Profile mutate_profile(const Profile& base, Mutation m);

/// The whitelist. `offset` is the byte offset of the instruction inside the
/// sandbox; only direct branches look at it.
Verdict accepts(const std::optional<Instr>& instr, uint64_t offset, const Profile& profile,
                Mutation mutation = Mutation::None);

/// Offset used by the encoding census; every direct branch is in range here.
inline constexpr uint64_t kCensusOffset = 1ull << 31;

// ---------------------------------------------------------------------------
// Whitelisted instruction classes, described field by field. Each subject fixes
// the discrete fields (opcode, ALU function, size, mode) and constrains the
// register and immediate fields; the prover leaves those symbolic.

enum class ImmRule : uint8_t { Fixed, Any, OneOf, InSandbox };

struct ClassSubject {
  std::string id;      // e.g. "load-sp.8.post"
  std::string family;  // e.g. "load-sp"
  Instr shape;         // discrete fields; register/imm values used when fixed
  uint32_t rd_mask = 1, rn_mask = 1, rm_mask = 1, rt_mask = 1;
  ImmRule imm_rule = ImmRule::Fixed;
  std::vector<int64_t> imm_values;  // ImmRule::OneOf
  unsigned imm_bits = 0;
  bool imm_signed = false;
};

inline constexpr uint32_t kAllRegs = 0xFFFFFFFFu;
inline constexpr uint32_t kDataRegs = 0x7FFFFFFFu;  // 0..30

constexpr uint32_t reg_bit(unsigned i) { return 1u << i; }

std::vector<ClassSubject> class_subjects(Mutation mutation = Mutation::None);

/// Family names in canonical order.
std::vector<std::string> class_families();

bool matches(const ClassSubject& subject, const Instr& instr, uint64_t offset);

/// Number of field combinations the subject admits (at the census offset).
uint64_t subject_population(const ClassSubject& subject);
/// One combination, uniform over subject_population().
Instr draw_instr(const ClassSubject& subject, std::mt19937_64& rng);

}  // namespace sfi
