#include "sfi/policy.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace sfi {

Profile Profile::sparse() { return Profile{}; }

Profile Profile::dense() {
  Profile p;
  p.kind = ProfileKind::Dense;
  p.name = "dense";
  p.guard_size = 1ull << 14;
  p.slack = 1ull << 13;
  return p;
}

std::optional<std::string> validate_profile(const Profile& p) {
  const uint64_t margin = kMaxDisplacement + kMaxAccess;
  if (p.slack > ~0ull - margin || p.guard_size < p.slack + margin)
    return fmt::format("guard < slack+{} (guard {}, slack {})", margin, p.guard_size, p.slack);
  if (p.slack < margin) return fmt::format("slack < {} (slack {})", margin, p.slack);
  if (p.rt_page < 8ull * p.rt_count)
    return fmt::format("rt_page < 8*rt_count ({} < {})", p.rt_page, 8ull * p.rt_count);
  if (p.rt_count != kRtCount) return fmt::format("rt_count != {}", kRtCount);
  if (p.rt_page != kRtPageSize) return fmt::format("rt_page != {}", kRtPageSize);
  if (p.sandbox_size != kSandboxSize) return "sandbox_size != 2^32";
  if (p.base_align != p.sandbox_size) return "base_align != sandbox_size";
  if (p.guard_size > ~0ull - 2 * kSandboxSize) return "guard leaves no room for a base";
  return std::nullopt;
}

namespace {

uint64_t parse_u64(std::string_view key, std::string_view s) {
  auto trim = [](std::string_view v) {
    while (!v.empty() && (v.front() == ' ' || v.front() == '\t')) v.remove_prefix(1);
    while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r'))
      v.remove_suffix(1);
    return v;
  };
  s = trim(s);
  uint64_t v = 0;
  int base = 10;
  if (s.starts_with("2^")) {
    unsigned e = 0;
    auto [end, ec] = std::from_chars(s.data() + 2, s.data() + s.size(), e);
    if (ec == std::errc() && end == s.data() + s.size() && e < 64) return 1ull << e;
    throw std::invalid_argument(fmt::format("bad value for {}: '{}'", key, s));
  }
  if (s.starts_with("0x") || s.starts_with("0X")) {
    s.remove_prefix(2);
    base = 16;
  }
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty())
    throw std::invalid_argument(fmt::format("bad value for {}: '{}'", key, s));
  return v;
}

}  // namespace

Profile parse_profile_config(std::string_view text) {
  Profile p;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(fmt::format("profile line {}: expected key=value", number));
    std::string key = line.substr(0, eq);
    std::erase_if(key, [](char c) { return c == ' ' || c == '\t'; });
    const std::string_view value = std::string_view(line).substr(eq + 1);
    if (key == "name") {
      std::string name(value);
      std::erase_if(name, [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
      p.name = name;
      p.kind = name == "dense" ? ProfileKind::Dense : ProfileKind::Sparse;
    } else if (key == "guard_size") {
      p.guard_size = parse_u64(key, value);
    } else if (key == "slack") {
      p.slack = parse_u64(key, value);
    } else if (key == "rt_page") {
      p.rt_page = parse_u64(key, value);
    } else {
      throw std::invalid_argument(fmt::format("profile line {}: unknown key '{}'", number, key));
    }
  }
  return p;
}

std::string format_profile_config(const Profile& p) {
  return fmt::format("name={}\nguard_size={}\nslack={}\nrt_page={}\n", p.name, p.guard_size,
                     p.slack, p.rt_page);
}

Profile resolve_profile(std::string_view selector) {
  if (selector == "sparse") return Profile::sparse();
  if (selector == "dense") return Profile::dense();
  if (selector.starts_with("file:")) {
    const auto bytes = read_file(std::string(selector.substr(5)));
    return parse_profile_config(std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                                 bytes.size()));
  }
  throw std::invalid_argument(fmt::format("unknown profile '{}'", selector));
}

uint64_t max_base(const Profile& p) {
  // 2^64 - 2^32 - guard, rounded down to the base alignment.
  const uint64_t limit = 0ull - kSandboxSize - p.guard_size;
  return limit & ~(p.base_align - 1);
}

std::optional<std::string> validate_layout(const MemoryLayout& l) {
  if (l.base % kSandboxSize != 0) return "base is not 4 GiB aligned";
  if (l.base < kSandboxSize) return "base < 2^32";
  if (l.base < l.profile.guard_size) return "base < guard_size";
  if (l.base > 0ull - kSandboxSize - l.profile.guard_size)
    return "base + 2^32 + guard exceeds the address space";
  if (l.code_end % kRtPageSize != 0) return "code_end is not page aligned";
  if (l.code_end < l.base + kRtPageSize) return "code_end < base + 4096";
  if (l.code_end > l.base + kSandboxSize) return "code_end > base + 2^32";
  return std::nullopt;
}

std::optional<std::string> validate_rt(const MemoryLayout& l, const RtTable& t) {
  const uint64_t lo = l.model_lo();
  const uint64_t last = l.base + kSandboxSize + (l.profile.guard_size - 1);
  for (unsigned i = 0; i < kRtCount; ++i) {
    const uint64_t a = t.rt[i];
    if (a >= lo && a <= last)
      return fmt::format("rt[{}] = {:#x} lies inside the sandbox or its guards", i, a);
    if (a % 4 != 0) return fmt::format("rt[{}] = {:#x} is not 4-aligned", i, a);
    for (unsigned j = 0; j < i; ++j)
      if (t.rt[j] == a) return fmt::format("rt[{}] duplicates rt[{}]", i, j);
  }
  return std::nullopt;
}

RegionInfo region_of(const MemoryLayout& l, uint64_t a) {
  const uint64_t guard = l.profile.guard_size;
  if (a < l.base) {
    if (l.base - a <= guard) return {Region::GuardLo, {}};
    return {Region::Outside, {}};
  }
  const uint64_t off = a - l.base;
  if (off < kRtPageSize) return {Region::RtPage, {true, false, false}};
  if (a < l.code_end) return {Region::Code, {true, false, true}};
  if (off < kSandboxSize) return {Region::Data, {true, true, false}};
  if (off - kSandboxSize < guard) return {Region::GuardHi, {}};
  return {Region::Outside, {}};
}

std::string_view region_name(Region r) {
  switch (r) {
    case Region::GuardLo: return "guard_lo";
    case Region::RtPage: return "rt_page";
    case Region::Code: return "code";
    case Region::Data: return "data";
    case Region::GuardHi: return "guard_hi";
    case Region::Outside: return "outside";
  }
  return "?";
}

std::optional<int> violated_conjunct(const MachineState& s, const MemoryLayout& l,
                                     const RtTable& rt) {
  const uint64_t base = l.base;
  const uint64_t slack = l.profile.slack;
  const auto in_slack_range = [&](uint64_t v) {
    return v >= base - slack && v < base + kSandboxSize + slack;
  };
  if (s.r[reg::kBase.index] != base) return 1;
  if (!in_slack_range(s.r[reg::kAddr.index])) return 2;
  if (!in_slack_range(s.sp)) return 3;
  if (s.pc < l.code_start() || s.pc >= l.code_end || s.pc % 4 != 0) return 4;
  const uint64_t link = s.r[reg::kLink.index];
  const bool link_in_sandbox = link >= base && link <= base + kSandboxSize;
  if (!link_in_sandbox && std::find(rt.rt.begin(), rt.rt.end(), link) == rt.rt.end()) return 5;
  return std::nullopt;
}

bool invariant_holds(const MachineState& s, const MemoryLayout& l, const RtTable& rt) {
  return !violated_conjunct(s, l, rt).has_value();
}

std::string_view reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::WritesBase: return "WritesBase";
    case RejectReason::WritesAddrReg: return "WritesAddrReg";
    case RejectReason::WritesLink: return "WritesLink";
    case RejectReason::WritesSp: return "WritesSp";
    case RejectReason::BadAddressBase: return "BadAddressBase";
    case RejectReason::BadGuardSource: return "BadGuardSource";
    case RejectReason::BadTrampolineForm: return "BadTrampolineForm";
    case RejectReason::BranchTargetOutOfSandbox: return "BranchTargetOutOfSandbox";
    case RejectReason::Undecodable: return "Undecodable";
  }
  return "?";
}

std::optional<Mutation> parse_mutation(std::string_view name) {
  if (name == "none" || name == "M0") return Mutation::None;
  if (name == "M1") return Mutation::AluWritesBase;
  if (name == "M2") return Mutation::LinkLoadAnyOffset;
  if (name == "M3") return Mutation::StoreAnyBase;
  if (name == "M4") return Mutation::GuardAnySource;
  if (name == "M5") return Mutation::DenseGuardShrunk;
  if (name == "M6") return Mutation::BrAnyRegister;
  return std::nullopt;
}

std::string_view mutation_name(Mutation m) {
  switch (m) {
    case Mutation::None: return "none";
    case Mutation::AluWritesBase: return "M1";
    case Mutation::LinkLoadAnyOffset: return "M2";
    case Mutation::StoreAnyBase: return "M3";
    case Mutation::GuardAnySource: return "M4";
    case Mutation::DenseGuardShrunk: return "M5";
    case Mutation::BrAnyRegister: return "M6";
  }
  return "?";
}

Profile mutate_profile(const Profile& base, Mutation m) {
  if (m != Mutation::DenseGuardShrunk) return base;
  Profile p = Profile::dense();
  p.name = "dense-shrunk";
  p.guard_size = p.slack;
  return p;
}

namespace {

std::optional<RejectReason> reserved_destination(Reg rd) {
  switch (rd.index) {
    case 21: return RejectReason::WritesBase;
    case 18: return RejectReason::WritesAddrReg;
    case 30: return RejectReason::WritesLink;
    case 31: return RejectReason::WritesSp;
    default: return std::nullopt;
  }
}

bool is_trampoline_load(const Instr& i, Mutation m) {
  if (i.op != Opcode::Load || i.size_log2 != 3 || i.mode != AddrMode::Offset ||
      i.rt != reg::kLink || i.rn != reg::kBase)
    return false;
  return m == Mutation::LinkLoadAnyOffset || i.imm == 0 || i.imm == 8 || i.imm == 16;
}

bool target_in_sandbox(uint64_t offset, int64_t units) {
  const int64_t target = static_cast<int64_t>(offset) + units * 4;
  return target >= 0 && target < static_cast<int64_t>(kSandboxSize);
}

}  // namespace

Verdict accepts(const std::optional<Instr>& instr, uint64_t offset, const Profile& /*profile*/,
                Mutation m) {
  if (!instr) return Verdict::rejected(RejectReason::Undecodable);
  const Instr& i = *instr;
  switch (i.op) {
    case Opcode::Sys:
      return Verdict::accept();
    case Opcode::AluReg:
    case Opcode::AluImm:
      if (auto r = reserved_destination(i.rd)) {
        if (m == Mutation::AluWritesBase && i.rd == reg::kBase) return Verdict::accept();
        return Verdict::rejected(*r);
      }
      return Verdict::accept();
    case Opcode::AddUxtw:
      if (i.rd == reg::kAddr || i.rd == reg::kLink || i.rd.is_sp()) {
        if (i.rn == reg::kBase || m == Mutation::GuardAnySource) return Verdict::accept();
        return Verdict::rejected(RejectReason::BadGuardSource);
      }
      if (i.rd == reg::kBase) return Verdict::rejected(RejectReason::WritesBase);
      return Verdict::accept();
    case Opcode::Load:
      if (is_trampoline_load(i, m)) return Verdict::accept();
      if (i.rt == reg::kLink && i.rn == reg::kBase)
        return Verdict::rejected(RejectReason::BadTrampolineForm);
      if (auto r = reserved_destination(i.rt)) return Verdict::rejected(*r);
      [[fallthrough]];
    case Opcode::Store: {
      const bool x18_base = i.mode == AddrMode::Base &&
                            (i.rn == reg::kAddr ||
                             (i.op == Opcode::Store && m == Mutation::StoreAnyBase));
      const bool sp_relative = i.mode != AddrMode::Base && i.rn.is_sp();
      if (x18_base || sp_relative) return Verdict::accept();
      return Verdict::rejected(RejectReason::BadAddressBase);
    }
    case Opcode::B:
    case Opcode::Bl:
    case Opcode::Cbz:
    case Opcode::Cbnz:
      if (target_in_sandbox(offset, i.imm)) return Verdict::accept();
      return Verdict::rejected(RejectReason::BranchTargetOutOfSandbox);
    case Opcode::Br:
      if (i.rn == reg::kAddr || i.rn == reg::kLink || m == Mutation::BrAnyRegister)
        return Verdict::accept();
      return Verdict::rejected(RejectReason::BadAddressBase);
  }
  return Verdict::rejected(RejectReason::Undecodable);
}

// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kReserved =
    reg_bit(18) | reg_bit(21) | reg_bit(30) | reg_bit(31);
constexpr uint32_t kPlainDest = kAllRegs & ~kReserved;
constexpr uint32_t kPlainData = kDataRegs & ~kReserved;

constexpr std::string_view kSizeNames[] = {"1", "2", "4", "8"};
constexpr std::string_view kModeNames[] = {"base", "offset", "pre", "post"};
constexpr std::string_view kFnNames[] = {"add", "sub", "and", "orr", "eor"};

}  // namespace

std::vector<std::string> class_families() {
  return {"sys",       "alu-reg",  "alu-imm",   "add-uxtw", "guard",   "load-x18", "load-sp",
          "load-rt",   "store-x18", "store-sp", "branch",   "cbranch", "br"};
}

std::vector<ClassSubject> class_subjects(Mutation m) {
  std::vector<ClassSubject> out;
  const uint32_t alu_dest = kPlainDest | (m == Mutation::AluWritesBase ? reg_bit(21) : 0);

  for (auto kind : {SysKind::Udf, SysKind::Nop}) {
    ClassSubject s;
    s.family = "sys";
    s.id = kind == SysKind::Udf ? "sys.udf" : "sys.nop";
    s.shape = kind == SysKind::Udf ? Instr::udf() : Instr::nop();
    out.push_back(s);
  }
  for (unsigned f = 0; f < 5; ++f) {
    ClassSubject s;
    s.family = "alu-reg";
    s.id = fmt::format("alu-reg.{}", kFnNames[f]);
    s.shape = Instr::alu_reg(static_cast<AluFn>(f), Reg(0), Reg(0), Reg(0));
    s.rd_mask = alu_dest;
    s.rn_mask = kAllRegs;
    s.rm_mask = kAllRegs;
    out.push_back(s);
  }
  for (unsigned f = 0; f < 2; ++f) {
    ClassSubject s;
    s.family = "alu-imm";
    s.id = fmt::format("alu-imm.{}", kFnNames[f]);
    s.shape = Instr::alu_imm(static_cast<AluFn>(f), Reg(0), Reg(0), 0);
    s.rd_mask = alu_dest;
    s.rn_mask = kAllRegs;
    s.imm_rule = ImmRule::Any;
    s.imm_bits = 12;
    out.push_back(s);
  }
  {
    ClassSubject s;
    s.family = "add-uxtw";
    s.id = "add-uxtw";
    s.shape = Instr::add_uxtw(Reg(0), Reg(0), Reg(0));
    s.rd_mask = kPlainDest;
    s.rn_mask = kAllRegs;
    s.rm_mask = kAllRegs;
    out.push_back(s);
  }
  {
    ClassSubject s;
    s.family = "guard";
    s.id = "guard";
    s.shape = Instr::add_uxtw(Reg(0), reg::kBase, Reg(0));
    s.rd_mask = reg_bit(18) | reg_bit(30) | reg_bit(31);
    s.rn_mask = m == Mutation::GuardAnySource ? kAllRegs : reg_bit(21);
    s.rm_mask = kAllRegs;
    out.push_back(s);
  }
  const auto memory_subjects = [&](Opcode op, const char* family_x18, const char* family_sp,
                                   uint32_t rt_mask) {
    for (unsigned sz = 0; sz < 4; ++sz) {
      ClassSubject s;
      s.family = family_x18;
      s.id = fmt::format("{}.{}", family_x18, kSizeNames[sz]);
      s.shape = op == Opcode::Load ? Instr::load(1u << sz, AddrMode::Base, Reg(0), reg::kAddr, 0)
                                   : Instr::store(1u << sz, AddrMode::Base, Reg(0), reg::kAddr, 0);
      s.rt_mask = rt_mask;
      s.rn_mask = op == Opcode::Store && m == Mutation::StoreAnyBase ? kAllRegs : reg_bit(18);
      out.push_back(s);
    }
    for (unsigned sz = 0; sz < 4; ++sz) {
      for (unsigned mode = 1; mode < 4; ++mode) {
        ClassSubject s;
        s.family = family_sp;
        s.id = fmt::format("{}.{}.{}", family_sp, kSizeNames[sz], kModeNames[mode]);
        const auto am = static_cast<AddrMode>(mode);
        s.shape = op == Opcode::Load ? Instr::load(1u << sz, am, Reg(0), reg::kSp, 0)
                                     : Instr::store(1u << sz, am, Reg(0), reg::kSp, 0);
        s.rt_mask = rt_mask;
        s.rn_mask = reg_bit(31);
        s.imm_rule = ImmRule::Any;
        s.imm_bits = 9;
        s.imm_signed = true;
        out.push_back(s);
      }
    }
  };
  memory_subjects(Opcode::Load, "load-x18", "load-sp", kPlainData);
  {
    ClassSubject s;
    s.family = "load-rt";
    s.id = "load-rt";
    s.shape = Instr::load(8, AddrMode::Offset, reg::kLink, reg::kBase, 0);
    s.rt_mask = reg_bit(30);
    s.rn_mask = reg_bit(21);
    s.imm_bits = 9;
    s.imm_signed = true;
    if (m == Mutation::LinkLoadAnyOffset) {
      s.imm_rule = ImmRule::Any;
    } else {
      s.imm_rule = ImmRule::OneOf;
      s.imm_values = {0, 8, 16};
    }
    out.push_back(s);
  }
  memory_subjects(Opcode::Store, "store-x18", "store-sp", kDataRegs);
  for (auto op : {Opcode::B, Opcode::Bl}) {
    ClassSubject s;
    s.family = "branch";
    s.id = op == Opcode::B ? "branch.b" : "branch.bl";
    s.shape = op == Opcode::B ? Instr::b(0) : Instr::bl(0);
    s.imm_rule = ImmRule::InSandbox;
    s.imm_bits = 26;
    s.imm_signed = true;
    out.push_back(s);
  }
  for (auto op : {Opcode::Cbz, Opcode::Cbnz}) {
    ClassSubject s;
    s.family = "cbranch";
    s.id = op == Opcode::Cbz ? "cbranch.cbz" : "cbranch.cbnz";
    s.shape = op == Opcode::Cbz ? Instr::cbz(Reg(0), 0) : Instr::cbnz(Reg(0), 0);
    s.rt_mask = kDataRegs;
    s.imm_rule = ImmRule::InSandbox;
    s.imm_bits = 19;
    s.imm_signed = true;
    out.push_back(s);
  }
  {
    ClassSubject s;
    s.family = "br";
    s.id = "br";
    s.shape = Instr::br(Reg(0));
    s.rn_mask = m == Mutation::BrAnyRegister ? kAllRegs : reg_bit(18) | reg_bit(30);
    out.push_back(s);
  }
  return out;
}

bool matches(const ClassSubject& s, const Instr& i, uint64_t offset) {
  const Instr& k = s.shape;
  if (i.op != k.op || i.sys != k.sys || i.fn != k.fn || i.mode != k.mode ||
      i.size_log2 != k.size_log2)
    return false;
  const auto allowed = [](uint32_t mask, Reg r) { return (mask >> r.index) & 1u; };
  if (!allowed(s.rd_mask, i.rd) || !allowed(s.rn_mask, i.rn) || !allowed(s.rm_mask, i.rm) ||
      !allowed(s.rt_mask, i.rt))
    return false;
  switch (s.imm_rule) {
    case ImmRule::Fixed: return i.imm == k.imm;
    case ImmRule::Any: return true;
    case ImmRule::OneOf:
      return std::find(s.imm_values.begin(), s.imm_values.end(), i.imm) != s.imm_values.end();
    case ImmRule::InSandbox: return target_in_sandbox(offset, i.imm);
  }
  return false;
}

uint64_t subject_population(const ClassSubject& s) {
  uint64_t n = static_cast<uint64_t>(std::popcount(s.rd_mask)) * std::popcount(s.rn_mask) *
               std::popcount(s.rm_mask) * std::popcount(s.rt_mask);
  if (s.imm_rule == ImmRule::OneOf) n *= s.imm_values.size();
  if (s.imm_rule == ImmRule::Any || s.imm_rule == ImmRule::InSandbox) n <<= s.imm_bits;
  return n;
}

Instr draw_instr(const ClassSubject& s, std::mt19937_64& rng) {
  const auto pick = [&](uint32_t mask) {
    auto k = rng() % static_cast<uint64_t>(std::popcount(mask));
    for (unsigned i = 0;; ++i)
      if (((mask >> i) & 1u) && k-- == 0) return Reg(i);
  };
  Instr i = s.shape;
  i.rd = pick(s.rd_mask);
  i.rn = pick(s.rn_mask);
  i.rm = pick(s.rm_mask);
  i.rt = pick(s.rt_mask);
  if (s.imm_rule == ImmRule::OneOf) {
    i.imm = s.imm_values[rng() % s.imm_values.size()];
  } else if (s.imm_rule != ImmRule::Fixed) {
    const int64_t n = int64_t{1} << s.imm_bits;
    i.imm = static_cast<int64_t>(rng() % static_cast<uint64_t>(n));
    if (s.imm_signed) i.imm -= n / 2;
  }
  return i;
}

}  // namespace sfi
