#include "sfi/sandbox.hpp"

#include <cstdio>
#include <cstdlib>

#include <fmt/format.h>
#include <json.hpp>

#include "sfi/verifier.hpp"

namespace sfi {

uint8_t SandboxMemory::read(uint64_t addr) const {
  const uint64_t off = addr - base_;
  const auto it = chunks_.find(off / kChunk);
  return it == chunks_.end() ? 0 : (*it->second)[off % kChunk];
}

void SandboxMemory::write(uint64_t addr, uint8_t value) {
  if (!contains(addr)) throw std::out_of_range(fmt::format("write outside the sandbox at {:#x}", addr));
  const uint64_t off = addr - base_;
  auto& chunk = chunks_[off / kChunk];
  if (!chunk) chunk = std::make_unique<std::array<uint8_t, kChunk>>();
  (*chunk)[off % kChunk] = value;
}

uint64_t SandboxMemory::read_le(uint64_t addr, unsigned bytes) const {
  uint64_t v = 0;
  for (unsigned k = 0; k < bytes; ++k) v |= uint64_t{read(addr + k)} << (8 * k);
  return v;
}

void SandboxMemory::write_le(uint64_t addr, uint64_t value, unsigned bytes) {
  for (unsigned k = 0; k < bytes; ++k) write(addr + k, static_cast<uint8_t>(value >> (8 * k)));
}

std::vector<uint8_t> SandboxMemory::read_range(uint64_t addr, uint64_t len) const {
  std::vector<uint8_t> out;
  out.reserve(len);
  for (uint64_t k = 0; k < len; ++k) out.push_back(read(addr + k));
  return out;
}

std::string ExitStatus::describe() const {
  switch (kind) {
    case Kind::Exit: return fmt::format("Exit{{{}}}", code);
    case Kind::StepLimit: return "StepLimit";
    case Kind::Fault:
      return addr ? fmt::format("Fault{{{}, pc={:#x}, addr={:#x}}}", fault_name(fault), pc, *addr)
                  : fmt::format("Fault{{{}, pc={:#x}}}", fault_name(fault), pc);
  }
  return "?";
}

RtTable Sandbox::default_rt() {
  return {{0xFFFF800000000000ull, 0xFFFF800000001000ull, 0xFFFF800000002000ull}};
}

Sandbox::Sandbox(const MemoryLayout& layout, const RtTable& rt) : layout_(layout), rt_(rt), mem_(layout.base) {}

Sandbox Sandbox::boot(std::span<const uint8_t> image_bytes, const Profile& profile, uint64_t base,
                      std::optional<RtTable> rt) {
  return boot(parse_image(image_bytes), profile, base, rt);
}

Sandbox Sandbox::boot(const Image& image, const Profile& profile, uint64_t base, std::optional<RtTable> rt) {
  const VerifyReport report = verify_image(image, profile);
  if (!report.ok())
    throw BootError(fmt::format("image rejected by the verifier ({} violations, first at offset {:#x}: {})",
                                report.violations.size(), report.violations[0].offset,
                                report.violations[0].reason_text()));
  const uint64_t code_bytes = 4 * static_cast<uint64_t>(image.code.size());
  MemoryLayout layout{base, 0, profile};
  layout.code_end = base + kRtPageSize + (code_bytes + kRtPageSize - 1) / kRtPageSize * kRtPageSize;
  if (auto e = validate_layout(layout)) throw BootError("bad base: " + *e);
  const RtTable table = rt.value_or(default_rt());
  if (auto e = validate_rt(layout, table)) throw BootError("bad runtime table: " + *e);

  Sandbox sb(layout, table);
  for (unsigned i = 0; i < kRtCount; ++i) sb.mem_.write_le(base + 8 * i, table.rt[i], 8);
  for (size_t k = 0; k < image.code.size(); ++k) sb.mem_.write_le(layout.code_start() + 4 * k, image.code[k], 4);
  sb.state_.r[reg::kBase.index] = base;
  sb.state_.r[reg::kAddr.index] = base;
  sb.state_.r[reg::kLink.index] = base;
  sb.state_.sp = base + kSandboxSize;
  sb.state_.pc = layout.code_start() + image.entry;
  return sb;
}

void Sandbox::monitor(const StepOutcome& out) const {
  if (out.kind == StepOutcome::Kind::Fault && out.fault != FaultKind::BadPc) return;
  for (const auto& e : out.events) {
    if (!mem_.contains(e.addr)) {
      std::fprintf(stderr, "safety monitor: guest %s at %#llx outside the sandbox succeeded\n",
                   e.kind == AccessKind::ReadByte ? "read" : "write", static_cast<unsigned long long>(e.addr));
      std::abort();
    }
  }
}

std::optional<ExitStatus> Sandbox::runtime_call(unsigned index, uint64_t steps) {
  RuntimeRecord rec;
  if (index == 0) {
    rec.kind = RuntimeRecord::Kind::Exit;
    rec.code = state_.r[0] & 0xFFFFFFFFull;
    trace_.push_back(rec);
    ExitStatus st;
    st.kind = ExitStatus::Kind::Exit;
    st.code = static_cast<uint32_t>(rec.code);
    st.steps = steps;
    return st;
  }
  const uint64_t start = layout_.base + (state_.r[0] & 0xFFFFFFFFull);
  const uint64_t len = std::min(state_.r[1], layout_.sandbox_end() - start);
  rec.addr = start;
  if (index == 1) {
    rec.kind = RuntimeRecord::Kind::Write;
    rec.bytes = mem_.read_range(start, len);
  } else {
    rec.kind = RuntimeRecord::Kind::Read;
    for (uint64_t k = 0; k < len && input_pos_ < input_.size(); ++k) {
      const uint8_t b = input_[input_pos_++];
      rec.bytes.push_back(b);
      if (start + k >= layout_.code_end) mem_.write(start + k, b);
    }
  }
  state_.r[0] = rec.bytes.size();
  rec.resume = layout_.base + (state_.r[9] & 0xFFFFFFFFull);
  trace_.push_back(rec);

  const uint64_t to = rec.resume;
  if (to % 4 != 0 || to < layout_.code_start() || to >= layout_.code_end) {
    ExitStatus st;
    st.kind = ExitStatus::Kind::Fault;
    st.fault = FaultKind::BadPc;
    st.pc = state_.pc;
    st.addr = to;
    st.steps = steps;
    return st;
  }
  state_.pc = to;
  return std::nullopt;
}

ExitStatus Sandbox::run(uint64_t max_steps) {
  const ByteReader reader = [this](uint64_t a) { return mem_.read(a); };
  for (uint64_t steps = 0; steps < max_steps;) {
    const uint64_t pc = state_.pc;
    const auto instr = decode(static_cast<uint32_t>(mem_.read_le(pc, 4)));
    ++steps;
    if (!instr) {
      ExitStatus st;
      st.kind = ExitStatus::Kind::Fault;
      st.fault = FaultKind::Undefined;
      st.pc = pc;
      st.steps = steps;
      return st;
    }
    const StepOutcome out = step(state_, layout_, rt_, reader, *instr);
    monitor(out);
    switch (out.kind) {
      case StepOutcome::Kind::Next:
        for (const auto& [addr, byte] : out.writes) mem_.write(addr, byte);
        state_ = out.state;
        break;
      case StepOutcome::Kind::RuntimeCall:
        state_ = out.state;
        if (auto done = runtime_call(static_cast<unsigned>(out.rt_index), steps)) return *done;
        break;
      case StepOutcome::Kind::Fault: {
        ExitStatus st;
        st.kind = ExitStatus::Kind::Fault;
        st.fault = out.fault;
        st.pc = pc;
        st.steps = steps;
        if (out.fault == FaultKind::BadPc) {
          st.addr = out.state.pc;
        } else if (out.fault != FaultKind::Undefined) {
          for (const auto& e : out.events) {
            const bool bad = out.fault == FaultKind::MemUnmapped ? !mem_.contains(e.addr)
                                                                 : e.addr < layout_.code_end;
            if (bad) {
              st.addr = e.addr;
              break;
            }
          }
        }
        return st;
      }
    }
  }
  ExitStatus st;
  st.kind = ExitStatus::Kind::StepLimit;
  st.steps = max_steps;
  return st;
}

std::vector<uint8_t> Sandbox::output() const {
  std::vector<uint8_t> out;
  for (const auto& r : trace_)
    if (r.kind == RuntimeRecord::Kind::Write) out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  return out;
}

namespace {

std::string hex_bytes(const std::vector<uint8_t>& bytes) {
  std::string s;
  for (uint8_t b : bytes) s += fmt::format("{:02x}", b);
  return s;
}

}  // namespace

std::string trace_json_lines(const std::vector<RuntimeRecord>& trace) {
  std::string out;
  for (const auto& r : trace) {
    nlohmann::ordered_json j;
    switch (r.kind) {
      case RuntimeRecord::Kind::Exit:
        j["call"] = "exit";
        j["code"] = r.code;
        break;
      case RuntimeRecord::Kind::Write:
      case RuntimeRecord::Kind::Read:
        j["call"] = r.kind == RuntimeRecord::Kind::Write ? "write" : "read";
        j["addr"] = fmt::format("{:#x}", r.addr);
        j["len"] = r.bytes.size();
        j["bytes"] = hex_bytes(r.bytes);
        j["resume"] = fmt::format("{:#x}", r.resume);
        break;
    }
    out += j.dump() + "\n";
  }
  return out;
}

std::string exit_json(const ExitStatus& s) {
  nlohmann::ordered_json j;
  switch (s.kind) {
    case ExitStatus::Kind::Exit:
      j["status"] = "exit";
      j["code"] = s.code;
      break;
    case ExitStatus::Kind::StepLimit: j["status"] = "step-limit"; break;
    case ExitStatus::Kind::Fault:
      j["status"] = "fault";
      j["fault"] = fault_name(s.fault);
      j["pc"] = fmt::format("{:#x}", s.pc);
      if (s.addr) j["addr"] = fmt::format("{:#x}", *s.addr);
      break;
  }
  j["steps"] = s.steps;
  return j.dump() + "\n";
}

}  // namespace sfi
