#include "sfi/rewriter.hpp"

#include <map>
#include <set>

#include <fmt/format.h>

#include "sfi/policy.hpp"

namespace sfi {

RewriteError::RewriteError(int line, const std::string& message)
    : std::runtime_error(line > 0 ? fmt::format("line {}: {}", line, message) : message), line_(line) {}

namespace {

constexpr Reg kX17 = reg::kScratch;
constexpr Reg kX18 = reg::kAddr;
constexpr Reg kX21 = reg::kBase;
constexpr Reg kX30 = reg::kLink;
constexpr Reg kSp = reg::kSp;

bool whitelisted(const Instr& i) {
  // Direct branches keep symbolic targets inside the program, so only the
  // offset-independent rules matter here.
  if (i.is_direct_branch()) return true;
  return accepts(i, kCensusOffset, Profile::sparse()).accepted();
}

Instr guard(Reg rd, Reg from) { return Instr::add_uxtw(rd, kX21, from); }

/// x17 := rn + imm, with the sign folded into the ALU function.
Instr fold(Reg rn, int64_t imm) {
  return imm < 0 ? Instr::alu_imm(AluFn::Sub, kX17, rn, static_cast<uint32_t>(-imm))
                 : Instr::alu_imm(AluFn::Add, kX17, rn, static_cast<uint32_t>(imm));
}

Instr access_via_x18(const Instr& i) {
  Instr out = i;
  out.mode = AddrMode::Base;
  out.rn = kX18;
  out.imm = 0;
  return out;
}

/// Registers an instruction reads as values (not as a guarded address).
std::vector<Reg> data_reads(const Instr& i) {
  switch (i.op) {
    case Opcode::AluReg: return {i.rn, i.rm};
    case Opcode::AluImm: return {i.rn};
    case Opcode::AddUxtw: return i.rn == kX21 ? std::vector<Reg>{i.rm} : std::vector<Reg>{i.rn, i.rm};
    case Opcode::Store: return {i.rt};
    case Opcode::Cbz:
    case Opcode::Cbnz: return {i.rt};
    default: return {};
  }
}

std::optional<Reg> written(const Instr& i) {
  switch (i.op) {
    case Opcode::AluReg:
    case Opcode::AluImm:
    case Opcode::AddUxtw: return i.rd;
    case Opcode::Load: return i.rt;
    case Opcode::Bl: return kX30;
    default: return std::nullopt;
  }
}

bool writes_back(const Instr& i) {
  return i.is_memory() && (i.mode == AddrMode::Pre || i.mode == AddrMode::Post);
}

bool mentions(const Instr& i, Reg r) {
  const auto reads = data_reads(i);
  if (std::find(reads.begin(), reads.end(), r) != reads.end()) return true;
  if (written(i) == r) return true;
  if ((i.is_memory() || i.op == Opcode::Br) && i.rn == r) return true;
  return false;
}

class Rewriter {
 public:
  explicit Rewriter(const AsmProgram& in) : in_(in) {}

  AsmProgram run() {
    name_numeric_targets();
    bool expands = false;
    for (const auto& item : in_.items)
      if (const auto* s = std::get_if<Statement>(&item.content))
        if (const auto* a = std::get_if<AsmInstr>(s); a && !whitelisted(a->instr)) expands = true;

    for (size_t k = 0; k < in_.items.size(); ++k) {
      const AsmItem& item = in_.items[k];
      line_ = item.line;
      if (const auto it = new_labels_.find(k); it != new_labels_.end()) emit_label(it->second);
      if (const auto* label = std::get_if<std::string>(&item.content)) {
        emit_label(*label);
        continue;
      }
      const auto& stmt = std::get<Statement>(item.content);
      if (const auto* raw = std::get_if<RawWord>(&stmt)) {
        if (!accepts(decode(raw->value), kCensusOffset, Profile::sparse()).accepted())
          fail(fmt::format(".word 0x{:08X} is not whitelisted and cannot be rewritten", raw->value));
        out_.items.push_back(item);
        continue;
      }
      AsmInstr a = std::get<AsmInstr>(stmt);
      if (const auto t = targets_.find(k); t != targets_.end()) a.target = t->second;
      if (whitelisted(a.instr)) {
        if (expands) check_reserved_data(a.instr);
        out_.items.push_back({Statement{a}, item.line});
        continue;
      }
      expand(a.instr);
    }
    try {
      assemble_words(out_);
    } catch (const AsmError& e) {
      throw RewriteError(e.line(), e.message());
    }
    return std::move(out_);
  }

 private:
  [[noreturn]] void fail(const std::string& message) const { throw RewriteError(line_, message); }

  void emit(const Instr& i) { out_.items.push_back({Statement{AsmInstr{i, std::nullopt}}, line_}); }
  void emit_label(const std::string& name) { out_.items.push_back({name, line_}); }

  /// Branches written with numeric displacements get a label at their target.
  void name_numeric_targets() {
    std::set<std::string> taken;
    std::vector<size_t> item_of_word;
    for (size_t k = 0; k < in_.items.size(); ++k) {
      if (const auto* label = std::get_if<std::string>(&in_.items[k].content))
        taken.insert(*label);
      else
        item_of_word.push_back(k);
    }
    unsigned next = 0;
    std::map<size_t, std::string> by_target;
    for (size_t w = 0; w < item_of_word.size(); ++w) {
      const size_t k = item_of_word[w];
      const auto* a = std::get_if<AsmInstr>(&std::get<Statement>(in_.items[k].content));
      if (!a || !a->instr.is_direct_branch() || a->target) continue;
      const int64_t to = static_cast<int64_t>(w) + a->instr.imm;
      if (to < 0 || to >= static_cast<int64_t>(item_of_word.size()))
        throw RewriteError(in_.items[k].line, "branch target lies outside the program");
      const size_t target_item = item_of_word[static_cast<size_t>(to)];
      auto [it, fresh] = by_target.try_emplace(target_item);
      if (fresh) {
        std::string name;
        do name = fmt::format("__rw_{}", next++);
        while (taken.count(name));
        it->second = name;
      }
      targets_[k] = it->second;
    }
    for (auto& [item, name] : by_target) new_labels_[item] = name;
  }

  void check_reserved_data(const Instr& i) const {
    const auto reads = data_reads(i);
    for (Reg r : {kX17, kX18})
      if (std::find(reads.begin(), reads.end(), r) != reads.end())
        fail(fmt::format("'{}' uses reserved register {} as data", disassemble(i), register_name(r)));
    if (written(i) == kX17)
      fail(fmt::format("'{}' writes the rewriter's scratch register x17", disassemble(i)));
    if (i.is_memory() && i.rn == kX17)
      fail(fmt::format("'{}' addresses through the scratch register x17", disassemble(i)));
  }

  void expand(const Instr& i) {
    const std::string text = disassemble(i);
    for (Reg r : {kX21, kX30, kX18})
      if (written(i) == r || (writes_back(i) && i.rn == r))
        fail(fmt::format("'{}' writes reserved register {}", text, register_name(r)));
    for (Reg r : {kX17, kX18})
      if (mentions(i, r)) fail(fmt::format("'{}' uses reserved register {}", text, register_name(r)));

    switch (i.op) {
      case Opcode::AluReg:
      case Opcode::AluImm:
      case Opcode::AddUxtw:
        if (i.rd != kSp) break;
        {
          Instr scratch = i;
          scratch.rd = kX17;
          emit(scratch);
          emit(guard(kSp, kX17));
        }
        return;

      case Opcode::Load:
      case Opcode::Store:
        expand_access(i);
        return;

      case Opcode::Br:
        emit(guard(kX18, i.rn));
        emit(Instr::br(kX18));
        return;

      default:
        break;
    }
    fail(fmt::format("no rewrite for '{}'", text));
  }

  void expand_access(const Instr& i) {
    if (i.rn == kSp) {
      // sp is only accepted with an immediate form.
      if (i.mode == AddrMode::Base) {
        Instr out = i;
        out.mode = AddrMode::Offset;
        emit(out);
        return;
      }
      fail(fmt::format("no rewrite for '{}'", disassemble(i)));
    }
    switch (i.mode) {
      case AddrMode::Base:
        emit(guard(kX18, i.rn));
        emit(access_via_x18(i));
        return;
      case AddrMode::Offset:
        if (i.imm == 0) {
          emit(guard(kX18, i.rn));
        } else {
          emit(fold(i.rn, i.imm));
          emit(guard(kX18, kX17));
        }
        emit(access_via_x18(i));
        return;
      case AddrMode::Pre:
        emit(fold(i.rn, i.imm));
        emit(guard(kX18, kX17));
        emit(access_via_x18(i));
        emit(Instr::alu_imm(AluFn::Add, i.rn, kX17, 0));
        return;
      case AddrMode::Post:
        emit(guard(kX18, i.rn));
        emit(fold(i.rn, i.imm));
        emit(access_via_x18(i));
        emit(Instr::alu_imm(AluFn::Add, i.rn, kX17, 0));
        return;
    }
  }

  const AsmProgram& in_;
  AsmProgram out_;
  int line_ = 0;
  std::map<size_t, std::string> new_labels_;  // item index -> label inserted before it
  std::map<size_t, std::string> targets_;     // branch item index -> its new label
};

}  // namespace

AsmProgram rewrite(const AsmProgram& program) { return Rewriter(program).run(); }

}  // namespace sfi
