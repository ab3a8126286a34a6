#include "sfi/asm.hpp"

#include <cctype>
#include <charconv>
#include <map>

#include <fmt/format.h>

namespace sfi {

AsmError::AsmError(int line, int column, const std::string& message)
    : std::runtime_error(line > 0 ? fmt::format("line {}, column {}: {}", line, column, message)
                                  : fmt::format("column {}: {}", column, message)),
      message_(message),
      line_(line),
      column_(column) {}

namespace {

enum class Tok { Ident, Number, Hash, LBracket, RBracket, Comma, Bang, Colon, Dot, Plus, Minus, End };

struct Token {
  Tok kind = Tok::End;
  std::string_view text;
  int column = 0;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> out;
  size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    if (c == ';') break;
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const int column = static_cast<int>(i) + 1;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i + 1;
      while (j < line.size() &&
             (std::isalnum(static_cast<unsigned char>(line[j])) || line[j] == '_'))
        ++j;
      out.push_back({Tok::Ident, line.substr(i, j - i), column});
      i = j;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i + 1;
      while (j < line.size() && std::isalnum(static_cast<unsigned char>(line[j]))) ++j;
      out.push_back({Tok::Number, line.substr(i, j - i), column});
      i = j;
      continue;
    }
    Tok kind;
    switch (c) {
      case '#': kind = Tok::Hash; break;
      case '[': kind = Tok::LBracket; break;
      case ']': kind = Tok::RBracket; break;
      case ',': kind = Tok::Comma; break;
      case '!': kind = Tok::Bang; break;
      case ':': kind = Tok::Colon; break;
      case '.': kind = Tok::Dot; break;
      case '+': kind = Tok::Plus; break;
      case '-': kind = Tok::Minus; break;
      default: throw AsmError(0, column, fmt::format("unexpected character '{}'", c));
    }
    out.push_back({kind, line.substr(i, 1), column});
    ++i;
  }
  out.push_back({Tok::End, {}, static_cast<int>(line.size()) + 1});
  return out;
}

class LineParser {
 public:
  explicit LineParser(std::string_view text) : tokens_(tokenize(text)) {}

  AsmLine parse() {
    AsmLine line;
    if (peek().kind == Tok::Ident && peek(1).kind == Tok::Colon) {
      line.label = std::string(next().text);
      next();
    }
    if (peek().kind == Tok::End) return line;
    if (peek().kind == Tok::Dot) {
      next();
      const Token& d = expect(Tok::Ident, "directive name");
      if (d.text != "word") fail(d, fmt::format("unknown directive .{}", d.text));
      const Token& n = peek();
      const int64_t v = number();
      if (v < 0 || v > 0xFFFFFFFFll) fail(n, "word value out of range");
      line.statement = RawWord{static_cast<uint32_t>(v)};
    } else {
      line.statement = instruction();
    }
    if (peek().kind != Tok::End) fail(peek(), "trailing tokens");
    return line;
  }

 private:
  const Token& peek(size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  const Token& next() {
    const Token& t = tokens_[pos_];
    if (pos_ + 1 < tokens_.size()) ++pos_;
    return t;
  }
  [[noreturn]] static void fail(const Token& t, const std::string& msg) {
    throw AsmError(0, t.column, msg);
  }
  const Token& expect(Tok kind, std::string_view what) {
    if (peek().kind != kind) fail(peek(), fmt::format("expected {}", what));
    return next();
  }
  void comma() { expect(Tok::Comma, "','"); }

  int64_t number() {
    bool negative = false;
    if (peek().kind == Tok::Minus) {
      next();
      negative = true;
    }
    const Token& t = expect(Tok::Number, "number");
    std::string_view s = t.text;
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
      s.remove_prefix(2);
      base = 16;
    }
    uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || end != s.data() + s.size() || v > (1ull << 40))
      fail(t, fmt::format("bad number '{}'", t.text));
    return negative ? -static_cast<int64_t>(v) : static_cast<int64_t>(v);
  }

  int64_t immediate() {
    expect(Tok::Hash, "'#'");
    return number();
  }

  // xN (N <= 30) or sp.
  Reg xreg(bool allow_sp = true) {
    const Token& t = expect(Tok::Ident, "register");
    if (t.text == "sp") {
      if (!allow_sp) fail(t, "sp is not allowed here");
      return reg::kSp;
    }
    return numbered(t, 'x');
  }

  Reg wreg() {
    const Token& t = expect(Tok::Ident, "32-bit register");
    if (t.text == "wsp") return reg::kSp;
    return numbered(t, 'w');
  }

  static Reg numbered(const Token& t, char prefix) {
    const std::string_view s = t.text;
    unsigned n = 0;
    if (s.size() >= 2 && s[0] == prefix) {
      const auto [end, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), n);
      if (ec == std::errc() && end == s.data() + s.size() && n <= 30 &&
          (s.size() == 2 || s[1] != '0'))
        return Reg(n);
    }
    fail(t, fmt::format("bad register '{}'", s));
  }

  // label or .+N / .-N (bytes, multiple of 4). Fills imm in units of 4.
  void branch_target(AsmInstr& out) {
    if (peek().kind == Tok::Ident) {
      out.target = std::string(next().text);
      return;
    }
    const Token& dot = expect(Tok::Dot, "branch target");
    bool negative = false;
    if (peek().kind == Tok::Minus) {
      negative = true;
    } else if (peek().kind != Tok::Plus) {
      fail(peek(), "expected '+' or '-'");
    }
    next();
    const int64_t bytes = number();
    if (bytes % 4 != 0) fail(dot, "branch displacement is not a multiple of 4");
    out.instr.imm = (negative ? -bytes : bytes) / 4;
  }

  static void check(const Token& at, const Instr& i) {
    if (!is_encodable(i)) {
      try {
        (void)encode(i);
      } catch (const std::invalid_argument& e) {
        fail(at, e.what());
      }
    }
  }

  AsmInstr instruction() {
    const Token& m = expect(Tok::Ident, "mnemonic");
    const std::string_view name = m.text;
    AsmInstr out;
    Instr& i = out.instr;

    static const std::map<std::string_view, AluFn> kAlu = {
        {"add", AluFn::Add}, {"sub", AluFn::Sub}, {"and", AluFn::And},
        {"orr", AluFn::Orr}, {"eor", AluFn::Xor}};
    static const std::map<std::string_view, std::pair<Opcode, unsigned>> kMem = {
        {"ldrb", {Opcode::Load, 1}},  {"ldrh", {Opcode::Load, 2}},
        {"ldrw", {Opcode::Load, 4}},  {"ldr", {Opcode::Load, 8}},
        {"strb", {Opcode::Store, 1}}, {"strh", {Opcode::Store, 2}},
        {"strw", {Opcode::Store, 4}}, {"str", {Opcode::Store, 8}}};

    if (name == "udf") {
      i = Instr::udf();
    } else if (name == "nop") {
      i = Instr::nop();
    } else if (auto alu = kAlu.find(name); alu != kAlu.end()) {
      const Reg rd = xreg();
      comma();
      const Reg rn = xreg();
      comma();
      if (peek().kind == Tok::Hash) {
        const Token& at = peek();
        const int64_t imm = immediate();
        if (alu->second != AluFn::Add && alu->second != AluFn::Sub)
          fail(m, "only add and sub take an immediate");
        if (imm < 0 || imm > kImm12Max) fail(at, "imm12 out of range");
        i = Instr::alu_imm(alu->second, rd, rn, static_cast<uint32_t>(imm));
      } else if (peek().kind == Tok::Ident && peek().text.starts_with('w')) {
        if (alu->second != AluFn::Add) fail(m, "only add supports uxtw");
        const Reg rm = wreg();
        comma();
        const Token& ext = expect(Tok::Ident, "uxtw");
        if (ext.text != "uxtw") fail(ext, "expected uxtw");
        i = Instr::add_uxtw(rd, rn, rm);
      } else {
        i = Instr::alu_reg(alu->second, rd, rn, xreg());
      }
    } else if (name == "mov") {
      const Reg rd = xreg();
      comma();
      i = Instr::alu_imm(AluFn::Add, rd, xreg(), 0);
    } else if (name == "guard") {
      const Reg rd = xreg();
      comma();
      i = Instr::add_uxtw(rd, reg::kBase, wreg());
    } else if (auto mem = kMem.find(name); mem != kMem.end()) {
      const Reg rt = xreg(false);
      comma();
      expect(Tok::LBracket, "'['");
      const Reg rn = xreg();
      AddrMode mode = AddrMode::Base;
      int64_t imm = 0;
      const Token* imm_at = nullptr;
      if (peek().kind == Tok::Comma) {
        next();
        imm_at = &peek();
        imm = immediate();
        expect(Tok::RBracket, "']'");
        mode = AddrMode::Offset;
        if (peek().kind == Tok::Bang) {
          next();
          mode = AddrMode::Pre;
        }
      } else {
        expect(Tok::RBracket, "']'");
        if (peek().kind == Tok::Comma) {
          next();
          imm_at = &peek();
          imm = immediate();
          mode = AddrMode::Post;
        }
      }
      if (imm_at && (imm < kSimm9Min || imm > kSimm9Max)) fail(*imm_at, "simm9 out of range");
      i = mem->second.first == Opcode::Load
              ? Instr::load(mem->second.second, mode, rt, rn, static_cast<int32_t>(imm))
              : Instr::store(mem->second.second, mode, rt, rn, static_cast<int32_t>(imm));
    } else if (name == "b" || name == "bl") {
      i = name == "b" ? Instr::b(0) : Instr::bl(0);
      branch_target(out);
    } else if (name == "cbz" || name == "cbnz") {
      const Reg rt = xreg(false);
      comma();
      i = name == "cbz" ? Instr::cbz(rt, 0) : Instr::cbnz(rt, 0);
      branch_target(out);
    } else if (name == "br") {
      i = Instr::br(xreg());
    } else if (name == "ret") {
      i = Instr::br(reg::kLink);
    } else {
      fail(m, fmt::format("unknown mnemonic '{}'", name));
    }
    check(m, i);
    return out;
  }

  std::vector<Token> tokens_;
  size_t pos_ = 0;
};

std::string with_label(const AsmInstr& a) {
  if (!a.target) return disassemble(a.instr);
  const Instr& i = a.instr;
  switch (i.op) {
    case Opcode::B: return "b " + *a.target;
    case Opcode::Bl: return "bl " + *a.target;
    case Opcode::Cbz: return fmt::format("cbz {}, {}", register_name(i.rt), *a.target);
    case Opcode::Cbnz: return fmt::format("cbnz {}, {}", register_name(i.rt), *a.target);
    default: return disassemble(i);
  }
}

bool fits_branch(const Instr& i, int64_t units) {
  if (i.op == Opcode::B || i.op == Opcode::Bl) return units >= kSimm26Min && units <= kSimm26Max;
  return units >= kSimm19Min && units <= kSimm19Max;
}

}  // namespace

AsmLine parse_line(std::string_view text) { return LineParser(text).parse(); }

AsmProgram parse_program(std::string_view source) {
  AsmProgram program;
  int number = 0;
  while (!source.empty()) {
    ++number;
    const size_t nl = source.find('\n');
    std::string_view line = source.substr(0, nl);
    source = nl == std::string_view::npos ? std::string_view{} : source.substr(nl + 1);
    AsmLine parsed;
    try {
      parsed = parse_line(line);
    } catch (const AsmError& e) {
      throw AsmError(number, e.column(), e.message());
    }
    if (parsed.label) program.items.push_back({*parsed.label, number});
    if (parsed.statement) program.items.push_back({*parsed.statement, number});
  }
  return program;
}

std::string format_program(const AsmProgram& program) {
  std::string out;
  for (const auto& item : program.items) {
    if (const auto* label = std::get_if<std::string>(&item.content)) {
      out += *label + ":\n";
      continue;
    }
    const auto& stmt = std::get<Statement>(item.content);
    if (const auto* raw = std::get_if<RawWord>(&stmt))
      out += fmt::format("    .word 0x{:08X}\n", raw->value);
    else
      out += "    " + with_label(std::get<AsmInstr>(stmt)) + "\n";
  }
  return out;
}

namespace {

std::map<std::string, uint32_t> label_offsets(const AsmProgram& program) {
  std::map<std::string, uint32_t> labels;
  uint32_t offset = 0;
  for (const auto& item : program.items) {
    if (const auto* label = std::get_if<std::string>(&item.content)) {
      if (!labels.emplace(*label, offset).second)
        throw AsmError(item.line, 1, fmt::format("duplicate label '{}'", *label));
    } else {
      offset += 4;
    }
  }
  return labels;
}

}  // namespace

std::vector<uint32_t> assemble_words(const AsmProgram& program) {
  const auto labels = label_offsets(program);
  std::vector<uint32_t> words;
  for (const auto& item : program.items) {
    const auto* stmt = std::get_if<Statement>(&item.content);
    if (!stmt) continue;
    if (const auto* raw = std::get_if<RawWord>(stmt)) {
      words.push_back(raw->value);
      continue;
    }
    Instr instr = std::get<AsmInstr>(*stmt).instr;
    if (const auto& target = std::get<AsmInstr>(*stmt).target) {
      const auto it = labels.find(*target);
      if (it == labels.end())
        throw AsmError(item.line, 1, fmt::format("undefined label '{}'", *target));
      const int64_t here = static_cast<int64_t>(words.size()) * 4;
      const int64_t units = (static_cast<int64_t>(it->second) - here) / 4;
      if (!fits_branch(instr, units))
        throw AsmError(item.line, 1, fmt::format("displacement to '{}' overflows", *target));
      instr.imm = units;
    }
    words.push_back(encode(instr));
  }
  return words;
}

Image assemble(const AsmProgram& program, ProfileKind profile,
               const std::optional<std::string>& entry_label) {
  Image image;
  image.profile = profile;
  image.code = assemble_words(program);
  if (entry_label) {
    const auto labels = label_offsets(program);
    const auto it = labels.find(*entry_label);
    if (it == labels.end())
      throw AsmError(0, 1, fmt::format("undefined label '{}'", *entry_label));
    image.entry = it->second;
  }
  return image;
}

}  // namespace sfi
