#pragma once

// Text assembly for SBX64: a line parser that inverts disassemble(), a small
// program container, and a two-pass assembler producing SBX1 images.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sfi/image.hpp"
#include "sfi/isa.hpp"

namespace sfi {

class AsmError : public std::runtime_error {
 public:
  AsmError(int line, int column, const std::string& message);

  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  int line_;
  int column_;
};

/// An instruction whose direct-branch displacement may still be symbolic.
struct AsmInstr {
  Instr instr;
  std::optional<std::string> target;  // label name for B/Bl/Cbz/Cbnz

  friend bool operator==(const AsmInstr&, const AsmInstr&) = default;
};

struct RawWord {
  uint32_t value = 0;
  friend bool operator==(const RawWord&, const RawWord&) = default;
};

using Statement = std::variant<AsmInstr, RawWord>;

/// One source line: an optional label definition and an optional statement.
struct AsmLine {
  std::optional<std::string> label;
  std::optional<Statement> statement;
};

/// Parses one logical line. Comments start with ';'. Throws AsmError with
/// the column of the offending token (line number is left at 0).
AsmLine parse_line(std::string_view text);

struct AsmItem {
  std::variant<std::string, Statement> content;  // label definition or statement
  int line = 0;

  friend bool operator==(const AsmItem&, const AsmItem&) = default;
};

struct AsmProgram {
  std::vector<AsmItem> items;

  friend bool operator==(const AsmProgram&, const AsmProgram&) = default;
};

AsmProgram parse_program(std::string_view source);

/// Canonical text: labels on their own line, instructions indented.
std::string format_program(const AsmProgram& program);

/// Two-pass assembly. Branch immediates are (target - here) / 4.
/// Throws AsmError on undefined/duplicate labels and displacement overflow.
std::vector<uint32_t> assemble_words(const AsmProgram& program);

Image assemble(const AsmProgram& program, ProfileKind profile,
               const std::optional<std::string>& entry_label = std::nullopt);

}  // namespace sfi
