#pragma once

// Hash-consed bit-vector terms (widths 1..64, plus Bool) with light
// constant folding, a reference evaluator, and SMT-LIB2 rendering.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sfi::sym {

enum class Op : uint8_t {
  Const,
  Symbol,
  Add,
  Sub,
  Mul,
  And,
  Or,
  Xor,
  Shl,
  LShr,
  Concat,
  Extract,  // p0 = hi, p1 = lo
  ZeroExt,  // p0 = extra bits
  SignExt,  // p0 = extra bits
  Ite,
  Eq,
  Ult,
  Ule,
  Not,  // Bool
  AndB,
  OrB,
};

/// Handle into a TermStore. Width 0 denotes Bool.
struct Term {
  uint32_t id = 0;
  friend bool operator==(Term, Term) = default;
};

struct Node {
  Op op = Op::Const;
  uint8_t width = 0;
  uint8_t p0 = 0, p1 = 0;
  uint64_t value = 0;  // Const value, or symbol index for Symbol
  uint32_t a = 0, b = 0, c = 0;

  friend bool operator==(const Node&, const Node&) = default;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TermStore {
 public:
  TermStore();

  const Node& node(Term t) const { return nodes_[t.id]; }
  unsigned width(Term t) const { return nodes_[t.id].width; }
  bool is_bool(Term t) const { return width(t) == 0; }
  size_t size() const { return nodes_.size(); }

  std::optional<uint64_t> as_const(Term t) const;

  // Leaves.
  Term bv(uint64_t value, unsigned width);
  Term boolean(bool v) { return v ? true_ : false_; }
  Term truth() const { return true_; }
  Term falsity() const { return false_; }
  /// Declares (or returns the existing) symbol of that name.
  Term symbol(const std::string& name, unsigned width);
  std::optional<Term> find_symbol(const std::string& name) const;
  const std::string& symbol_name(Term t) const { return symbol_names_[nodes_[t.id].value]; }
  /// Symbols in creation order.
  const std::vector<Term>& symbols() const { return symbols_; }

  // Bit-vector operators (operands of equal width unless noted).
  Term add(Term a, Term b);
  Term sub(Term a, Term b);
  Term mul(Term a, Term b);
  Term band(Term a, Term b);
  Term bor(Term a, Term b);
  Term bxor(Term a, Term b);
  Term shl(Term a, Term b);
  Term lshr(Term a, Term b);
  Term concat(Term hi, Term lo);
  Term extract(Term a, unsigned hi, unsigned lo);
  Term zext(Term a, unsigned to_width);
  Term sext(Term a, unsigned to_width);
  Term ite(Term cond, Term then_t, Term else_t);

  // Predicates.
  Term eq(Term a, Term b);
  Term ne(Term a, Term b) { return lnot(eq(a, b)); }
  Term ult(Term a, Term b);
  Term ule(Term a, Term b);
  Term lnot(Term a);
  Term land(Term a, Term b);
  Term lor(Term a, Term b);
  Term implies(Term a, Term b) { return lor(lnot(a), b); }
  Term land_all(const std::vector<Term>& ts);
  Term lor_all(const std::vector<Term>& ts);

 private:
  struct NodeHash {
    size_t operator()(const Node& n) const;
  };

  Term intern(const Node& n);
  Term make(Op op, unsigned width, Term a, Term b = {}, Term c = {}, unsigned p0 = 0,
            unsigned p1 = 0);

  std::vector<Node> nodes_;
  std::unordered_map<Node, uint32_t, NodeHash> index_;
  std::vector<std::string> symbol_names_;
  std::map<std::string, Term, std::less<>> symbol_by_name_;
  std::vector<Term> symbols_;
  Term true_, false_;
};

uint64_t width_mask(unsigned width);

/// Assignment from symbol name to value (masked to the symbol's width).
using Assignment = std::map<std::string, uint64_t, std::less<>>;

/// Evaluates terms under an assignment, memoising shared subterms. Throws
/// EvalError naming the first symbol that has no value.
class Evaluator {
 public:
  Evaluator(const TermStore& store, const Assignment& assignment);
  uint64_t operator()(Term t);
  bool truth(Term t) { return (*this)(t) != 0; }

 private:
  const TermStore& store_;
  const Assignment& assignment_;
  std::vector<uint64_t> value_;
  std::vector<uint8_t> done_;
};

uint64_t eval(const TermStore& store, Term t, const Assignment& assignment);

/// Renders SMT-LIB2. Every reachable non-leaf node becomes one define-fun,
/// emitted in creation order, so output depends only on the store contents.
class SmtWriter {
 public:
  explicit SmtWriter(const TermStore& store) : store_(store) {}

  /// Emits definitions for everything reachable from `t` not yet defined and
  /// returns the expression text naming it.
  std::string reference(Term t);
  std::string take_definitions();

  static std::string sort(unsigned width);
  static std::string literal(uint64_t value, unsigned width);

 private:
  std::string render(Term t);

  const TermStore& store_;
  std::unordered_map<uint32_t, std::string> names_;
  std::string definitions_;
  unsigned next_ = 0;
};

}  // namespace sfi::sym
