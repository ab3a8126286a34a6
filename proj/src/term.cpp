#include "sfi/term.hpp"

#include <utility>

#include <fmt/format.h>

namespace sfi::sym {

uint64_t width_mask(unsigned width) {
  return width >= 64 ? ~0ull : width == 0 ? 1ull : (1ull << width) - 1;
}

namespace {

uint64_t sign_extend(uint64_t v, unsigned from, unsigned to) {
  if (from == 0 || from >= 64) return v & width_mask(to);
  const uint64_t sign = 1ull << (from - 1);
  return ((v ^ sign) - sign) & width_mask(to);
}

bool commutative(Op op) {
  switch (op) {
    case Op::Add:
    case Op::Mul:
    case Op::And:
    case Op::Or:
    case Op::Xor:
    case Op::Eq:
    case Op::AndB:
    case Op::OrB:
      return true;
    default:
      return false;
  }
}

}  // namespace

size_t TermStore::NodeHash::operator()(const Node& n) const {
  uint64_t h = 0x9E3779B97F4A7C15ull;
  auto mix = [&h](uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  };
  mix(static_cast<uint64_t>(n.op) | uint64_t{n.width} << 8 | uint64_t{n.p0} << 16 |
      uint64_t{n.p1} << 24);
  mix(n.value);
  mix(n.a);
  mix(uint64_t{n.b} << 32 | n.c);
  return static_cast<size_t>(h);
}

TermStore::TermStore() {
  false_ = bv(0, 0);
  true_ = bv(1, 0);
}

Term TermStore::intern(const Node& n) {
  if (auto it = index_.find(n); it != index_.end()) return Term{it->second};
  const auto id = static_cast<uint32_t>(nodes_.size());
  nodes_.push_back(n);
  index_.emplace(n, id);
  return Term{id};
}

std::optional<uint64_t> TermStore::as_const(Term t) const {
  const Node& n = nodes_[t.id];
  if (n.op == Op::Const) return n.value;
  return std::nullopt;
}

Term TermStore::bv(uint64_t value, unsigned width) {
  Node n;
  n.op = Op::Const;
  n.width = static_cast<uint8_t>(width);
  n.value = value & width_mask(width);
  return intern(n);
}

Term TermStore::symbol(const std::string& name, unsigned width) {
  if (auto it = symbol_by_name_.find(name); it != symbol_by_name_.end()) {
    if (this->width(it->second) != width)
      throw std::invalid_argument(fmt::format("symbol {} redeclared with another width", name));
    return it->second;
  }
  Node n;
  n.op = Op::Symbol;
  n.width = static_cast<uint8_t>(width);
  n.value = symbol_names_.size();
  symbol_names_.push_back(name);
  const Term t = intern(n);
  symbol_by_name_.emplace(name, t);
  symbols_.push_back(t);
  return t;
}

std::optional<Term> TermStore::find_symbol(const std::string& name) const {
  if (auto it = symbol_by_name_.find(name); it != symbol_by_name_.end()) return it->second;
  return std::nullopt;
}

Term TermStore::make(Op op, unsigned width, Term a, Term b, Term c, unsigned p0, unsigned p1) {
  if (commutative(op)) {
    const bool a_const = nodes_[a.id].op == Op::Const;
    const bool b_const = nodes_[b.id].op == Op::Const;
    if ((a_const && !b_const) || (a_const == b_const && a.id > b.id)) std::swap(a, b);
  }
  Node n;
  n.op = op;
  n.width = static_cast<uint8_t>(width);
  n.p0 = static_cast<uint8_t>(p0);
  n.p1 = static_cast<uint8_t>(p1);
  n.a = a.id;
  n.b = b.id;
  n.c = c.id;
  return intern(n);
}

namespace {

uint64_t fold(Op op, unsigned w, uint64_t a, uint64_t b, unsigned wa) {
  const uint64_t m = width_mask(w);
  switch (op) {
    case Op::Add: return (a + b) & m;
    case Op::Sub: return (a - b) & m;
    case Op::Mul: return (a * b) & m;
    case Op::And: return a & b;
    case Op::Or: return a | b;
    case Op::Xor: return a ^ b;
    case Op::Shl: return b >= w ? 0 : (a << b) & m;
    case Op::LShr: return b >= w ? 0 : a >> b;
    case Op::Eq: return a == b;
    case Op::Ult: return a < b;
    case Op::Ule: return a <= b;
    case Op::AndB: return a & b;
    case Op::OrB: return a | b;
    default: break;
  }
  (void)wa;
  throw std::logic_error("fold: unsupported operator");
}

}  // namespace

Term TermStore::add(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(*ca + *cb, w);
  if (ca) {
    std::swap(a, b);
    std::swap(ca, cb);
  }
  if (cb && *cb == 0) return a;
  if (cb && node(a).op == Op::Add) {
    if (auto inner = as_const(Term{node(a).b})) return add(Term{node(a).a}, bv(*inner + *cb, w));
  }
  return make(Op::Add, w, a, b);
}

Term TermStore::sub(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(*ca - *cb, w);
  if (a == b) return bv(0, w);
  if (cb) return add(a, bv(0 - *cb, w));
  // (x + c1) - (x + c2) and (x + c) - x
  auto split = [&](Term t) -> std::pair<Term, uint64_t> {
    if (node(t).op == Op::Add) {
      if (auto c = as_const(Term{node(t).b})) return {Term{node(t).a}, *c};
    }
    return {t, 0};
  };
  const auto [xa, ka] = split(a);
  const auto [xb, kb] = split(b);
  if (xa == xb) return bv(ka - kb, w);
  return make(Op::Sub, w, a, b);
}

Term TermStore::mul(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(fold(Op::Mul, w, *ca, *cb, w), w);
  if (ca) std::swap(a, b), std::swap(ca, cb);
  if (cb && *cb == 0) return bv(0, w);
  if (cb && *cb == 1) return a;
  return make(Op::Mul, w, a, b);
}

Term TermStore::band(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(*ca & *cb, w);
  if (ca) std::swap(a, b), std::swap(ca, cb);
  if (cb && *cb == 0) return bv(0, w);
  if (cb && *cb == width_mask(w)) return a;
  if (a == b) return a;
  return make(Op::And, w, a, b);
}

Term TermStore::bor(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(*ca | *cb, w);
  if (ca) std::swap(a, b), std::swap(ca, cb);
  if (cb && *cb == 0) return a;
  if (cb && *cb == width_mask(w)) return b;
  if (a == b) return a;
  return make(Op::Or, w, a, b);
}

Term TermStore::bxor(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(*ca ^ *cb, w);
  if (ca) std::swap(a, b), std::swap(ca, cb);
  if (cb && *cb == 0) return a;
  if (a == b) return bv(0, w);
  return make(Op::Xor, w, a, b);
}

Term TermStore::shl(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(fold(Op::Shl, w, *ca, *cb, w), w);
  if (cb && *cb == 0) return a;
  if (cb && *cb >= w) return bv(0, w);
  return make(Op::Shl, w, a, b);
}

Term TermStore::lshr(Term a, Term b) {
  const unsigned w = width(a);
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return bv(fold(Op::LShr, w, *ca, *cb, w), w);
  if (cb && *cb == 0) return a;
  if (cb && *cb >= w) return bv(0, w);
  return make(Op::LShr, w, a, b);
}

Term TermStore::concat(Term hi, Term lo) {
  const unsigned wh = width(hi), wl = width(lo);
  if (wh + wl > 64) throw std::invalid_argument("concat wider than 64 bits");
  auto ch = as_const(hi), cl = as_const(lo);
  if (ch && cl) return bv(*ch << wl | *cl, wh + wl);
  const Node& nh = node(hi);
  const Node& nl = node(lo);
  if (nh.op == Op::Extract && nl.op == Op::Extract && nh.a == nl.a && nh.p1 == nl.p0 + 1)
    return extract(Term{nh.a}, nh.p0, nl.p1);
  if (ch && *ch == 0) return zext(lo, wh + wl);
  return make(Op::Concat, wh + wl, hi, lo);
}

Term TermStore::extract(Term a, unsigned hi, unsigned lo) {
  const unsigned wa = width(a);
  if (hi >= wa || lo > hi) throw std::invalid_argument("extract out of range");
  const unsigned w = hi - lo + 1;
  if (w == wa) return a;
  if (auto c = as_const(a)) return bv(*c >> lo, w);
  const Node n = node(a);
  switch (n.op) {
    case Op::Extract:
      return extract(Term{n.a}, n.p1 + hi, n.p1 + lo);
    case Op::Concat: {
      const unsigned wl = width(Term{n.b});
      if (hi < wl) return extract(Term{n.b}, hi, lo);
      if (lo >= wl) return extract(Term{n.a}, hi - wl, lo - wl);
      break;
    }
    case Op::ZeroExt: {
      const unsigned wi = width(Term{n.a});
      if (hi < wi) return extract(Term{n.a}, hi, lo);
      if (lo >= wi) return bv(0, w);
      break;
    }
    default:
      break;
  }
  return make(Op::Extract, w, a, {}, {}, hi, lo);
}

Term TermStore::zext(Term a, unsigned to) {
  const unsigned wa = width(a);
  if (to == wa) return a;
  if (to < wa) throw std::invalid_argument("zext narrows");
  if (auto c = as_const(a)) return bv(*c, to);
  if (node(a).op == Op::ZeroExt) return zext(Term{node(a).a}, to);
  return make(Op::ZeroExt, to, a, {}, {}, to - wa);
}

Term TermStore::sext(Term a, unsigned to) {
  const unsigned wa = width(a);
  if (to == wa) return a;
  if (to < wa) throw std::invalid_argument("sext narrows");
  if (auto c = as_const(a)) return bv(sign_extend(*c, wa, to), to);
  return make(Op::SignExt, to, a, {}, {}, to - wa);
}

Term TermStore::ite(Term c, Term t, Term e) {
  if (c == true_) return t;
  if (c == false_) return e;
  if (t == e) return t;
  if (is_bool(t)) {
    if (t == true_ && e == false_) return c;
    if (t == false_ && e == true_) return lnot(c);
    if (t == true_) return lor(c, e);
    if (e == false_) return land(c, t);
  }
  return make(Op::Ite, width(t), c, t, e);
}

Term TermStore::eq(Term a, Term b) {
  if (a == b) return true_;
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return boolean(*ca == *cb);
  return make(Op::Eq, 0, a, b);
}

Term TermStore::ult(Term a, Term b) {
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return boolean(*ca < *cb);
  if (a == b || (cb && *cb == 0)) return false_;
  return make(Op::Ult, 0, a, b);
}

Term TermStore::ule(Term a, Term b) {
  auto ca = as_const(a), cb = as_const(b);
  if (ca && cb) return boolean(*ca <= *cb);
  if (a == b || (ca && *ca == 0)) return true_;
  if (cb && *cb == width_mask(width(b))) return true_;
  return make(Op::Ule, 0, a, b);
}

Term TermStore::lnot(Term a) {
  if (a == true_) return false_;
  if (a == false_) return true_;
  if (node(a).op == Op::Not) return Term{node(a).a};
  return make(Op::Not, 0, a);
}

Term TermStore::land(Term a, Term b) {
  if (a == false_ || b == false_) return false_;
  if (a == true_) return b;
  if (b == true_ || a == b) return a;
  return make(Op::AndB, 0, a, b);
}

Term TermStore::lor(Term a, Term b) {
  if (a == true_ || b == true_) return true_;
  if (a == false_) return b;
  if (b == false_ || a == b) return a;
  return make(Op::OrB, 0, a, b);
}

Term TermStore::land_all(const std::vector<Term>& ts) {
  Term acc = true_;
  for (Term t : ts) acc = land(acc, t);
  return acc;
}

Term TermStore::lor_all(const std::vector<Term>& ts) {
  Term acc = false_;
  for (Term t : ts) acc = lor(acc, t);
  return acc;
}

// ---------------------------------------------------------------------------

Evaluator::Evaluator(const TermStore& store, const Assignment& assignment)
    : store_(store), assignment_(assignment) {}

uint64_t Evaluator::operator()(Term t) {
  if (t.id < done_.size() && done_[t.id]) return value_[t.id];
  const Node& n = store_.node(t);
  const unsigned w = n.width;
  uint64_t v = 0;
  switch (n.op) {
    case Op::Const:
      v = n.value;
      break;
    case Op::Symbol: {
      const auto& name = store_.symbol_name(t);
      const auto it = assignment_.find(name);
      if (it == assignment_.end()) throw EvalError(fmt::format("no value for symbol {}", name));
      v = it->second & width_mask(w);
      break;
    }
    case Op::Concat: {
      const unsigned wl = store_.width(Term{n.b});
      v = (*this)(Term{n.a}) << wl | (*this)(Term{n.b});
      break;
    }
    case Op::Extract:
      v = ((*this)(Term{n.a}) >> n.p1) & width_mask(w);
      break;
    case Op::ZeroExt:
      v = (*this)(Term{n.a});
      break;
    case Op::SignExt:
      v = sign_extend((*this)(Term{n.a}), store_.width(Term{n.a}), w);
      break;
    case Op::Ite:
      v = (*this)(Term{n.a}) ? (*this)(Term{n.b}) : (*this)(Term{n.c});
      break;
    case Op::Not:
      v = (*this)(Term{n.a}) ? 0 : 1;
      break;
    case Op::AndB:
      v = (*this)(Term{n.a}) && (*this)(Term{n.b});
      break;
    case Op::OrB:
      v = (*this)(Term{n.a}) || (*this)(Term{n.b});
      break;
    default: {
      const uint64_t a = (*this)(Term{n.a});
      const uint64_t b = (*this)(Term{n.b});
      v = fold(n.op, w, a, b, store_.width(Term{n.a}));
      break;
    }
  }
  if (done_.size() <= t.id) {
    done_.resize(store_.size(), 0);
    value_.resize(store_.size(), 0);
  }
  value_[t.id] = v;
  done_[t.id] = 1;
  return v;
}

uint64_t eval(const TermStore& store, Term t, const Assignment& assignment) {
  Evaluator ev(store, assignment);
  return ev(t);
}

// ---------------------------------------------------------------------------

std::string SmtWriter::sort(unsigned width) {
  return width == 0 ? "Bool" : fmt::format("(_ BitVec {})", width);
}

std::string SmtWriter::literal(uint64_t value, unsigned width) {
  if (width == 0) return value ? "true" : "false";
  if (width % 4 == 0) return fmt::format("#x{:0{}x}", value, width / 4);
  return fmt::format("#b{:0{}b}", value, width);
}

std::string SmtWriter::reference(Term t) {
  const Node& n = store_.node(t);
  if (n.op == Op::Const) return literal(n.value, n.width);
  if (n.op == Op::Symbol) return store_.symbol_name(t);
  if (auto it = names_.find(t.id); it != names_.end()) return it->second;
  const std::string body = render(t);
  std::string name = fmt::format("t{}", next_++);
  definitions_ += fmt::format("(define-fun {} () {} {})\n", name, sort(n.width), body);
  names_.emplace(t.id, name);
  return name;
}

std::string SmtWriter::take_definitions() { return std::exchange(definitions_, {}); }

std::string SmtWriter::render(Term t) {
  const Node n = store_.node(t);
  const auto ref = [&](uint32_t id) { return reference(Term{id}); };
  const auto binary = [&](std::string_view name) {
    const std::string a = ref(n.a);
    const std::string b = ref(n.b);
    return fmt::format("({} {} {})", name, a, b);
  };
  switch (n.op) {
    case Op::Add: return binary("bvadd");
    case Op::Sub: return binary("bvsub");
    case Op::Mul: return binary("bvmul");
    case Op::And: return binary("bvand");
    case Op::Or: return binary("bvor");
    case Op::Xor: return binary("bvxor");
    case Op::Shl: return binary("bvshl");
    case Op::LShr: return binary("bvlshr");
    case Op::Concat: return binary("concat");
    case Op::Eq: return binary("=");
    case Op::Ult: return binary("bvult");
    case Op::Ule: return binary("bvule");
    case Op::AndB: return binary("and");
    case Op::OrB: return binary("or");
    case Op::Extract: return fmt::format("((_ extract {} {}) {})", n.p0, n.p1, ref(n.a));
    case Op::ZeroExt: return fmt::format("((_ zero_extend {}) {})", n.p0, ref(n.a));
    case Op::SignExt: return fmt::format("((_ sign_extend {}) {})", n.p0, ref(n.a));
    case Op::Not: return fmt::format("(not {})", ref(n.a));
    case Op::Ite: {
      const std::string c = ref(n.a);
      const std::string a = ref(n.b);
      const std::string b = ref(n.c);
      return fmt::format("(ite {} {} {})", c, a, b);
    }
    case Op::Const:
    case Op::Symbol:
      break;
  }
  throw std::logic_error("render: leaf reached");
}

}  // namespace sfi::sym
