#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "castel/error.hpp"
#include "castel/expr.hpp"
#include "castel/net.hpp"
#include "castel/spatial.hpp"

namespace castel {

// Formula grammar (whitespace is free between tokens):
//
//   state  := disj
//   disj   := conj { ("or" | "|") conj }
//   conj   := unary { ("and" | "&") unary }
//   unary  := ("not" | "!") unary | atom
//   atom   := "true" | "false" | "(" state ")"
//           | "count" "(" PLACE ")" CMP NUMBER
//           | "exists" "(" PLACE ":" EXPR ")"
//           | "bubble" "(" INT ")"
//           | "delivered" CMP NUMBER
//           | "P" PCMP NUMBER "[" path "]"  |  "P=?" "[" path "]"
//   path   := "F" bound state | "G" bound state | state ("U" | "W") bound state
//   bound  := "[" "t" "<=" NUMBER "]" | "[" "s" "<=" INT [ "by" "(" EXPR ")" ] "]"
//
// CMP is one of < <= > >= = !=, PCMP one of < <= > >=. EXPR uses the guard
// expression language over the colour fields of PLACE (exists) or the
// variables of spatial transitions (by).

/// Unsupported formula shape, e.g. a nested probability operator.
class UnsupportedError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

enum class Cmp { Lt, Le, Gt, Ge, Eq, Ne };

inline const char* cmp_text(Cmp c) {
  switch (c) {
    case Cmp::Lt: return "<";
    case Cmp::Le: return "<=";
    case Cmp::Gt: return ">";
    case Cmp::Ge: return ">=";
    case Cmp::Eq: return "=";
    case Cmp::Ne: return "!=";
  }
  return "?";
}

inline bool compare(double a, Cmp c, double b) {
  switch (c) {
    case Cmp::Lt: return a < b;
    case Cmp::Le: return a <= b;
    case Cmp::Gt: return a > b;
    case Cmp::Ge: return a >= b;
    case Cmp::Eq: return a == b;
    case Cmp::Ne: return a != b;
  }
  return false;
}

struct PathFormula;

struct StateFormula {
  enum class Kind { True, False, Not, And, Or, Count, Exists, Bubble, Delivered, Prob };

  Kind kind = Kind::True;
  std::vector<std::shared_ptr<const StateFormula>> args;  // Not: 1, And/Or: 2
  std::string place;                                      // Count, Exists
  std::string cond;                                       // Exists
  Cmp cmp = Cmp::Ge;                                      // Count, Delivered, Prob
  double value = 0.0;                                     // threshold or bubble size
  bool query = false;                                     // Prob: P=?
  std::shared_ptr<const PathFormula> path;                // Prob
};

using StatePtr = std::shared_ptr<const StateFormula>;

struct Bound {
  enum class Kind { Time, Space };
  Kind kind = Kind::Time;
  double limit = 0.0;
  std::string by;  // Space only: per-car filter; empty counts every spatial firing
};

struct PathFormula {
  enum class Kind { Until, Weak };
  enum class Sugar { None, Eventually, Globally };
  Kind kind = Kind::Until;
  Sugar sugar = Sugar::None;
  StatePtr phi;
  StatePtr psi;
  Bound bound;
};

bool operator==(const StateFormula& a, const StateFormula& b);

inline bool operator==(const Bound& a, const Bound& b) {
  return a.kind == b.kind && a.limit == b.limit && a.by == b.by;
}

inline bool operator==(const PathFormula& a, const PathFormula& b) {
  return a.kind == b.kind && a.sugar == b.sugar && *a.phi == *b.phi && *a.psi == *b.psi && a.bound == b.bound;
}

inline bool operator==(const StateFormula& a, const StateFormula& b) {
  if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (!(*a.args[i] == *b.args[i])) return false;
  if (a.place != b.place || a.cond != b.cond || a.value != b.value || a.query != b.query) return false;
  if (a.kind == StateFormula::Kind::Count || a.kind == StateFormula::Kind::Delivered ||
      (a.kind == StateFormula::Kind::Prob && !a.query))
    if (a.cmp != b.cmp) return false;
  if (static_cast<bool>(a.path) != static_cast<bool>(b.path)) return false;
  return !a.path || *a.path == *b.path;
}

// ---------------------------------------------------------------------------
// Constructors

namespace formula {

inline StatePtr truth(bool v) {
  auto f = std::make_shared<StateFormula>();
  f->kind = v ? StateFormula::Kind::True : StateFormula::Kind::False;
  return f;
}

inline StatePtr negate(StatePtr a) {
  auto f = std::make_shared<StateFormula>();
  f->kind = StateFormula::Kind::Not;
  f->args = {std::move(a)};
  return f;
}

inline StatePtr both(StatePtr a, StatePtr b) {
  auto f = std::make_shared<StateFormula>();
  f->kind = StateFormula::Kind::And;
  f->args = {std::move(a), std::move(b)};
  return f;
}

inline StatePtr either(StatePtr a, StatePtr b) {
  auto f = std::make_shared<StateFormula>();
  f->kind = StateFormula::Kind::Or;
  f->args = {std::move(a), std::move(b)};
  return f;
}

inline StatePtr count(std::string place, Cmp c, double n) {
  auto f = std::make_shared<StateFormula>();
  f->kind = StateFormula::Kind::Count;
  f->place = std::move(place);
  f->cmp = c;
  f->value = n;
  return f;
}

inline StatePtr exists(std::string place, std::string cond) {
  auto f = std::make_shared<StateFormula>();
  f->kind = StateFormula::Kind::Exists;
  f->place = std::move(place);
  f->cond = std::move(cond);
  return f;
}

inline StatePtr bubble(std::size_t k) {
  auto f = std::make_shared<StateFormula>();
  f->kind = StateFormula::Kind::Bubble;
  f->value = static_cast<double>(k);
  return f;
}

inline StatePtr prob(Cmp c, double q, PathFormula path) {
  auto f = std::make_shared<StateFormula>();
  f->kind = StateFormula::Kind::Prob;
  f->cmp = c;
  f->value = q;
  f->path = std::make_shared<PathFormula>(std::move(path));
  return f;
}

inline PathFormula until(StatePtr phi, StatePtr psi, Bound b, bool weak = false) {
  PathFormula p;
  p.kind = weak ? PathFormula::Kind::Weak : PathFormula::Kind::Until;
  p.phi = std::move(phi);
  p.psi = std::move(psi);
  p.bound = std::move(b);
  return p;
}

inline Bound time_bound(double t) { return {Bound::Kind::Time, t, {}}; }
inline Bound space_bound(double s, std::string by = {}) { return {Bound::Kind::Space, s, std::move(by)}; }

}  // namespace formula

// ---------------------------------------------------------------------------
// Printing

std::string to_string(const StateFormula& f);

inline std::string to_string(const Bound& b) {
  if (b.kind == Bound::Kind::Time) return "[t<=" + format_number(b.limit) + "]";
  std::string s = "[s<=" + format_number(b.limit);
  if (!b.by.empty()) s += " by (" + b.by + ")";
  return s + "]";
}

inline std::string to_string(const PathFormula& p) {
  switch (p.sugar) {
    case PathFormula::Sugar::Eventually: return "F" + to_string(p.bound) + " " + to_string(*p.psi);
    case PathFormula::Sugar::Globally: return "G" + to_string(p.bound) + " " + to_string(*p.phi);
    case PathFormula::Sugar::None: break;
  }
  return to_string(*p.phi) + (p.kind == PathFormula::Kind::Until ? " U" : " W") + to_string(p.bound) + " " +
         to_string(*p.psi);
}

inline std::string to_string(const StateFormula& f) {
  using K = StateFormula::Kind;
  switch (f.kind) {
    case K::True: return "true";
    case K::False: return "false";
    case K::Not: return "not " + to_string(*f.args[0]);
    case K::And: return "(" + to_string(*f.args[0]) + " and " + to_string(*f.args[1]) + ")";
    case K::Or: return "(" + to_string(*f.args[0]) + " or " + to_string(*f.args[1]) + ")";
    case K::Count: return "count(" + f.place + ") " + cmp_text(f.cmp) + " " + format_number(f.value);
    case K::Exists: return "exists(" + f.place + ": " + f.cond + ")";
    case K::Bubble: return "bubble(" + format_number(f.value) + ")";
    case K::Delivered: return std::string("delivered ") + cmp_text(f.cmp) + " " + format_number(f.value);
    case K::Prob:
      return (f.query ? std::string("P=?") : std::string("P") + cmp_text(f.cmp) + format_number(f.value)) + " [ " +
             to_string(*f.path) + " ]";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view s) : s_(s) {}

  StatePtr parse() {
    auto f = disj();
    ws();
    if (i_ != s_.size()) fail("unexpected text");
    return f;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, i_); }

  void ws() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }

  bool peek(char c) {
    ws();
    return i_ < s_.size() && s_[i_] == c;
  }

  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++i_;
  }

  static bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\''; }

  // Next identifier without consuming it.
  std::string_view word() {
    ws();
    std::size_t j = i_;
    while (j < s_.size() && word_char(s_[j])) ++j;
    return s_.substr(i_, j - i_);
  }

  bool keyword(std::string_view k) {
    if (word() != k) return false;
    i_ += k.size();
    return true;
  }

  std::string identifier() {
    auto w = word();
    if (w.empty() || std::isdigit(static_cast<unsigned char>(w[0]))) fail("expected a name");
    i_ += w.size();
    return std::string(w);
  }

  double number() {
    ws();
    double x = 0.0;
    auto [p, ec] = std::from_chars(s_.data() + i_, s_.data() + s_.size(), x);
    if (ec != std::errc{} || !std::isfinite(x)) fail("expected a number");
    i_ = static_cast<std::size_t>(p - s_.data());
    return x;
  }

  std::size_t integer() {
    const std::size_t at = i_;
    const double x = number();
    if (x < 0 || x != std::floor(x)) throw ParseError("expected a non-negative integer", at);
    return static_cast<std::size_t>(x);
  }

  std::optional<Cmp> try_cmp() {
    ws();
    static const std::pair<std::string_view, Cmp> ops[] = {{"<=", Cmp::Le}, {">=", Cmp::Ge}, {"!=", Cmp::Ne},
                                                           {"<", Cmp::Lt},  {">", Cmp::Gt},  {"=", Cmp::Eq}};
    for (const auto& [t, c] : ops)
      if (s_.substr(i_, t.size()) == t) {
        i_ += t.size();
        return c;
      }
    return std::nullopt;
  }

  Cmp cmp() {
    auto c = try_cmp();
    if (!c) fail("expected a comparison operator");
    return *c;
  }

  // Raw expression text up to the closing parenthesis at depth zero; the
  // parenthesis is left unconsumed. Validated with the expression parser.
  std::string expression() {
    ws();
    const std::size_t start = i_;
    int depth = 0;
    while (i_ < s_.size()) {
      const char c = s_[i_];
      if (c == '(') ++depth;
      if (c == ')') {
        if (depth == 0) break;
        --depth;
      }
      ++i_;
    }
    if (i_ == s_.size()) fail("unterminated expression");
    std::string_view text = s_.substr(start, i_ - start);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    if (text.empty()) throw ParseError("empty expression", start);
    parse_expr(text, start);
    return std::string(text);
  }

  StatePtr disj() {
    auto a = conj();
    for (;;) {
      if (keyword("or")) {
        a = formula::either(a, conj());
      } else if (peek('|')) {
        ++i_;
        a = formula::either(a, conj());
      } else {
        return a;
      }
    }
  }

  StatePtr conj() {
    auto a = unary();
    for (;;) {
      if (keyword("and")) {
        a = formula::both(a, unary());
      } else if (peek('&')) {
        ++i_;
        a = formula::both(a, unary());
      } else {
        return a;
      }
    }
  }

  StatePtr unary() {
    if (keyword("not")) return formula::negate(unary());
    if (peek('!')) {
      ++i_;
      return formula::negate(unary());
    }
    return atom();
  }

  StatePtr atom() {
    if (peek('(')) {
      ++i_;
      auto f = disj();
      expect(')');
      return f;
    }
    const std::size_t at = i_;
    const auto w = word();
    if (w == "true" || w == "false") {
      i_ += w.size();
      return formula::truth(w == "true");
    }
    if (w == "count") {
      i_ += w.size();
      expect('(');
      std::string place = identifier();
      expect(')');
      const Cmp c = cmp();
      return formula::count(std::move(place), c, number());
    }
    if (w == "exists") {
      i_ += w.size();
      expect('(');
      std::string place = identifier();
      expect(':');
      std::string cond = expression();
      expect(')');
      return formula::exists(std::move(place), std::move(cond));
    }
    if (w == "bubble") {
      i_ += w.size();
      expect('(');
      const std::size_t k_at = i_;
      const std::size_t k = integer();
      if (k < 2) throw ParseError("bubble size must be at least 2", k_at);
      expect(')');
      return formula::bubble(k);
    }
    if (w == "delivered") {
      i_ += w.size();
      auto f = std::make_shared<StateFormula>();
      f->kind = StateFormula::Kind::Delivered;
      f->cmp = cmp();
      f->value = number();
      return f;
    }
    if (w == "P") {
      i_ += w.size();
      auto f = std::make_shared<StateFormula>();
      f->kind = StateFormula::Kind::Prob;
      ws();
      if (s_.substr(i_, 2) == "=?") {
        i_ += 2;
        f->query = true;
      } else {
        const std::size_t c_at = i_;
        f->cmp = cmp();
        if (f->cmp == Cmp::Eq || f->cmp == Cmp::Ne) throw ParseError("probability bound needs < <= > or >=", c_at);
        const std::size_t q_at = i_;
        f->value = number();
        if (f->value < 0 || f->value > 1) throw ParseError("probability bound must lie in [0, 1]", q_at);
      }
      expect('[');
      f->path = std::make_shared<PathFormula>(path());
      expect(']');
      return f;
    }
    if (w.empty()) fail("expected a formula");
    throw ParseError("unknown proposition '" + std::string(w) + "'", at);
  }

  Bound bound() {
    expect('[');
    Bound b;
    const std::size_t at = i_;
    const auto w = word();
    if (w == "t") {
      b.kind = Bound::Kind::Time;
    } else if (w == "s") {
      b.kind = Bound::Kind::Space;
    } else {
      throw ParseError("bound must start with t or s", at);
    }
    i_ += w.size();
    ws();
    if (s_.substr(i_, 2) != "<=") fail("expected '<='");
    i_ += 2;
    const std::size_t n_at = i_;
    if (b.kind == Bound::Kind::Time) {
      b.limit = number();
      if (!(b.limit > 0)) throw ParseError("time bound must be positive", n_at);
    } else {
      b.limit = static_cast<double>(integer());
      if (keyword("by")) {
        expect('(');
        b.by = expression();
        expect(')');
      }
    }
    expect(']');
    return b;
  }

  bool sugar_ahead(std::string_view k) {
    const std::size_t save = i_;
    const bool yes = keyword(k) && peek('[');
    i_ = save;
    return yes;
  }

  PathFormula path() {
    if (sugar_ahead("F")) {
      keyword("F");
      Bound b = bound();
      auto p = formula::until(formula::truth(true), disj(), std::move(b));
      p.sugar = PathFormula::Sugar::Eventually;
      return p;
    }
    if (sugar_ahead("G")) {
      keyword("G");
      Bound b = bound();
      auto p = formula::until(disj(), formula::truth(false), std::move(b), true);
      p.sugar = PathFormula::Sugar::Globally;
      return p;
    }
    auto phi = disj();
    bool weak = false;
    if (keyword("W")) {
      weak = true;
    } else if (!keyword("U")) {
      fail("expected U or W");
    }
    Bound b = bound();
    return formula::until(std::move(phi), disj(), std::move(b), weak);
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

}  // namespace detail

/// Parses formula text. Throws ParseError with the byte offset of the problem.
inline StatePtr parse_formula(std::string_view text) { return detail::FormulaParser(text).parse(); }

/// True if a probability operator occurs anywhere below the root.
inline bool has_nested_prob(const StateFormula& f, bool top = true) {
  if (f.kind == StateFormula::Kind::Prob && !top) return true;
  for (const auto& a : f.args)
    if (has_nested_prob(*a, false)) return true;
  if (f.path) return has_nested_prob(*f.path->phi, false) || has_nested_prob(*f.path->psi, false);
  return false;
}

inline bool uses_delivered(const StateFormula& f) {
  if (f.kind == StateFormula::Kind::Delivered) return true;
  for (const auto& a : f.args)
    if (uses_delivered(*a)) return true;
  return f.path && (uses_delivered(*f.path->phi) || uses_delivered(*f.path->psi));
}

// ---------------------------------------------------------------------------
// Evaluation on markings

/// Trace-level quantities some propositions need.
struct TraceState {
  std::size_t created = 0;
  std::size_t delivered = 0;
};

/// A state formula bound to a net: place names resolved and conditions
/// compiled. Probability operators are not evaluable here.
class StateEvaluator {
 public:
  StateEvaluator(const Net& net, const StateFormula& f) : net_(&net), root_(compile(f)) {}

  bool operator()(const Marking& m, const TraceState* trace = nullptr) const { return eval(root_, m, trace); }

 private:
  struct Node {
    StateFormula::Kind kind;
    std::vector<Node> args;
    std::size_t place = 0;
    Cmp cmp = Cmp::Ge;
    double value = 0.0;
    CompiledExpr cond;
    std::size_t fields[3] = {0, 0, 0};  // bubble: f, p, t
  };

  Node compile(const StateFormula& f) const {
    using K = StateFormula::Kind;
    Node n{f.kind, {}, 0, f.cmp, f.value, {}, {0, 0, 0}};
    for (const auto& a : f.args) n.args.push_back(compile(*a));
    switch (f.kind) {
      case K::Count:
        n.place = place(f.place);
        break;
      case K::Exists: {
        n.place = place(f.place);
        const auto& dom = net_->places()[n.place].domain;
        if (dom.is_dot()) throw ConfigError("exists() needs a coloured place, '" + f.place + "' holds plain tokens");
        const auto fields = dom.fields.empty() ? std::vector<std::string>{"x"} : dom.fields;
        const Resolver resolve = [&](const std::string& name) -> std::optional<NameRef> {
          for (std::size_t i = 0; i < fields.size(); ++i)
            if (fields[i] == name) return NameRef{true, static_cast<int>(i), 0.0};
          if (auto c = net_->constant(name)) return NameRef{false, -1, *c};
          if (auto a = net_->atoms().find(name)) return NameRef{false, -1, static_cast<double>(*a)};
          return std::nullopt;
        };
        n.cond = CompiledExpr::compile(parse_expr(f.cond), resolve, net_->functions());
        break;
      }
      case K::Bubble: {
        if (!net_->road_network()) throw ConfigError("bubble() needs a net with a road network");
        n.place = place("Z");
        const auto& dom = net_->places()[n.place].domain;
        const char* names[3] = {"f", "p", "t"};
        for (int k = 0; k < 3; ++k) {
          auto it = std::find(dom.fields.begin(), dom.fields.end(), names[k]);
          if (it == dom.fields.end()) throw ConfigError(std::string("bubble() needs field '") + names[k] + "' in Z");
          n.fields[k] = static_cast<std::size_t>(it - dom.fields.begin());
        }
        break;
      }
      case K::Prob:
        throw UnsupportedError("probability operators cannot be evaluated on a single marking");
      default:
        break;
    }
    return n;
  }

  std::size_t place(const std::string& name) const {
    auto p = net_->find_place(name);
    if (!p) throw ConfigError("formula refers to unknown place '" + name + "'");
    return *p;
  }

  bool eval(const Node& n, const Marking& m, const TraceState* trace) const {
    using K = StateFormula::Kind;
    switch (n.kind) {
      case K::True: return true;
      case K::False: return false;
      case K::Not: return !eval(n.args[0], m, trace);
      case K::And: return eval(n.args[0], m, trace) && eval(n.args[1], m, trace);
      case K::Or: return eval(n.args[0], m, trace) || eval(n.args[1], m, trace);
      case K::Count: return compare(static_cast<double>(m.bags[n.place].total()), n.cmp, n.value);
      case K::Exists:
        for (const auto& [c, k] : m.bags[n.place].entries())
          if (n.cond.test(c.begin())) return true;
        return false;
      case K::Bubble: {
        const auto& rn = *net_->road_network();
        const auto& atoms = net_->atoms();
        std::vector<CarPosition> cars;
        int id = 0;
        for (const auto& [c, k] : m.bags[n.place].entries())
          for (std::uint32_t j = 0; j < k; ++j)
            cars.push_back({id++, atoms.name(c[n.fields[0]]), static_cast<int>(c[n.fields[1]]), atoms.name(c[n.fields[2]])});
        if (cars.size() < static_cast<std::size_t>(n.value)) return false;
        return !bubbles(proximity_graph(rn, cars), static_cast<std::size_t>(n.value)).empty();
      }
      case K::Delivered: {
        if (!trace) throw ConfigError("delivered is a trace-level proposition and has no value on a single marking");
        if (trace->created == 0) return false;
        return compare(static_cast<double>(trace->delivered) / static_cast<double>(trace->created), n.cmp, n.value);
      }
      case K::Prob: break;
    }
    return false;
  }

  const Net* net_;
  Node root_;
};

/// Truth of a propositional formula on one marking.
inline bool eval_atomic(const Net& net, const StateFormula& f, const Marking& m) { return StateEvaluator(net, f)(m); }

inline bool eval_atomic(const Net& net, std::string_view text, const Marking& m) {
  return eval_atomic(net, *parse_formula(text), m);
}

}  // namespace castel
