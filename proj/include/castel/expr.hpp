#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "castel/colour.hpp"
#include "castel/error.hpp"

namespace castel {

// Guard/rate/output expression language: numbers, names (optionally primed,
// e.g. p'), function calls, unary -, not/!, binary + - * /, comparisons
// = != < <= > >=, and and/&&, or/||. Everything evaluates to double;
// booleans are 0/1.

enum class Op { Num, Name, Call, Neg, Not, Add, Sub, Mul, Div, Eq, Ne, Lt, Le, Gt, Ge, And, Or };

struct Expr {
  Op op = Op::Num;
  double num = 0.0;
  std::string name;  // Name or Call
  std::vector<Expr> args;
  std::size_t offset = 0;

  static Expr number(double x) {
    Expr e;
    e.num = x;
    return e;
  }
  static Expr ident(std::string n) {
    Expr e;
    e.op = Op::Name;
    e.name = std::move(n);
    return e;
  }
  static Expr binary(Op op, Expr a, Expr b) {
    Expr e;
    e.op = op;
    e.args.push_back(std::move(a));
    e.args.push_back(std::move(b));
    return e;
  }
};

namespace detail {

class ExprParser {
 public:
  ExprParser(std::string_view text, std::size_t base) : s_(text), base_(base) {}

  Expr parse_all() {
    Expr e = parse_or();
    skip();
    if (i_ != s_.size()) fail("unexpected '" + std::string(1, s_[i_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, base_ + i_); }

  void skip() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }

  bool eat(std::string_view tok) {
    skip();
    if (s_.substr(i_, tok.size()) != tok) return false;
    // keywords must not run into identifier characters
    if (std::isalpha(static_cast<unsigned char>(tok.front()))) {
      const std::size_t j = i_ + tok.size();
      if (j < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[j])) || s_[j] == '_' || s_[j] == '\''))
        return false;
    }
    i_ += tok.size();
    return true;
  }

  Expr parse_or() {
    Expr e = parse_and();
    while (eat("or") || eat("||")) e = Expr::binary(Op::Or, std::move(e), parse_and());
    return e;
  }

  Expr parse_and() {
    Expr e = parse_not();
    while (eat("and") || eat("&&")) e = Expr::binary(Op::And, std::move(e), parse_not());
    return e;
  }

  Expr parse_not() {
    skip();
    const std::size_t at = i_;
    if ((s_.substr(i_, 2) != "!=" && eat("!")) || eat("not")) {
      Expr e;
      e.op = Op::Not;
      e.offset = base_ + at;
      e.args.push_back(parse_not());
      return e;
    }
    return parse_cmp();
  }

  Expr parse_cmp() {
    Expr e = parse_add();
    static const std::pair<std::string_view, Op> ops[] = {{"!=", Op::Ne}, {"<=", Op::Le}, {">=", Op::Ge},
                                                          {"==", Op::Eq}, {"=", Op::Eq},  {"<", Op::Lt},
                                                          {">", Op::Gt}};
    for (const auto& [tok, op] : ops)
      if (eat(tok)) return Expr::binary(op, std::move(e), parse_add());
    return e;
  }

  Expr parse_add() {
    Expr e = parse_mul();
    while (true) {
      if (eat("+"))
        e = Expr::binary(Op::Add, std::move(e), parse_mul());
      else if (eat("-"))
        e = Expr::binary(Op::Sub, std::move(e), parse_mul());
      else
        return e;
    }
  }

  Expr parse_mul() {
    Expr e = parse_unary();
    while (true) {
      if (eat("*"))
        e = Expr::binary(Op::Mul, std::move(e), parse_unary());
      else if (eat("/"))
        e = Expr::binary(Op::Div, std::move(e), parse_unary());
      else
        return e;
    }
  }

  Expr parse_unary() {
    skip();
    const std::size_t at = i_;
    if (eat("-")) {
      Expr e;
      e.op = Op::Neg;
      e.offset = base_ + at;
      e.args.push_back(parse_unary());
      return e;
    }
    return parse_primary();
  }

  Expr parse_primary() {
    skip();
    const std::size_t at = i_;
    if (i_ >= s_.size()) fail("unexpected end of expression");
    const char c = s_[i_];
    if (c == '(') {
      ++i_;
      Expr e = parse_or();
      if (!eat(")")) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t j = i_;
      while (j < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[j])) || s_[j] == '.')) ++j;
      if (j < s_.size() && (s_[j] == 'e' || s_[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < s_.size() && (s_[k] == '+' || s_[k] == '-')) ++k;
        if (k < s_.size() && std::isdigit(static_cast<unsigned char>(s_[k]))) {
          j = k;
          while (j < s_.size() && std::isdigit(static_cast<unsigned char>(s_[j]))) ++j;
        }
      }
      const std::string lit(s_.substr(i_, j - i_));
      char* end = nullptr;
      const double x = std::strtod(lit.c_str(), &end);
      if (end != lit.c_str() + lit.size()) fail("bad number '" + lit + "'");
      i_ = j;
      Expr e = Expr::number(x);
      e.offset = base_ + at;
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i_;
      while (j < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[j])) || s_[j] == '_')) ++j;
      while (j < s_.size() && s_[j] == '\'') ++j;
      std::string word(s_.substr(i_, j - i_));
      i_ = j;
      if (word == "true" || word == "false") {
        Expr e = Expr::number(word == "true" ? 1.0 : 0.0);
        e.offset = base_ + at;
        return e;
      }
      if (eat("(")) {
        Expr e;
        e.op = Op::Call;
        e.name = std::move(word);
        e.offset = base_ + at;
        if (!eat(")")) {
          do {
            e.args.push_back(parse_or());
          } while (eat(","));
          if (!eat(")")) fail("expected ')' after arguments");
        }
        return e;
      }
      Expr e = Expr::ident(std::move(word));
      e.offset = base_ + at;
      return e;
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  std::string_view s_;
  std::size_t base_;
  std::size_t i_ = 0;
};

inline int precedence(Op op) {
  switch (op) {
    case Op::Or: return 1;
    case Op::And: return 2;
    case Op::Not: return 3;
    case Op::Eq: case Op::Ne: case Op::Lt: case Op::Le: case Op::Gt: case Op::Ge: return 4;
    case Op::Add: case Op::Sub: return 5;
    case Op::Mul: case Op::Div: return 6;
    case Op::Neg: return 7;
    default: return 8;
  }
}

inline const char* op_text(Op op) {
  switch (op) {
    case Op::Add: return " + ";
    case Op::Sub: return " - ";
    case Op::Mul: return " * ";
    case Op::Div: return " / ";
    case Op::Eq: return " = ";
    case Op::Ne: return " != ";
    case Op::Lt: return " < ";
    case Op::Le: return " <= ";
    case Op::Gt: return " > ";
    case Op::Ge: return " >= ";
    case Op::And: return " and ";
    case Op::Or: return " or ";
    default: return "";
  }
}

}  // namespace detail

/// Parses expression text. `base` shifts reported error offsets when the
/// text is embedded in a larger document.
inline Expr parse_expr(std::string_view text, std::size_t base = 0) {
  return detail::ExprParser(text, base).parse_all();
}

/// Shortest text that parses back to exactly x.
inline std::string format_number(double x) {
  char buf[40];
  if (x == std::floor(x) && std::fabs(x) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", x);
    return buf;
  }
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

inline std::string to_string(const Expr& e) {
  using detail::precedence;
  auto wrap = [&](const Expr& child, int parent, bool right) {
    std::string s = to_string(child);
    const int p = precedence(child.op);
    if (p < parent || (right && p == parent && p < 7)) return "(" + s + ")";
    return s;
  };
  switch (e.op) {
    case Op::Num: return format_number(e.num);
    case Op::Name: return e.name;
    case Op::Call: {
      std::string s = e.name + "(";
      for (std::size_t i = 0; i < e.args.size(); ++i) s += (i ? ", " : "") + to_string(e.args[i]);
      return s + ")";
    }
    case Op::Neg: return "-" + wrap(e.args[0], 7, false);
    case Op::Not: return "not " + wrap(e.args[0], 3, false);
    default: {
      const int p = precedence(e.op);
      return wrap(e.args[0], p == 4 ? 5 : p, false) + detail::op_text(e.op) + wrap(e.args[1], p == 4 ? 5 : p, true);
    }
  }
}

/// A registered predicate or function callable from expressions.
struct Function {
  int arity = -1;  // -1: variadic
  std::function<double(std::span<const double>)> fn;
};

using FunctionTable = std::map<std::string, Function, std::less<>>;

inline FunctionTable builtin_functions() {
  FunctionTable t;
  t["abs"] = {1, [](std::span<const double> a) { return std::fabs(a[0]); }};
  t["min"] = {2, [](std::span<const double> a) { return std::min(a[0], a[1]); }};
  t["max"] = {2, [](std::span<const double> a) { return std::max(a[0], a[1]); }};
  return t;
}

/// How a name resolves during compilation.
struct NameRef {
  bool is_slot = false;
  int slot = -1;
  double value = 0.0;
};

using Resolver = std::function<std::optional<NameRef>(const std::string&)>;

/// Expression with names resolved to binding slots or constants.
class CompiledExpr {
 public:
  CompiledExpr() = default;

  static CompiledExpr constant(double x) {
    CompiledExpr c;
    c.value_ = x;
    return c;
  }

  static CompiledExpr compile(const Expr& e, const Resolver& resolve, const FunctionTable& fns) {
    CompiledExpr c;
    c.op_ = e.op;
    switch (e.op) {
      case Op::Num:
        c.value_ = e.num;
        break;
      case Op::Name: {
        auto ref = resolve(e.name);
        if (!ref) throw ParseError("unknown name '" + e.name + "'", e.offset);
        if (ref->is_slot) {
          c.slot_ = ref->slot;
          c.mask_ = std::uint64_t{1} << ref->slot;
        } else {
          c.op_ = Op::Num;
          c.value_ = ref->value;
        }
        break;
      }
      case Op::Call: {
        auto it = fns.find(e.name);
        if (it == fns.end()) throw ParseError("unknown function '" + e.name + "'", e.offset);
        if (it->second.arity >= 0 && static_cast<std::size_t>(it->second.arity) != e.args.size())
          throw ParseError("function '" + e.name + "' expects " + std::to_string(it->second.arity) + " arguments",
                           e.offset);
        c.fn_ = &it->second;
        break;
      }
      default:
        break;
    }
    for (const auto& a : e.args) {
      c.args_.push_back(compile(a, resolve, fns));
      c.mask_ |= c.args_.back().mask_;
    }
    return c;
  }

  /// Evaluates with slot values taken from `binding`. Every referenced slot
  /// must hold a value.
  double eval(const Value* binding) const {
    switch (op_) {
      case Op::Num: return value_;
      case Op::Name: return static_cast<double>(binding[slot_]);
      case Op::Call: {
        double buf[16];
        const std::size_t n = args_.size();
        if (n > 16) throw Error("too many function arguments");
        for (std::size_t i = 0; i < n; ++i) buf[i] = args_[i].eval(binding);
        return fn_->fn(std::span<const double>(buf, n));
      }
      case Op::Neg: return -args_[0].eval(binding);
      case Op::Not: return args_[0].eval(binding) != 0.0 ? 0.0 : 1.0;
      case Op::And: return (args_[0].eval(binding) != 0.0 && args_[1].eval(binding) != 0.0) ? 1.0 : 0.0;
      case Op::Or: return (args_[0].eval(binding) != 0.0 || args_[1].eval(binding) != 0.0) ? 1.0 : 0.0;
      default: break;
    }
    const double a = args_[0].eval(binding);
    const double b = args_[1].eval(binding);
    switch (op_) {
      case Op::Add: return a + b;
      case Op::Sub: return a - b;
      case Op::Mul: return a * b;
      case Op::Div: return a / b;
      case Op::Eq: return a == b ? 1.0 : 0.0;
      case Op::Ne: return a != b ? 1.0 : 0.0;
      case Op::Lt: return a < b ? 1.0 : 0.0;
      case Op::Le: return a <= b ? 1.0 : 0.0;
      case Op::Gt: return a > b ? 1.0 : 0.0;
      case Op::Ge: return a >= b ? 1.0 : 0.0;
      default: return 0.0;
    }
  }

  bool test(const Value* binding) const { return eval(binding) != 0.0; }

  Op op() const { return op_; }
  int slot() const { return slot_; }
  double value() const { return value_; }
  std::uint64_t vars() const { return mask_; }
  const std::vector<CompiledExpr>& args() const { return args_; }
  bool is_constant() const { return op_ == Op::Num; }

 private:
  Op op_ = Op::Num;
  double value_ = 0.0;
  int slot_ = -1;
  const Function* fn_ = nullptr;
  std::uint64_t mask_ = 0;
  std::vector<CompiledExpr> args_;
};

/// Converts an expression result to an integer colour component, or nullopt
/// when it is not integral.
inline std::optional<Value> to_value(double x) {
  if (!std::isfinite(x)) return std::nullopt;
  const double r = std::round(x);
  if (std::fabs(x - r) > 1e-9) return std::nullopt;
  return static_cast<Value>(r);
}

}  // namespace castel
