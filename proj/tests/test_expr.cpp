#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "castel/expr.hpp"

using namespace castel;

namespace {

double eval_text(const std::string& text, const std::vector<Value>& slots = {},
                 const std::vector<std::string>& names = {}) {
  const auto fns = builtin_functions();
  const Resolver r = [&](const std::string& n) -> std::optional<NameRef> {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == n) return NameRef{true, static_cast<int>(i), 0.0};
    if (n == "K") return NameRef{false, -1, 7.0};
    return std::nullopt;
  };
  return CompiledExpr::compile(parse_expr(text), r, fns).eval(slots.data());
}

}  // namespace

TEST_CASE("arithmetic and comparison precedence") {
  CHECK(eval_text("1 + 2 * 3") == 7.0);
  CHECK(eval_text("(1 + 2) * 3") == 9.0);
  CHECK(eval_text("10 - 4 - 3") == 3.0);
  CHECK(eval_text("-2 * 3") == -6.0);
  CHECK(eval_text("0.04 * 100") == Catch::Approx(4.0));
  CHECK(eval_text("1 < 2 and 3 >= 3") == 1.0);
  CHECK(eval_text("1 = 2 or not 0") == 1.0);
  CHECK(eval_text("!(1 != 1)") == 1.0);
  CHECK(eval_text("true && false || true") == 1.0);
  CHECK(eval_text("max(K, 3) + abs(-2)") == 9.0);
}

TEST_CASE("primed variables bind to slots") {
  CHECK(eval_text("p' = p - 1", {5, 4}, {"p", "p'"}) == 1.0);
  CHECK(eval_text("p' = p - 1", {5, 3}, {"p", "p'"}) == 0.0);
}

TEST_CASE("parse errors report offsets") {
  try {
    parse_expr("1 + (2 * 3");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 10);
  }
  CHECK_THROWS_AS(parse_expr("1 +"), ParseError);
  CHECK_THROWS_AS(parse_expr("f(1,"), ParseError);
  CHECK_THROWS_AS(parse_expr("1 2"), ParseError);
}

TEST_CASE("unknown names and functions are rejected at compile time") {
  CHECK_THROWS_AS(eval_text("q + 1"), ParseError);
  CHECK_THROWS_AS(eval_text("nope(1)"), ParseError);
  CHECK_THROWS_AS(eval_text("abs(1, 2)"), ParseError);
}

TEST_CASE("pretty-printed expressions parse back to the same tree") {
  std::mt19937 rng(7);
  const char* leaves[] = {"a", "b'", "3", "0.5", "K"};
  const Op ops[] = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Eq, Op::Lt, Op::And, Op::Or};
  std::function<Expr(int)> gen = [&](int depth) -> Expr {
    const int pick = static_cast<int>(rng() % 10);
    if (depth == 0 || pick < 3) {
      const std::string leaf = leaves[rng() % 5];
      return std::isdigit(static_cast<unsigned char>(leaf[0])) ? Expr::number(std::stod(leaf)) : Expr::ident(leaf);
    }
    if (pick == 3) {
      Expr e;
      e.op = Op::Not;
      e.args.push_back(gen(depth - 1));
      return e;
    }
    if (pick == 4) {
      Expr e;
      e.op = Op::Call;
      e.name = "max";
      e.args.push_back(gen(depth - 1));
      e.args.push_back(gen(depth - 1));
      return e;
    }
    return Expr::binary(ops[rng() % 8], gen(depth - 1), gen(depth - 1));
  };
  for (int i = 0; i < 300; ++i) {
    const Expr e = gen(4);
    const std::string once = to_string(e);
    const std::string twice = to_string(parse_expr(once));
    INFO(once);
    CHECK(once == twice);
  }
}

TEST_CASE("to_value accepts only integral results") {
  CHECK(to_value(3.0) == 3);
  CHECK(to_value(-1.0) == -1);
  CHECK_FALSE(to_value(2.5).has_value());
  CHECK_FALSE(to_value(std::nan("")).has_value());
}
