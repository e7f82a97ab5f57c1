#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "castel/check.hpp"
#include "support.hpp"

using namespace castel;

namespace {

const double kOneMinusInvE = 1.0 - std::exp(-1.0);

double exact(const Net& net, const Marking& init, const char* text, const ExactOptions& o = {}) {
  return exact_check(net, init, *parse_formula(text), o).probability;
}

// Random chain on n states with labels drawn independently.
struct RandomChain {
  Ctmc c;
  std::vector<bool> phi, psi;
};

RandomChain random_chain(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> rate(0.1, 3.0);
  std::bernoulli_distribution coin(0.5);
  RandomChain r;
  r.c.n = n;
  r.c.labels.resize(n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (coin(rng)) r.c.entries.push_back({a, b, rate(rng), static_cast<double>(rng() % 3)});
  for (std::size_t s = 0; s < n; ++s) {
    r.phi.push_back(coin(rng));
    r.psi.push_back(coin(rng) && coin(rng));
  }
  return r;
}

}  // namespace

TEST_CASE("uniformization on the two-state chain") {
  const Net net(castel::testing::two_state_spec());
  CHECK(std::fabs(exact(net, net.initial(), "P>=0.5 [ F[t<=1] count(dst) = 1 ]") - kOneMinusInvE) < 1e-6);
  CHECK(std::fabs(exact(net, net.initial(), "P>=0.5 [ F[t<=3] count(dst) = 1 ]") - (1 - std::exp(-3.0))) < 1e-6);
  CHECK(exact(net, net.initial(), "P>=0.5 [ F[t<=1] count(src) = 1 ]") == 1.0);
  CHECK(exact(net, net.initial(), "P>=0.5 [ count(dst) = 1 U[t<=1] count(dst) = 1 ]") == 0.0);
  // Weak until.
  CHECK(exact(net, net.initial(), "P>=0.5 [ true W[t<=1] count(dst) = 7 ]") == 1.0);
  CHECK(exact(net, net.initial(), "P>=0.5 [ count(dst) = 5 W[t<=1] true ]") == 1.0);
  CHECK(std::fabs(exact(net, net.initial(), "P>=0.5 [ G[t<=1] count(src) = 1 ]") - std::exp(-1.0)) < 1e-6);

  const Net fast(castel::testing::two_state_spec(40.0));
  CHECK(std::fabs(exact(fast, fast.initial(), "P>=0.5 [ F[t<=0.05] count(dst) = 1 ]") - (1 - std::exp(-2.0))) < 1e-6);
}

TEST_CASE("exact checking rejects what it cannot do") {
  const Net net(castel::testing::two_state_spec());
  CHECK_THROWS_AS(exact(net, net.initial(), "P>=0.5 [ F[t<=1] P>=0.5 [ F[t<=1] true ] ]"), UnsupportedError);
  CHECK_THROWS_AS(exact(net, net.initial(), "P>=0.5 [ F[t<=1] delivered > 0 ]"), UnsupportedError);
  Ctmc empty;
  CHECK_THROWS_AS(exact_bounded_until(empty, {}, {}, 1.0), Error);
  auto [big, init] = deadspot::build(deadspot::Params{});
  ExactOptions o;
  o.state_limit = 50;
  CHECK_THROWS_AS(exact(big, init, "P>=0.5 [ F[t<=1] true ]", o), StateLimitError);
  CHECK(exact(net, net.initial(), "count(src) = 1") == 1.0);
}

TEST_CASE("until and the complementary unless add up to one") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto r = random_chain(rng, 2 + i % 2);
    std::vector<bool> not_psi(r.c.n), bad(r.c.n);
    for (std::size_t s = 0; s < r.c.n; ++s) {
      not_psi[s] = !r.psi[s];
      bad[s] = !r.phi[s] && !r.psi[s];
    }
    const double T = 0.25 + (i % 5);
    const auto u = exact_bounded_until(r.c, r.phi, r.psi, T, 1e-9);
    const auto w = exact_bounded_unless(r.c, not_psi, bad, T, 1e-9);
    const auto us = exact_space_until(r.c, r.phi, r.psi, static_cast<std::size_t>(i % 4));
    const auto ws = exact_space_unless(r.c, not_psi, bad, static_cast<std::size_t>(i % 4));
    for (std::size_t s = 0; s < r.c.n; ++s) {
      CHECK(std::fabs(u[s] + w[s] - 1.0) < 1e-8);
      CHECK(std::fabs(us[s] + ws[s] - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("bounded until is monotone in its bound") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    auto r = random_chain(rng, 3);
    std::vector<double> prev(3, 0.0), prev_s(3, 0.0);
    for (double T : {0.1, 0.5, 1.0, 2.0, 5.0}) {
      const auto u = exact_bounded_until(r.c, r.phi, r.psi, T, 1e-10);
      for (std::size_t s = 0; s < 3; ++s) CHECK(u[s] >= prev[s] - 1e-9);
      prev = u;
    }
    for (std::size_t S = 0; S <= 6; ++S) {
      const auto u = exact_space_until(r.c, r.phi, r.psi, S);
      for (std::size_t s = 0; s < 3; ++s) CHECK(u[s] >= prev_s[s] - 1e-12);
      prev_s = u;
    }
  }

  // Statistically, with shared seeds each sample path is the same, so the
  // estimates are monotone exactly.
  auto [net, init] = deadspot::build(deadspot::tiny(2, 1));
  SmcOptions o;
  o.samples = 2000;
  std::size_t last = 0;
  for (double T : {0.2, 0.5, 1.0, 2.0, 4.0}) {
    const std::string f = "P>=0.5 [ F[t<=" + format_number(T) + "] count(L) = 0 ]";
    const auto r = smc_check(net, init, f, o);
    CHECK(r.successes >= last);
    last = r.successes;
  }
  last = 0;
  for (int S : {0, 1, 2, 4, 8}) {
    const std::string f = "P>=0.5 [ F[s<=" + std::to_string(S) + "] exists(Z: f = T) ]";
    const auto r = smc_check(net, init, f, o);
    CHECK(r.successes >= last);
    last = r.successes;
  }
}

TEST_CASE("statistical checks of the two-state chain") {
  const Net net(castel::testing::two_state_spec());
  SmcOptions o;
  o.samples = 100000;
  o.level = 0.99;
  const auto r = smc_check(net, net.initial(), "P>=0.5 [ F[t<=1] count(dst) = 1 ]", o);
  CHECK(r.samples == 100000);
  CHECK(r.ci.lo <= r.estimate);
  CHECK(r.estimate <= r.ci.hi);
  CHECK(r.ci.lo <= kOneMinusInvE);
  CHECK(kOneMinusInvE <= r.ci.hi);
  CHECK(r.verdict == Verdict::Holds);

  const auto g = smc_check(net, net.initial(), "P<0.5 [ G[t<=1] count(src) = 1 ]", o);
  CHECK(g.ci.lo <= std::exp(-1.0));
  CHECK(std::exp(-1.0) <= g.ci.hi);
  CHECK(g.verdict == Verdict::Holds);

  o.samples = 1000;
  const auto t = smc_check(net, net.initial(), "P>=0.2 [ true U[t<=5] true ]", o);
  CHECK(t.estimate == 1.0);
  CHECK(t.ci.hi == 1.0);
  CHECK(t.verdict == Verdict::Holds);
  CHECK(smc_check(net, net.initial(), "P>=1 [ true U[t<=5] true ]", o).verdict == Verdict::Undecided);
  CHECK(smc_check(net, net.initial(), "P<=0.2 [ F[t<=5] true ]", o).verdict == Verdict::Fails);
  CHECK(smc_check(net, net.initial(), "P=? [ F[t<=1] count(dst) = 1 ]", o).verdict == Verdict::Estimate);
  CHECK(smc_check(net, net.initial(), "count(src) = 1", o).verdict == Verdict::Holds);
  CHECK_THROWS_AS(smc_check(net, net.initial(), "P>=0.5 [ F[t<=1] P>=0.5 [ F[t<=1] true ] ]", o), UnsupportedError);
  CHECK_THROWS_AS(smc_check(net, net.initial(), "P>=0.5 [ F[t<=1] count(nowhere) = 1 ]", o), ConfigError);
}

TEST_CASE("smc results do not depend on the worker count") {
  auto [net, init] = deadspot::build(deadspot::tiny(2, 1));
  SmcOptions o;
  o.samples = 500;
  o.seed = 99;
  const char* f = "P>=0.5 [ count(Z) < 2 U[t<=3] exists(Z: m >= 1) ]";
  const auto a = smc_check(net, init, f, o);
  o.jobs = 3;
  const auto b = smc_check(net, init, f, o);
  CHECK(a.successes == b.successes);
  CHECK(a.successes > 0);
}

TEST_CASE("a lone car needs exactly its route length in spatial steps") {
  const auto p = castel::testing::solitary_params();
  auto [net, ignored] = deadspot::build(p);
  const Net basic = unfold(net);
  const auto& rn = *net.road_network();
  ExactOptions eo;
  eo.coloured = &net;
  SmcOptions so;
  so.samples = 300;
  so.horizon = 200;
  for (auto [f, t] : std::vector<std::pair<std::string, std::string>>{{"A", "B"}, {"C", "A"}}) {
    const Marking init = castel::testing::solitary_marking(net, f, t);
    const int S = rn.start_zone(f) + rn.start_zone(t);
    const std::string ok = "P>=1 [ true U[s<=" + std::to_string(S) + "] count(Z) = 0 ]";
    const std::string short_by_one = "P>=1 [ true U[s<=" + std::to_string(S - 1) + "] count(Z) = 0 ]";
    CHECK(exact(net, init, ok.c_str()) == Catch::Approx(1.0).margin(1e-12));
    CHECK(exact(basic, unfold_marking(net, basic, init), ok.c_str(), eo) == Catch::Approx(1.0).margin(1e-12));
    CHECK(exact(net, init, short_by_one.c_str()) == 0.0);
    const auto r = smc_check(net, init, ok, so);
    CHECK(r.successes == r.samples);
    CHECK(r.truncated == 0);
    CHECK(smc_check(net, init, short_by_one, so).successes == 0);
  }
}

TEST_CASE("per-car spatial counting") {
  auto [net, init] = deadspot::build(deadspot::tiny(2, 0));
  const auto& adv = net.transitions()[net.transition("adv")];
  const auto f_slot = static_cast<std::size_t>(*adv.slot("f"));
  const StepFilter all(net, "");
  const StepFilter from_a(net, "f = A");
  CHECK_THROWS_AS(StepFilter(net, "speed = 3"), ConfigError);
  const auto t = simulate(net, init, 30.0, 5);
  double sum_all = 0, sum_a = 0, expect_a = 0;
  for (const auto& ev : t.events) {
    if (ev.transition != net.transition("adv")) continue;
    EnabledFiring f{ev.transition, ev.binding, 0.0, adv.steps.eval(ev.binding.data())};
    sum_all += all(f);
    sum_a += from_a(f);
    if (ev.binding[f_slot] == *net.atoms().find("A")) expect_a += f.steps;
  }
  CHECK(sum_a == expect_a);
  CHECK(sum_a > 0);
  CHECK(sum_a < sum_all);

  // The same filter on the unfolding sees the original variables.
  const Net basic = unfold(net);
  const StepFilter basic_a(basic, "f = A", &net);
  double unfolded_a = 0;
  for (const auto& ev : t.events) {
    if (ev.transition != net.transition("adv")) continue;
    const std::string name = "adv{" + net.format_binding(ev.transition, ev.binding) + "}";
    const std::size_t bt = basic.transition(name);
    unfolded_a += basic_a({bt, {}, 0.0, basic.transitions()[bt].steps.eval(nullptr)});
  }
  CHECK(unfolded_a == expect_a);
}

TEST_CASE("space-bounded paths are decided once the step count passes S") {
  auto [net, init] = deadspot::build(deadspot::tiny(2, 1));
  for (const char* text : {"P>=0.5 [ count(Z) >= 1 U[s<=3] exists(Z: m = 1) ]",
                           "P>=0.5 [ G[s<=2] count(L) = 1 ]", "P>=0.5 [ true W[s<=5] count(K) = 0 ]"}) {
    const auto f = parse_formula(text);
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
      const Trace full = simulate(net, init, 50.0, seed);
      Trace cut = full;
      cut.events.clear();
      // Cut right after the firing that takes the step count past S.
      double steps = 0;
      for (const auto& ev : full.events) {
        cut.events.push_back(ev);
        const auto& tr = net.transitions()[ev.transition];
        if (tr.spatial) steps += tr.steps.eval(ev.binding.data());
        if (steps > f->path->bound.limit) break;
      }
      CHECK(path_holds(net, init, full, *f->path) == path_holds(net, init, cut, *f->path));
    }
  }
}

TEST_CASE("delivered fractions are read along the path") {
  auto [net, init] = deadspot::build(deadspot::tiny(2, 2, false));
  SmcOptions o;
  o.samples = 200;
  const auto r = smc_check(net, init, "P>=0.5 [ F[t<=40] delivered >= 0.5 ]", o);
  CHECK(r.estimate > 0.5);
  const auto none = smc_check(net, init, "P=? [ F[t<=0.01] delivered >= 0.5 ]", o);
  CHECK(none.estimate < 0.05);
}
