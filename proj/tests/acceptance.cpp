// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// all pass. Tolerances and instance sets are fixed below.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "castel/check.hpp"
#include "castel/cli.hpp"
#include "castel/delivery.hpp"
#include "castel/reach.hpp"
#include "castel/unfold.hpp"
#include "support.hpp"

using namespace castel;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... xs) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

// 1 ---------------------------------------------------------------------------

constexpr std::size_t kConservationRuns = 1000;
constexpr double kConservationBudget = 120.0;

class ConservationCheck : public Observer {
 public:
  ConservationCheck(int N, int M, std::atomic<std::size_t>& events, std::atomic<std::size_t>& bad)
      : N_(N), M_(M), events_(events), bad_(bad) {}

  void on_fire(const Net& net, double, const EnabledFiring&, const Marking& m, std::vector<Annotation>&) override {
    const auto& z = m.bags[net.place("Z")];
    std::uint64_t msgs = 0;
    for (const auto& [c, n] : z.entries()) msgs += static_cast<std::uint64_t>(c[4]) * n;
    const std::uint64_t K = m.bags[net.place("K")].total();
    const std::uint64_t L = m.bags[net.place("L")].total();
    ++events_;
    if (K + z.total() != static_cast<std::uint64_t>(N_) || L + msgs != static_cast<std::uint64_t>(M_)) ++bad_;
  }

 private:
  int N_, M_;
  std::atomic<std::size_t>& events_;
  std::atomic<std::size_t>& bad_;
};

Outcome conservation() {
  const auto t0 = Clock::now();
  const deadspot::Params p;
  auto [net, init] = deadspot::build(p);
  std::atomic<std::size_t> events{0}, bad{0};
  SimOptions o;
  o.observer = [&] { return std::make_unique<ConservationCheck>(p.N, p.M, events, bad); };
  parallel_for(kConservationRuns, 0, [&](std::size_t i) { simulate(net, init, 100.0, 1 + i, o); });
  const double secs = seconds_since(t0);
  return {bad == 0 && events > 0 && secs < kConservationBudget,
          fmt("%zu runs, %zu events, %zu violations, %.1f s (limit %.0f s)", kConservationRuns, events.load(),
              bad.load(), secs, kConservationBudget)};
}

// 2 ---------------------------------------------------------------------------

Outcome unfolding() {
  const auto t0 = Clock::now();
  auto [net, init] = deadspot::build(deadspot::tiny(2, 1));
  const Net basic = unfold(net);
  const ReachGraph gc = reachability(net, init);
  const ReachGraph gb = reachability(basic, unfold_marking(net, basic, init));
  const auto r = compare_unfolded(net, gc, basic, gb);
  const double secs = seconds_since(t0);
  return {r.isomorphic && secs < 10.0,
          fmt("states %zu/%zu, edges %zu/%zu, isomorphic %s%s, %.2f s (limit 10 s)", r.coloured_states,
              r.basic_states, r.coloured_edges, r.basic_edges, r.isomorphic ? "yes" : "no",
              r.reason.empty() ? "" : (" (" + r.reason + ")").c_str(), secs)};
}

// 3 ---------------------------------------------------------------------------

Outcome calibration() {
  const Net net(castel::testing::self_loop_spec(4.0));
  Simulator sim(net, net.initial(), 20240601);
  constexpr std::size_t n = 1000000;
  std::vector<double> xs;
  xs.reserve(n);
  double last = 0.0;
  while (xs.size() < n) {
    if (!sim.step(1e300)) break;
    xs.push_back(sim.time() - last);
    last = sim.time();
  }
  const double mean = stats::mean(xs);
  const double rel = std::fabs(mean - 0.25) / 0.25;
  const double d = stats::ks_statistic(xs, [](double x) { return 1.0 - std::exp(-4.0 * x); });
  const double pv = stats::ks_pvalue(d, xs.size());
  return {xs.size() == n && rel < 0.01 && pv > 0.01,
          fmt("mean %.6f (rel. error %.2e, limit 1e-2), KS D=%.2e p=%.3f (alpha 0.01)", mean, rel, d, pv)};
}

// 4 ---------------------------------------------------------------------------

constexpr double kAgreementLevel = 0.99;
constexpr std::size_t kAgreementSamples = 100000;

// Instance set fixed in advance: every template at every bound on three
// tiny models. A pair disagrees when the exact probability lies outside
// the 99% Wilson interval of the SMC estimate.
std::vector<std::string> agreement_formulas() {
  struct Template {
    std::string body;  // contains {B}
    std::vector<std::string> bounds;
  };
  const std::vector<Template> ts = {
      {"F{B} count(Z) = 2", {"[t<=0.25]", "[t<=0.5]", "[t<=1]", "[t<=2]", "[t<=4]"}},
      {"count(L) >= 1 U{B} exists(Z: m >= 1)", {"[t<=0.25]", "[t<=0.5]", "[t<=1]", "[t<=2]", "[t<=3]"}},
      {"G{B} count(K) >= 1", {"[t<=0.25]", "[t<=0.5]", "[t<=1]", "[t<=2]", "[t<=3]"}},
      {"count(Z) <= 1 W{B} exists(Z: m >= 1)", {"[t<=0.25]", "[t<=0.5]", "[t<=1]", "[t<=2]", "[t<=3]"}},
      {"F{B} exists(Z: f = T)", {"[s<=1]", "[s<=2]", "[s<=3]", "[s<=4]", "[s<=6]"}},
      {"F{B} exists(Z: f = T and t = B)",
       {"[s<=1 by (t = B)]", "[s<=2 by (t = B)]", "[s<=3 by (t = B)]", "[s<=4 by (t = B)]", "[s<=6 by (t = B)]"}},
      {"not exists(Z: m >= 1) U{B} count(K) >= 2", {"[s<=2]", "[s<=3]", "[s<=4]", "[s<=6]", "[s<=8]"}},
  };
  std::vector<std::string> out;
  for (const auto& t : ts)
    for (const auto& b : t.bounds) {
      std::string body = t.body;
      body.replace(body.find("{B}"), 3, b);
      out.push_back("P>=0.5 [ " + body + " ]");
    }
  return out;
}

Outcome agreement() {
  // Two-state chain at T = 1.
  const Net two(castel::testing::two_state_spec(1.0));
  const auto f = parse_formula("P>=0.5 [ F[t<=1] count(dst) = 1 ]");
  const double truth = 1.0 - std::exp(-1.0);
  const double ex = exact_check(two, two.initial(), *f).probability;
  SmcOptions so;
  so.samples = 100000;
  so.level = 0.99;
  so.seed = 7;
  const auto smc = smc_check(two, two.initial(), *f, so);
  const bool chain_ok = std::fabs(ex - truth) <= 1e-6 && smc.ci.lo <= truth && truth <= smc.ci.hi;

  const std::vector<std::pair<const char*, deadspot::Params>> models = {
      {"tiny(2,1)", deadspot::tiny(2, 1)},
      {"tiny(2,1) no jmp", deadspot::tiny(2, 1, false)},
      {"tiny(3,1)", deadspot::tiny(3, 1)},
  };
  const auto formulas = agreement_formulas();
  std::size_t pairs = 0, outside = 0, decided = 0, wrong = 0, states = 0;
  SmcOptions o;
  o.samples = kAgreementSamples;
  o.level = kAgreementLevel;
  o.horizon = 200.0;
  o.jobs = 0;
  for (const auto& [label, params] : models) {
    auto [net, init] = deadspot::build(params);
    for (const auto& text : formulas) {
      const auto g = parse_formula(text);
      const auto x = exact_check(net, init, *g);
      states = std::max(states, x.states);
      o.seed = 1 + kAgreementSamples * pairs;
      const auto r = smc_check(net, init, *g, o);
      ++pairs;
      if (x.probability < r.ci.lo - 1e-12 || x.probability > r.ci.hi + 1e-12) {
        ++outside;
        std::cout << "    outside CI: " << label << "  " << text << "  exact " << x.probability << "  smc "
                  << r.estimate << " [" << r.ci.lo << ", " << r.ci.hi << "]\n";
      }
      if (r.verdict != Verdict::Undecided) {
        ++decided;
        wrong += (r.verdict == Verdict::Holds) != compare(x.probability, g->cmp, g->value);
      }
    }
  }
  const double rate = static_cast<double>(outside) / static_cast<double>(pairs);
  return {chain_ok && pairs >= 20 && rate <= 0.02,
          fmt("two-state: exact %.9f (err %.1e), SMC %.5f 99%% CI [%.5f, %.5f]; tiny models: %zu pairs (largest chain "
              "%zu states), %zu with exact outside the 99%% CI (rate %.3f, limit 0.02); verdicts at q=0.5: %zu decided, "
              "%zu wrong",
              ex, std::fabs(ex - truth), smc.estimate, smc.ci.lo, smc.ci.hi, pairs, states, outside, rate, decided,
              wrong)};
}

// 5 ---------------------------------------------------------------------------

Outcome spatial_soundness() {
  const auto p = castel::testing::solitary_params();
  auto [net, ignored] = deadspot::build(p);
  const Net basic = unfold(net);
  const auto& rn = *net.road_network();
  ExactOptions eo;
  eo.coloured = &net;
  SmcOptions so;
  so.samples = 10000;
  so.horizon = 1000.0;
  so.level = 0.99;
  bool ok = true;
  std::string detail;
  for (const char* route : {"ATB", "ATC", "BTA", "BTC", "CTA", "CTB"}) {
    const std::string f(1, route[0]), t(1, route[2]);
    const Marking init = castel::testing::solitary_marking(net, f, t);
    const int S = rn.start_zone(f) + rn.start_zone(t);
    const auto g = parse_formula("P>=1 [ true U[s<=" + std::to_string(S) + "] count(Z) = 0 ]");
    const double ex = exact_check(basic, unfold_marking(net, basic, init), *g, eo).probability;
    const auto r = smc_check(net, init, *g, so);
    const bool route_ok = std::fabs(ex - 1.0) <= 1e-9 && r.successes == r.samples && r.truncated == 0;
    ok = ok && route_ok;
    detail += fmt("%s S=%d exact %.12f smc %zu/%zu; ", route, S, ex, r.successes, r.samples);
  }
  detail += fmt("unfolded net %zu places, %zu transitions", basic.places().size(), basic.transitions().size());
  return {ok, detail};
}

// 6 ---------------------------------------------------------------------------

constexpr std::size_t kPairedRuns = 2000;

Outcome protocol_benefit() {
  deadspot::Params with;
  with.N = 10;
  with.d_close = 2.0;
  deadspot::Params without = with;
  without.jmp = false;
  auto [nj, ij] = deadspot::build(with);
  auto [nn, in] = deadspot::build(without);
  SimOptions o;
  o.observer = deadspot::message_tracker();
  std::vector<deadspot::RunDelivery> a(kPairedRuns), b(kPairedRuns);
  std::vector<std::vector<deadspot::DeliveryRecord>> ra(kPairedRuns), rb(kPairedRuns);
  parallel_for(kPairedRuns, 0, [&](std::size_t i) {
    const Trace tj = simulate(nj, ij, 100.0, 1 + i, o);
    ra[i] = deadspot::delivery_records(tj);
    a[i] = deadspot::run_delivery(tj, ra[i]);
    const Trace tn = simulate(nn, in, 100.0, 1 + i, o);
    rb[i] = deadspot::delivery_records(tn);
    b[i] = deadspot::run_delivery(tn, rb[i]);
  });
  std::vector<double> diff;
  for (std::size_t i = 0; i < kPairedRuns; ++i)
    if (!std::isnan(a[i].mean_delay) && !std::isnan(b[i].mean_delay)) diff.push_back(b[i].mean_delay - a[i].mean_delay);
  const double m = stats::mean(diff);
  const double se = stats::standard_error(diff);
  const double lo = m - stats::normal_quantile(0.95) * se;  // one-sided 95% lower bound
  auto flatten = [](std::vector<std::vector<deadspot::DeliveryRecord>>& rs) {
    std::vector<deadspot::DeliveryRecord> out;
    for (auto& r : rs) out.insert(out.end(), r.begin(), r.end());
    return out;
  };
  const auto sj = deadspot::summarize_delivery(a, flatten(ra));
  const auto sn = deadspot::summarize_delivery(b, flatten(rb));
  return {lo > 0.0,
          fmt("mean delay jmp %.3f vs no-jmp %.3f; paired difference %.3f (one-sided 95%% lower bound %.3f, %zu pairs); "
              "half-time fraction jmp %.3f [%.3f, %.3f], no-jmp %.3f [%.3f, %.3f]",
              sj.mean_delay, sn.mean_delay, m, lo, diff.size(), sj.half_time_fraction, sj.half_time_ci.lo,
              sj.half_time_ci.hi, sn.half_time_fraction, sn.half_time_ci.lo, sn.half_time_ci.hi)};
}

// 7 ---------------------------------------------------------------------------

Outcome satellite_fit() {
  std::vector<double> xs, ys;
  for (int n = 1; n <= 9; ++n) {
    xs.push_back(n);
    ys.push_back(0.37 * n + 1.25);
  }
  const auto fit = stats::fit_linear(xs, ys);
  const bool synthetic = std::fabs(fit.slope - 0.37) <= 1e-9 && std::fabs(fit.intercept - 1.25) <= 1e-9 &&
                         std::fabs(fit.r2 - 1.0) <= 1e-9;
  deadspot::SweepRunOptions ro;
  ro.jobs = 0;
  const auto r = deadspot::satellite_sweep(deadspot::Params{}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, 100, ro);
  std::string factors;
  for (const auto& p : r.points) factors += fmt("%s%.2f", factors.empty() ? "" : " ", p.factor);
  return {synthetic && r.non_decreasing,
          fmt("synthetic A=%.12f B=%.12f R2=%.12f; sweep factors n=1..9: %s; fit A=%.3f B=%.3f R2=%.3f; "
              "non-decreasing at 95%%: %s",
              fit.slope, fit.intercept, fit.r2, factors.c_str(), r.fit.slope, r.fit.intercept, r.fit.r2,
              r.non_decreasing ? "yes" : "no")};
}

// 8 ---------------------------------------------------------------------------

// Components via the transitive closure of the adjacency matrix.
std::set<std::vector<int>> closure_components(const ProximityGraph& g, std::size_t k) {
  const std::size_t n = g.ids.size();
  std::vector<std::vector<bool>> r(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) r[i][i] = true;
  for (auto [a, b] : g.edges) r[a][b] = r[b][a] = true;
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (r[i][m] && r[m][j]) r[i][j] = true;
  std::set<std::vector<int>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> comp;
    for (std::size_t j = 0; j < n; ++j)
      if (r[i][j]) comp.push_back(g.ids[j]);
    std::sort(comp.begin(), comp.end());
    if (comp.size() >= k) out.insert(comp);
  }
  return out;
}

Outcome bubble_oracle() {
  std::mt19937_64 rng(99);
  std::size_t graphs = 0, queries = 0, mismatches = 0;
  for (; graphs < 500; ++graphs) {
    ProximityGraph g;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 12)(rng);
    const double density = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
    for (std::size_t i = 0; i < n; ++i) g.ids.push_back(static_cast<int>(100 + 7 * i));
    std::shuffle(g.ids.begin(), g.ids.end(), rng);
    g.positions.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (std::bernoulli_distribution(density)(rng)) g.edges.emplace_back(i, j);
    for (std::size_t k = 2; k <= 13; ++k) {
      ++queries;
      std::set<std::vector<int>> got;
      bool support_ok = true;
      for (const auto& b : bubbles(g, k)) {
        std::vector<int> m = b.members;
        std::sort(m.begin(), m.end());
        got.insert(m);
        const std::set<int> in(m.begin(), m.end());
        std::size_t induced = 0;
        for (auto [x, y] : g.edges) induced += in.count(g.ids[x]) && in.count(g.ids[y]);
        support_ok = support_ok && induced == b.support.size();
      }
      if (got != closure_components(g, k) || !support_ok) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%zu random graphs (0..12 nodes), %zu (graph, k) queries, %zu mismatches", graphs,
                               queries, mismatches)};
}

// 9 ---------------------------------------------------------------------------

std::map<std::string, std::string> primary_outputs(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.find(".meta.json") != std::string::npos) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[name] = ss.str();
  }
  return out;
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / ("castel_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string scen = CASTEL_SCENARIOS;
  const std::vector<std::vector<std::string>> commands = {
      {"simulate", "--scenario", scen + "/default.json", "--runs", "20", "--seed", "42"},
      {"simulate", "--scenario", scen + "/default.json", "--runs", "5", "--no-jmp"},
      {"check", "--scenario", scen + "/tiny.json", "--formula", scen + "/tiny.formula", "--runs", "3000", "--exact"},
      {"check", "--scenario", scen + "/dense.json", "--formula", scen + "/bubbles.formula", "--runs", "500"},
      {"sweep", "--grid", scen + "/n_grid.json", "--runs", "8", "--horizon", "40"},
      {"sweep", "--scenario", scen + "/toy_bounded.json", "--grid", scen + "/toy_rate_grid.json"},
      {"reach", "--scenario", scen + "/tiny.json", "--unfold"},
  };
  std::size_t compared = 0, differing = 0, failed = 0;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    std::vector<std::map<std::string, std::string>> outs;
    for (const char* jobs : {"1", "1", "3"}) {
      const fs::path dir = root / (std::to_string(c) + "_" + std::to_string(outs.size()));
      std::vector<std::string> args = {"castel"};
      args.insert(args.end(), commands[c].begin(), commands[c].end());
      for (const std::string& extra : {std::string("--jobs"), std::string(jobs), std::string("--out"), dir.string()})
        args.push_back(extra);
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream out, err;
      if (cli::run(static_cast<int>(argv.size()), argv.data(), out, err) != 0) {
        ++failed;
        std::cout << "    command failed: " << commands[c][0] << ": " << err.str();
      }
      outs.push_back(primary_outputs(dir));
    }
    for (std::size_t k = 1; k < outs.size(); ++k) {
      ++compared;
      if (outs[k] != outs[0] || outs[0].empty()) ++differing;
    }
  }
  fs::remove_all(root);
  return {failed == 0 && differing == 0,
          fmt("%zu commands, %zu reruns compared (same jobs and jobs 1 vs 3), %zu differ, %zu failed",
              commands.size(), compared, differing, failed)};
}

}  // namespace

// Optional arguments select criteria by number.
int main(int argc, char** argv) {
  std::set<std::string> only(argv + 1, argv + argc);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"1 conservation", conservation},
      {"2 unfolding equivalence", unfolding},
      {"3 SSA calibration", calibration},
      {"4 exact/statistical agreement", agreement},
      {"5 spatial-bound soundness", spatial_soundness},
      {"6 protocol benefit", protocol_benefit},
      {"7 satellite fit", satellite_fit},
      {"8 bubble oracle", bubble_oracle},
      {"9 determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && !only.count(std::string(name).substr(0, 1))) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  (" << fmt("%.1f s", seconds_since(t0)) << ")  "
              << o.detail << std::endl;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all passed")
            << std::endl;
  return failures ? 1 : 0;
}
