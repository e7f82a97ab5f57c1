#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/poisson.hpp>

#include "castel/delivery.hpp"
#include "castel/logic.hpp"
#include "castel/reach.hpp"
#include "castel/sim.hpp"
#include "castel/stats.hpp"
#include "castel/unfold.hpp"

namespace castel {

/// Spatial step weight of a firing under a bound. Without a `by` condition
/// every spatial firing counts with its own step weight; with one, only
/// firings whose binding satisfies the condition count. For unfolded nets,
/// pass the coloured net so conditions see the original variables.
class StepFilter {
 public:
  StepFilter(const Net& net, const std::string& by, const Net* coloured = nullptr) {
    if (by.empty()) return;
    filtered_ = true;
    const Expr e = parse_expr(by);
    entries_.resize(net.transitions().size());
    for (std::size_t t = 0; t < net.transitions().size(); ++t) {
      const auto& tr = net.transitions()[t];
      if (!tr.spatial) continue;
      const Transition* target = &tr;
      const Net* owner = &net;
      Entry& en = entries_[t];
      if (coloured && !tr.origin.empty()) {
        target = &coloured->transitions()[coloured->transition(tr.origin)];
        owner = coloured;
        for (const auto& [name, v] : tr.origin_binding) en.fixed.push_back(v);
      }
      const Resolver resolve = [&](const std::string& n) -> std::optional<NameRef> {
        if (auto s = target->slot(n)) return NameRef{true, *s, 0.0};
        if (auto c = owner->constant(n)) return NameRef{false, -1, *c};
        if (auto a = owner->atoms().find(n)) return NameRef{false, -1, static_cast<double>(*a)};
        return std::nullopt;
      };
      try {
        en.cond = CompiledExpr::compile(e, resolve, owner->functions());
      } catch (const ParseError& err) {
        throw ConfigError("spatial filter does not apply to transition '" + target->name + "': " + err.what());
      }
    }
  }

  double operator()(const EnabledFiring& f) const {
    if (!filtered_ || f.steps == 0.0) return f.steps;
    const Entry& en = entries_[f.transition];
    const Value* b = en.fixed.empty() ? f.binding.data() : en.fixed.data();
    return en.cond.test(b) ? f.steps : 0.0;
  }

 private:
  struct Entry {
    CompiledExpr cond;
    std::vector<Value> fixed;  // binding of the originating coloured transition
  };
  bool filtered_ = false;
  std::vector<Entry> entries_;
};

/// Incremental evaluation of a bounded path formula along one path, fed
/// state by state. `decided()` becomes set as soon as the outcome is known.
class PathMonitor {
 public:
  PathMonitor(const Net& net, const PathFormula& path, const Net* coloured = nullptr)
      : path_(path),
        phi_(coloured ? *coloured : net, *path.phi),
        psi_(coloured ? *coloured : net, *path.psi),
        filter_(net, path.bound.by, coloured) {
    if (coloured) fold_.emplace(*coloured, net);
  }

  std::optional<bool> decided() const { return verdict_; }
  bool weak() const { return path_.kind == PathFormula::Kind::Weak; }

  void start(const Marking& m, const TraceState* trace = nullptr) {
    verdict_.reset();
    steps_ = 0.0;
    visit(m, trace);
  }

  /// State reached by firing `f` at `time`.
  void step(const EnabledFiring& f, double time, const Marking& after, const TraceState* trace = nullptr) {
    if (verdict_) return;
    if (path_.bound.kind == Bound::Kind::Time && time > path_.bound.limit) {
      verdict_ = weak();
      return;
    }
    steps_ += filter_(f);
    if (path_.bound.kind == Bound::Kind::Space && steps_ > path_.bound.limit) {
      verdict_ = weak();
      return;
    }
    visit(after, trace);
  }

  /// Ends the path: the last state persists, or observation stops. Until
  /// fails and weak until holds since phi held at every visited state.
  bool finish() {
    if (!verdict_) verdict_ = weak();
    return *verdict_;
  }

  double steps() const { return steps_; }

 private:
  void visit(const Marking& m, const TraceState* trace) {
    const Marking* state = &m;
    Marking folded;
    if (fold_) {
      folded = (*fold_)(m);
      state = &folded;
    }
    if (psi_(*state, trace)) {
      verdict_ = true;
    } else if (!phi_(*state, trace)) {
      verdict_ = false;
    }
  }

  const PathFormula& path_;
  StateEvaluator phi_;
  StateEvaluator psi_;
  StepFilter filter_;
  std::optional<MarkingFolder> fold_;
  std::optional<bool> verdict_;
  double steps_ = 0.0;
};

/// Evaluates a path formula on a recorded trace. A trace that ends before
/// the outcome is decided counts as ending in its final marking.
inline bool path_holds(const Net& net, const Marking& init, const Trace& trace, const PathFormula& path) {
  PathMonitor mon(net, path);
  Marking m = init;
  mon.start(m);
  for (const auto& ev : trace.events) {
    if (mon.decided()) break;
    EnabledFiring f{ev.transition, ev.binding, 0.0, 0.0};
    const auto& tr = net.transitions()[ev.transition];
    if (tr.spatial) f.steps = tr.steps.eval(ev.binding.data());
    fire_in_place(net, m, f);
    mon.step(f, ev.time, m);
  }
  return mon.finish();
}

enum class Verdict { Holds, Fails, Undecided, Estimate };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Holds: return "holds";
    case Verdict::Fails: return "fails";
    case Verdict::Undecided: return "undecided";
    case Verdict::Estimate: return "estimate";
  }
  return "?";
}

struct SmcOptions {
  std::size_t samples = 1000;
  double level = 0.95;
  double horizon = 100.0;  // simulation cut-off for space-bounded paths
  std::uint64_t seed = 1;
  unsigned jobs = 1;
};

struct CheckResult {
  std::string formula;
  double estimate = 0.0;
  stats::Interval ci;
  std::size_t samples = 0;
  std::size_t successes = 0;
  std::size_t truncated = 0;  // space-bounded samples cut off by the horizon
  double level = 0.95;
  Verdict verdict = Verdict::Estimate;
};

/// Verdict of P cmp q given a confidence interval; undecided while q lies
/// inside the interval.
inline Verdict decide(Cmp cmp, double q, const stats::Interval& ci) {
  const bool above = ci.lo > q;
  const bool below = ci.hi < q;
  switch (cmp) {
    case Cmp::Gt:
    case Cmp::Ge: return above ? Verdict::Holds : below ? Verdict::Fails : Verdict::Undecided;
    case Cmp::Lt:
    case Cmp::Le: return below ? Verdict::Holds : above ? Verdict::Fails : Verdict::Undecided;
    default: return Verdict::Undecided;
  }
}

namespace detail {

inline void require_checkable(const StateFormula& f) {
  if (has_nested_prob(f)) throw UnsupportedError("nested probability operators are not supported");
}

// Counts created and delivered messages through the deadspot tracker.
class DeliveryCounter {
 public:
  DeliveryCounter(const Net& net, const Marking& init) : tracker_(deadspot::message_tracker()()) {
    tracker_->on_start(net, init);
  }

  const TraceState& fire(const Net& net, double time, const EnabledFiring& f, const Marking& after) {
    notes_.clear();
    tracker_->on_fire(net, time, f, after, notes_);
    for (const auto& a : notes_) {
      if (a.kind == Annotation::Kind::Created) ++state_.created;
      if (a.kind == Annotation::Kind::Delivered) ++state_.delivered;
    }
    return state_;
  }

  const TraceState& state() const { return state_; }

 private:
  std::unique_ptr<Observer> tracker_;
  std::vector<Annotation> notes_;
  TraceState state_;
};

}  // namespace detail

/// Statistical check of P cmp q [path] from independent simulated paths,
/// sample i using seed + i. Formulas without a probability operator are
/// evaluated on the initial marking.
inline CheckResult smc_check(const Net& net, const Marking& init, const StateFormula& f, const SmcOptions& o = {}) {
  detail::require_checkable(f);
  CheckResult r;
  r.formula = to_string(f);
  r.level = o.level;
  stats::z_value(o.level);
  if (f.kind != StateFormula::Kind::Prob) {
    if (uses_delivered(f)) throw ConfigError("delivered needs a path context");
    const bool v = StateEvaluator(net, f)(init);
    r.estimate = v ? 1.0 : 0.0;
    r.ci = {r.estimate, r.estimate};
    r.verdict = v ? Verdict::Holds : Verdict::Fails;
    return r;
  }
  if (o.samples == 0) throw ConfigError("sample count must be at least 1");
  const PathFormula& path = *f.path;
  const bool timed = path.bound.kind == Bound::Kind::Time;
  const double limit = timed ? path.bound.limit : o.horizon;
  if (!(limit > 0) || !std::isfinite(limit)) throw ConfigError("horizon must be positive and finite");
  net.validate(init);
  const bool delivery = uses_delivered(f);
  PathMonitor probe(net, path);  // reports formula errors before any worker starts

  std::vector<char> ok(o.samples, 0), cut(o.samples, 0);
  parallel_for(o.samples, o.jobs, [&](std::size_t i) {
    PathMonitor mon(net, path);
    Simulator sim(net, init, o.seed + i);
    std::optional<detail::DeliveryCounter> counter;
    if (delivery) counter.emplace(net, init);
    mon.start(init, counter ? &counter->state() : nullptr);
    while (!mon.decided()) {
      auto fired = sim.step(limit);
      if (!fired) {
        if (!timed && sim.total_rate() > 0) cut[i] = 1;
        break;
      }
      const TraceState* ts = counter ? &counter->fire(net, sim.time(), *fired, sim.marking()) : nullptr;
      mon.step(*fired, sim.time(), sim.marking(), ts);
    }
    ok[i] = mon.finish() ? 1 : 0;
  });

  r.samples = o.samples;
  r.successes = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
  r.truncated = static_cast<std::size_t>(std::count(cut.begin(), cut.end(), 1));
  r.estimate = static_cast<double>(r.successes) / static_cast<double>(r.samples);
  r.ci = stats::wilson(r.successes, r.samples, o.level);
  r.verdict = f.query ? Verdict::Estimate : decide(f.cmp, f.value, r.ci);
  return r;
}

inline CheckResult smc_check(const Net& net, const Marking& init, std::string_view text, const SmcOptions& o = {}) {
  return smc_check(net, init, *parse_formula(text), o);
}

// ---------------------------------------------------------------------------
// Exact checking on explicit chains

/// Prob(phi U[t<=T] psi) from every state, by uniformization of the chain
/// with psi and not-phi states made absorbing. The Poisson series is cut
/// where its remaining mass drops below eps.
inline std::vector<double> exact_bounded_until(const Ctmc& c, const std::vector<bool>& phi,
                                               const std::vector<bool>& psi, double T, double eps = 1e-6) {
  if (c.n == 0) throw Error("empty chain");
  if (phi.size() != c.n || psi.size() != c.n) throw Error("label vectors do not match the chain");
  if (!(T > 0) || !std::isfinite(T)) throw ConfigError("time bound must be positive");
  if (!(eps > 0 && eps < 1)) throw ConfigError("truncation error must lie in (0, 1)");

  std::vector<CtmcEntry> gen;
  std::vector<double> exit(c.n, 0.0);
  for (const auto& e : c.generator())
    if (phi[e.from] && !psi[e.from]) {
      gen.push_back(e);
      exit[e.from] += e.rate;
    }
  std::vector<double> v(c.n);
  for (std::size_t s = 0; s < c.n; ++s) v[s] = psi[s] ? 1.0 : 0.0;
  const double q = *std::max_element(exit.begin(), exit.end());
  if (q == 0.0) return v;

  const boost::math::poisson_distribution<double> pois(q * T);
  const auto K = static_cast<std::size_t>(std::ceil(boost::math::quantile(boost::math::complement(pois, eps))));
  std::vector<double> result(c.n, 0.0), next(c.n);
  for (std::size_t k = 0;; ++k) {
    const double w = boost::math::pdf(pois, static_cast<double>(k));
    for (std::size_t s = 0; s < c.n; ++s) result[s] += w * v[s];
    if (k >= K) break;
    next = v;
    for (const auto& e : gen) next[e.from] += e.rate / q * (v[e.to] - v[e.from]);
    v.swap(next);
  }
  for (auto& x : result) x = std::clamp(x, 0.0, 1.0);
  return result;
}

/// Weak variant: phi W[t<=T] psi = not (not psi U[t<=T] (not phi and not psi)).
inline std::vector<double> exact_bounded_unless(const Ctmc& c, const std::vector<bool>& phi,
                                                const std::vector<bool>& psi, double T, double eps = 1e-6) {
  std::vector<bool> not_psi(c.n), bad(c.n);
  for (std::size_t s = 0; s < phi.size() && s < c.n; ++s) {
    not_psi[s] = !psi[s];
    bad[s] = !phi[s] && !psi[s];
  }
  if (phi.size() != c.n || psi.size() != c.n) throw Error("label vectors do not match the chain");
  auto p = exact_bounded_until(c, not_psi, bad, T, eps);
  for (auto& x : p) x = 1.0 - x;
  return p;
}

/// Prob(phi U[s<=S] psi) from every state: psi must be reached before the
/// accumulated step weight of the path exceeds S, with phi holding until
/// then. Time is unbounded. Solved on the product of the chain with the
/// step counter, one counter layer at a time from S down to 0.
inline std::vector<double> exact_space_until(const Ctmc& c, const std::vector<bool>& phi,
                                             const std::vector<bool>& psi, std::size_t S, double tol = 1e-13) {
  if (c.n == 0) throw Error("empty chain");
  if (phi.size() != c.n || psi.size() != c.n) throw Error("label vectors do not match the chain");
  struct Out {
    std::size_t to;
    double p;
    std::size_t w;
  };
  std::vector<std::vector<Out>> out(c.n);
  std::vector<double> exit(c.n, 0.0);
  for (const auto& e : c.entries) {
    if (e.steps < 0 || e.steps != std::floor(e.steps)) throw Error("step weights must be non-negative integers");
    exit[e.from] += e.rate;
  }
  for (const auto& e : c.entries)
    if (phi[e.from] && !psi[e.from]) out[e.from].push_back({e.to, e.rate / exit[e.from], static_cast<std::size_t>(e.steps)});

  std::vector<std::vector<double>> x(S + 1, std::vector<double>(c.n, 0.0));
  std::vector<double> base(c.n);
  for (std::size_t layer = S + 1; layer-- > 0;) {
    auto& cur = x[layer];
    for (std::size_t s = 0; s < c.n; ++s) {
      base[s] = psi[s] ? 1.0 : 0.0;
      for (const auto& o : out[s])
        if (o.w > 0 && layer + o.w <= S) base[s] += o.p * x[layer + o.w][o.to];
      cur[s] = base[s];
    }
    // Zero-weight moves stay in the layer; Gauss-Seidel from below converges
    // monotonically to the least fixed point.
    for (std::size_t it = 0; it < 1000000; ++it) {
      double delta = 0.0;
      for (std::size_t s = 0; s < c.n; ++s) {
        if (out[s].empty()) continue;
        double v = base[s];
        for (const auto& o : out[s])
          if (o.w == 0) v += o.p * cur[o.to];
        delta = std::max(delta, std::fabs(v - cur[s]));
        cur[s] = v;
      }
      if (delta < tol) break;
    }
  }
  for (auto& v : x[0]) v = std::clamp(v, 0.0, 1.0);
  return x[0];
}

inline std::vector<double> exact_space_unless(const Ctmc& c, const std::vector<bool>& phi,
                                              const std::vector<bool>& psi, std::size_t S, double tol = 1e-13) {
  if (phi.size() != c.n || psi.size() != c.n) throw Error("label vectors do not match the chain");
  std::vector<bool> not_psi(c.n), bad(c.n);
  for (std::size_t s = 0; s < c.n; ++s) {
    not_psi[s] = !psi[s];
    bad[s] = !phi[s] && !psi[s];
  }
  auto p = exact_space_until(c, not_psi, bad, S, tol);
  for (auto& v : p) v = 1.0 - v;
  return p;
}

struct ExactOptions {
  std::size_t state_limit = kDefaultStateLimit;
  double epsilon = 1e-6;
  const Net* coloured = nullptr;  // set when checking an unfolded net
};

struct ExactResult {
  double probability = 0.0;
  std::size_t states = 0;
  std::size_t transitions = 0;
};

/// Exact probability of the path formula of `f` from `init`, over the full
/// reachability graph. Throws StateLimitError when the graph is too large.
inline ExactResult exact_check(const Net& net, const Marking& init, const StateFormula& f, const ExactOptions& o = {}) {
  detail::require_checkable(f);
  if (uses_delivered(f)) throw UnsupportedError("delivered has no exact semantics on a chain");
  std::optional<MarkingFolder> fold;
  if (o.coloured) fold.emplace(*o.coloured, net);
  const Net& labels_net = o.coloured ? *o.coloured : net;
  auto folded = [&](const Marking& m) { return fold ? (*fold)(m) : m; };

  ExactResult r;
  if (f.kind != StateFormula::Kind::Prob) {
    r.probability = StateEvaluator(labels_net, f)(folded(init)) ? 1.0 : 0.0;
    return r;
  }
  const PathFormula& path = *f.path;
  const StateEvaluator phi_eval(labels_net, *path.phi), psi_eval(labels_net, *path.psi);
  const StepFilter filter(net, path.bound.by, o.coloured);

  const ReachGraph g = reachability(net, init, o.state_limit);
  const Ctmc c = to_ctmc(g, {}, [&](const ReachEdge& e) { return filter(e.firing); });
  r.states = c.n;
  r.transitions = c.entries.size();
  std::vector<bool> phi(c.n), psi(c.n);
  for (std::size_t s = 0; s < c.n; ++s) {
    const Marking m = folded(g.states[s]);
    phi[s] = phi_eval(m);
    psi[s] = psi_eval(m);
  }
  const bool weak = path.kind == PathFormula::Kind::Weak;
  std::vector<double> p;
  if (path.bound.kind == Bound::Kind::Time) {
    p = weak ? exact_bounded_unless(c, phi, psi, path.bound.limit, o.epsilon)
             : exact_bounded_until(c, phi, psi, path.bound.limit, o.epsilon);
  } else {
    const auto S = static_cast<std::size_t>(path.bound.limit);
    p = weak ? exact_space_unless(c, phi, psi, S) : exact_space_until(c, phi, psi, S);
  }
  r.probability = p[c.initial];
  return r;
}

}  // namespace castel
