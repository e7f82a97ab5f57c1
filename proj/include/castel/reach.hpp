#pragma once

#include <algorithm>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "castel/error.hpp"
#include "castel/net.hpp"
#include "castel/semantics.hpp"

namespace castel {

inline constexpr std::size_t kDefaultStateLimit = 100000;

struct ReachEdge {
  std::size_t source = 0;
  std::size_t target = 0;
  EnabledFiring firing;
};

/// Explicit state graph. States are in breadth-first discovery order, which
/// is canonical because enabled_firings is.
struct ReachGraph {
  std::vector<Marking> states;
  std::vector<ReachEdge> edges;
  std::size_t initial = 0;

  std::size_t find(const Marking& m) const {
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i] == m) return i;
    return states.size();
  }
};

/// Breadth-first exploration of every marking reachable from init. Throws
/// StateLimitError once more than `limit` states are discovered.
inline ReachGraph reachability(const Net& net, const Marking& init, std::size_t limit = kDefaultStateLimit) {
  if (limit == 0) throw Error("state limit must be positive");
  net.validate(init);
  ReachGraph g;
  std::unordered_map<Marking, std::size_t, MarkingHash> index;
  g.states.push_back(init);
  index.emplace(init, 0);
  for (std::size_t s = 0; s < g.states.size(); ++s) {
    const auto firings = enabled_firings(net, g.states[s]);
    for (const auto& f : firings) {
      Marking next = g.states[s];
      fire_in_place(net, next, f);
      auto [it, fresh] = index.emplace(std::move(next), g.states.size());
      if (fresh) {
        if (g.states.size() >= limit) throw StateLimitError(limit, s + 1, g.states.size() - s);
        g.states.push_back(it->first);
      }
      g.edges.push_back({s, it->second, f});
    }
  }
  return g;
}

/// Marking predicate used to label CTMC states.
using StatePredicate = std::function<bool(const Marking&)>;

struct CtmcEntry {
  std::size_t from = 0;
  std::size_t to = 0;
  double rate = 0.0;
  double steps = 0.0;
};

/// Continuous-time Markov chain over the states of a ReachGraph. Parallel
/// edges with equal step counts are summed; zero-step self-loops are
/// dropped since they change neither the state nor any step counter.
struct Ctmc {
  std::size_t n = 0;
  std::vector<CtmcEntry> entries;  // sorted by (from, to, steps)
  std::vector<std::string> props;
  std::vector<std::vector<std::size_t>> labels;  // per state: indices into props
  std::size_t initial = 0;

  double exit_rate(std::size_t s) const {
    double r = 0.0;
    for (const auto& e : entries)
      if (e.from == s) r += e.rate;
    return r;
  }

  bool has_label(std::size_t s, const std::string& prop) const {
    for (std::size_t k : labels[s])
      if (props[k] == prop) return true;
    return false;
  }

  std::vector<bool> label_vector(const std::string& prop) const {
    std::vector<bool> v(n, false);
    for (std::size_t s = 0; s < n; ++s) v[s] = has_label(s, prop);
    return v;
  }

  /// Off-diagonal generator entries with step classes merged.
  std::vector<CtmcEntry> generator() const {
    std::map<std::pair<std::size_t, std::size_t>, double> acc;
    for (const auto& e : entries)
      if (e.from != e.to) acc[{e.from, e.to}] += e.rate;
    std::vector<CtmcEntry> out;
    for (const auto& [k, r] : acc) out.push_back({k.first, k.second, r, 0.0});
    return out;
  }
};

/// Step count of a graph edge; defaults to the firing's own spatial steps.
using StepCounter = std::function<double(const ReachEdge&)>;

inline Ctmc to_ctmc(const ReachGraph& g, const std::vector<std::pair<std::string, StatePredicate>>& props = {},
                    const StepCounter& steps = nullptr) {
  Ctmc c;
  c.n = g.states.size();
  c.initial = g.initial;
  std::map<std::tuple<std::size_t, std::size_t, double>, double> acc;
  for (const auto& e : g.edges) {
    const double w = steps ? steps(e) : e.firing.steps;
    if (e.source == e.target && w == 0.0) continue;
    acc[{e.source, e.target, w}] += e.firing.rate;
  }
  for (const auto& [k, r] : acc) c.entries.push_back({std::get<0>(k), std::get<1>(k), r, std::get<2>(k)});
  c.labels.resize(c.n);
  for (const auto& [name, pred] : props) {
    const std::size_t k = c.props.size();
    c.props.push_back(name);
    for (std::size_t s = 0; s < c.n; ++s)
      if (pred(g.states[s])) c.labels[s].push_back(k);
  }
  return c;
}

inline std::string format_rate(double r) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", r);
  return buf;
}

/// PRISM-style explicit transition file: "<states> <entries>" then
/// "i j rate" per line.
inline void write_tra(const Ctmc& c, std::ostream& os) {
  const auto gen = c.generator();
  os << c.n << ' ' << gen.size() << '\n';
  for (const auto& e : gen) os << e.from << ' ' << e.to << ' ' << format_rate(e.rate) << '\n';
}

/// Label file: header `0="init" 1="deadlock" 2="<prop>" ...` then
/// "i: k1 k2 ..." for every state carrying a label.
inline void write_lab(const Ctmc& c, std::ostream& os) {
  const auto gen = c.generator();
  std::vector<bool> has_exit(c.n, false);
  for (const auto& e : gen) has_exit[e.from] = true;
  os << "0=\"init\" 1=\"deadlock\"";
  for (std::size_t k = 0; k < c.props.size(); ++k) os << ' ' << k + 2 << "=\"" << c.props[k] << '"';
  os << '\n';
  for (std::size_t s = 0; s < c.n; ++s) {
    std::vector<std::size_t> ks;
    if (s == c.initial) ks.push_back(0);
    if (!has_exit[s]) ks.push_back(1);
    for (std::size_t k : c.labels[s]) ks.push_back(k + 2);
    if (ks.empty()) continue;
    os << s << ':';
    for (std::size_t k : ks) os << ' ' << k;
    os << '\n';
  }
}

/// State file: one "i:<marking>" line per state.
inline void write_sta(const Net& net, const ReachGraph& g, std::ostream& os) {
  os << "(";
  for (std::size_t p = 0; p < net.places().size(); ++p) os << (p ? "," : "") << net.places()[p].name;
  os << ")\n";
  for (std::size_t s = 0; s < g.states.size(); ++s) os << s << ':' << net.format_marking(g.states[s]) << '\n';
}

inline void write_dot(const Net& net, const ReachGraph& g, std::ostream& os) {
  auto escape = [](const std::string& s) {
    std::string o;
    for (char ch : s) {
      if (ch == '"' || ch == '\\') o += '\\';
      o += ch;
    }
    return o;
  };
  os << "digraph reach {\n  node [shape=box, fontsize=10];\n";
  for (std::size_t s = 0; s < g.states.size(); ++s) {
    os << "  s" << s << " [label=\"" << s << ": " << escape(net.format_marking(g.states[s])) << '"';
    if (s == g.initial) os << ", penwidth=2";
    os << "];\n";
  }
  for (const auto& e : g.edges) {
    const auto& tr = net.transitions()[e.firing.transition];
    os << "  s" << e.source << " -> s" << e.target << " [label=\"" << escape(tr.name) << " "
       << format_rate(e.firing.rate) << "\"];\n";
  }
  os << "}\n";
}

}  // namespace castel
