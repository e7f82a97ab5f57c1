#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "castel/net.hpp"
#include "castel/reach.hpp"
#include "castel/semantics.hpp"

namespace castel {

inline constexpr std::size_t kDefaultUnfoldLimit = 1000000;

namespace detail {

inline std::string basic_place_name(const Net& net, std::size_t p, const Colour& c) {
  const auto& place = net.places()[p];
  if (place.domain.is_dot()) return place.name;
  const std::string s = net.format_colour(p, c);
  return place.domain.arity() == 1 ? place.name + "(" + s + ")" : place.name + s;
}

}  // namespace detail

/// Expands a coloured net into a basic net: one Dot place per (place,
/// colour) and one fundamental transition per guard-satisfying binding.
/// Throws if the binding space of a transition, or the total number of
/// fundamental transitions, exceeds `limit`.
inline Net unfold(const Net& net, std::size_t limit = kDefaultUnfoldLimit) {
  NetSpec out;
  out.name = net.name() + "-unfolded";
  out.constants = net.spec().constants;
  out.domains = net.spec().domains;  // keeps atom ids aligned with the coloured net
  out.road_network = net.spec().road_network;

  std::map<std::pair<std::size_t, Colour>, std::string> place_name;
  for (std::size_t p = 0; p < net.places().size(); ++p) {
    net.places()[p].domain.for_each([&](const Colour& c) {
      const std::string name = detail::basic_place_name(net, p, c);
      place_name[{p, c}] = name;
      out.places.push_back({name, "Dot"});
    });
  }
  for (std::size_t p = 0; p < net.places().size(); ++p)
    for (const auto& [c, n] : net.initial().bags[p].entries())
      out.initial.push_back({place_name.at({p, c}), {{{}, n}}});

  std::size_t total = 0;
  for (std::size_t t = 0; t < net.transitions().size(); ++t) {
    const auto& tr = net.transitions()[t];
    std::size_t space = 1;
    for (const auto& v : tr.vars) {
      if (space > limit / std::max<std::size_t>(1, v.domain.size())) {
        space = limit + 1;
        break;
      }
      space *= v.domain.size();
    }
    if (space > limit)
      throw Error("unfolding transition '" + tr.name + "' exceeds the limit of " + std::to_string(limit) +
                  " fundamental transitions");

    std::vector<std::vector<Value>> bindings;
    std::vector<Value> binding(tr.vars.size(), 0);
    detail::BindingSolver(tr).solve(binding, 0, detail::guard_pending(tr),
                                    [&](const std::vector<Value>& b) { bindings.push_back(b); });
    std::sort(bindings.begin(), bindings.end());
    bindings.erase(std::unique(bindings.begin(), bindings.end()), bindings.end());

    for (const auto& b : bindings) {
      const auto produced = produced_tokens(net, tr, b);
      if (!produced) continue;
      const double rate = tr.rate.eval(b.data());
      if (!(rate > 0))
        throw Error("transition '" + tr.name + "' has non-positive rate for binding " + net.format_binding(t, b));
      if (++total > limit)
        throw Error("unfolding exceeds the limit of " + std::to_string(limit) + " fundamental transitions at '" +
                    tr.name + "'");
      TransitionSpec ts;
      ts.name = tr.name + "{" + net.format_binding(t, b) + "}";
      ts.rate = format_rate(rate);
      ts.steps = tr.spatial ? format_rate(tr.steps.eval(b.data())) : "0";
      ts.tags = tr.tags;
      ts.origin = tr.name;
      for (std::size_t i = 0; i < tr.vars.size(); ++i) ts.origin_binding.emplace_back(tr.vars[i].name, b[i]);
      EnabledFiring f{t, b, rate, 0.0};
      for (const auto& d : consumed_tokens(net, f)) ts.inputs.push_back({place_name.at({d.place, d.colour}), {}, d.count});
      for (const auto& d : *produced)
        ts.outputs.push_back({place_name.at({d.place, d.colour}), {}, std::to_string(d.count)});
      out.transitions.push_back(std::move(ts));
    }
  }
  return Net(std::move(out));
}

/// Image of a coloured marking in the unfolded net.
inline Marking unfold_marking(const Net& coloured, const Net& basic, const Marking& mk) {
  Marking out = basic.empty_marking();
  for (std::size_t p = 0; p < coloured.places().size(); ++p)
    for (const auto& [c, n] : mk.bags[p].entries())
      out.bags[basic.place(detail::basic_place_name(coloured, p, c))].add(Colour{}, n);
  return out;
}

/// Maps markings of an unfolded net back to the coloured net it came from.
class MarkingFolder {
 public:
  MarkingFolder(const Net& coloured, const Net& basic) : coloured_(&coloured) {
    origin_.assign(basic.places().size(), {0, Colour{}});
    std::vector<bool> seen(basic.places().size(), false);
    for (std::size_t p = 0; p < coloured.places().size(); ++p)
      coloured.places()[p].domain.for_each([&](const Colour& c) {
        auto b = basic.find_place(detail::basic_place_name(coloured, p, c));
        if (!b) throw Error("net is not an unfolding of '" + coloured.name() + "'");
        origin_[*b] = {p, c};
        seen[*b] = true;
      });
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
      throw Error("net is not an unfolding of '" + coloured.name() + "'");
  }

  Marking operator()(const Marking& m) const {
    Marking out = coloured_->empty_marking();
    for (std::size_t b = 0; b < m.bags.size(); ++b) {
      const auto n = m.bags[b].total();
      if (n) out.bags[origin_[b].first].add(origin_[b].second, static_cast<std::uint32_t>(n));
    }
    return out;
  }

 private:
  const Net* coloured_;
  std::vector<std::pair<std::size_t, Colour>> origin_;
};

struct IsomorphismReport {
  bool isomorphic = false;
  std::size_t coloured_states = 0;
  std::size_t basic_states = 0;
  std::size_t coloured_edges = 0;
  std::size_t basic_edges = 0;
  std::string reason;
};

/// Compares the reachability graph of a coloured net with that of its
/// unfolding under the canonical marking correspondence: the state sets
/// must correspond one to one and the multisets of (source, target,
/// transition, rate) edges must coincide.
inline IsomorphismReport compare_unfolded(const Net& coloured, const ReachGraph& gc, const Net& basic,
                                          const ReachGraph& gb) {
  IsomorphismReport r;
  r.coloured_states = gc.states.size();
  r.basic_states = gb.states.size();
  r.coloured_edges = gc.edges.size();
  r.basic_edges = gb.edges.size();
  if (r.coloured_states != r.basic_states) {
    r.reason = "state counts differ";
    return r;
  }
  std::unordered_map<Marking, std::size_t, MarkingHash> basic_index;
  for (std::size_t s = 0; s < gb.states.size(); ++s) basic_index.emplace(gb.states[s], s);
  std::vector<std::size_t> map(gc.states.size());
  std::vector<bool> hit(gb.states.size(), false);
  for (std::size_t s = 0; s < gc.states.size(); ++s) {
    auto it = basic_index.find(unfold_marking(coloured, basic, gc.states[s]));
    if (it == basic_index.end() || hit[it->second]) {
      r.reason = "coloured state " + std::to_string(s) + " has no unique basic counterpart";
      return r;
    }
    hit[it->second] = true;
    map[s] = it->second;
  }
  if (map[gc.initial] != gb.initial) {
    r.reason = "initial states do not correspond";
    return r;
  }
  using Key = std::tuple<std::size_t, std::size_t, std::string, double>;
  std::vector<Key> ec, eb;
  for (const auto& e : gc.edges)
    ec.emplace_back(map[e.source], map[e.target], coloured.transitions()[e.firing.transition].name, e.firing.rate);
  for (const auto& e : gb.edges)
    eb.emplace_back(e.source, e.target, basic.transitions()[e.firing.transition].origin, e.firing.rate);
  std::sort(ec.begin(), ec.end());
  std::sort(eb.begin(), eb.end());
  if (ec != eb) {
    r.reason = "edge multisets differ";
    return r;
  }
  r.isomorphic = true;
  return r;
}

}  // namespace castel
