#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <boost/container/small_vector.hpp>

#include "castel/net.hpp"

namespace castel {

/// A transition together with a complete variable binding.
struct EnabledFiring {
  std::size_t transition = 0;
  std::vector<Value> binding;  // indexed like Transition::vars
  double rate = 0.0;
  double steps = 0.0;  // spatial steps contributed by this firing (0 unless tagged `spatial`)

  friend bool operator==(const EnabledFiring& a, const EnabledFiring& b) {
    return a.transition == b.transition && a.binding == b.binding;
  }
};

/// Token movement of one firing.
struct TokenDelta {
  std::size_t place;
  Colour colour;
  std::uint32_t count;
};

namespace detail {

// Enumerates complete bindings satisfying a guard given a partial binding.
// Conjuncts that are decidable are tested first; `x = e` with x unbound and
// e decidable assigns x; disjunctions branch; otherwise the lowest unbound
// variable of the first pending conjunct is enumerated over its domain.
class BindingSolver {
 public:
  using Pending = boost::container::small_vector<const CompiledExpr*, 16>;

  explicit BindingSolver(const Transition& tr) : tr_(tr) {}

  // Slots outside `bound` are scratch space: branches may overwrite them,
  // so callers must only read slots they have bound themselves.
  template <typename Emit>
  void solve(std::vector<Value>& binding, std::uint64_t bound, Pending pending, Emit&& emit) const {
    while (true) {
      bool progress = false;
      for (std::size_t i = 0; i < pending.size(); ++i) {
        const CompiledExpr& c = *pending[i];
        if ((c.vars() & ~bound) == 0) {
          if (!c.test(binding.data())) return;
          pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
          progress = true;
          break;
        }
        if (c.op() == Op::Eq) {
          const auto& a = c.args();
          for (int side = 0; side < 2; ++side) {
            const CompiledExpr& lhs = a[side];
            const CompiledExpr& rhs = a[1 - side];
            if (lhs.op() != Op::Name || (bound >> lhs.slot()) & 1u || (rhs.vars() & ~bound) != 0) continue;
            const auto v = to_value(rhs.eval(binding.data()));
            if (!v || !tr_.vars[lhs.slot()].domain.contains(*v)) return;
            binding[lhs.slot()] = *v;
            bound |= std::uint64_t{1} << lhs.slot();
            pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
            progress = true;
            break;
          }
          if (progress) break;
        }
      }
      if (!progress) break;
    }

    if (pending.empty()) {
      enumerate_rest(binding, bound, 0, emit);
      return;
    }

    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (pending[i]->op() != Op::Or) continue;
      const CompiledExpr* disj = pending[i];
      pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
      for (const auto& branch : disj->args()) {
        Pending next = pending;
        push_conjuncts(branch, next);
        solve(binding, bound, std::move(next), emit);
      }
      return;
    }

    const std::uint64_t open = pending.front()->vars() & ~bound;
    const int s = std::countr_zero(open);
    for (Value x : tr_.vars[s].domain.values) {
      binding[s] = x;
      solve(binding, bound | (std::uint64_t{1} << s), pending, emit);
    }
  }

  static void push_conjuncts(const CompiledExpr& e, Pending& out) {
    if (e.op() == Op::And) {
      push_conjuncts(e.args()[0], out);
      push_conjuncts(e.args()[1], out);
    } else {
      out.push_back(&e);
    }
  }

 private:
  template <typename Emit>
  void enumerate_rest(std::vector<Value>& binding, std::uint64_t bound, std::size_t from, Emit&& emit) const {
    for (std::size_t s = from; s < tr_.vars.size(); ++s) {
      if ((bound >> s) & 1u) continue;
      for (Value x : tr_.vars[s].domain.values) {
        binding[s] = x;
        enumerate_rest(binding, bound | (std::uint64_t{1} << s), s + 1, emit);
      }
      return;
    }
    emit(binding);
  }

  const Transition& tr_;
};

inline BindingSolver::Pending guard_pending(const Transition& tr) {
  BindingSolver::Pending p;
  for (const auto& c : tr.conjuncts) p.push_back(&c);
  return p;
}

}  // namespace detail

/// Tokens consumed by a firing (merged per place and colour).
inline std::vector<TokenDelta> consumed_tokens(const Net& net, const EnabledFiring& f) {
  const auto& tr = net.transitions().at(f.transition);
  std::vector<TokenDelta> out;
  for (const auto& arc : tr.inputs) {
    Colour c;
    for (int s : arc.slots) c.push_back(f.binding[s]);
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const TokenDelta& d) { return d.place == arc.place && d.colour == c; });
    if (it != out.end())
      it->count += arc.weight;
    else
      out.push_back({arc.place, c, arc.weight});
  }
  return out;
}

/// Tokens produced by a firing, or nullopt if some output colour or weight
/// is invalid (outside its domain, non-integral or negative).
inline std::optional<std::vector<TokenDelta>> produced_tokens(const Net& net, const Transition& tr,
                                                              const std::vector<Value>& binding) {
  std::vector<TokenDelta> out;
  for (const auto& arc : tr.outputs) {
    const auto w = to_value(arc.weight.eval(binding.data()));
    if (!w || *w < 0) return std::nullopt;
    if (*w == 0) continue;
    Colour c;
    for (const auto& e : arc.components) {
      const auto v = to_value(e.eval(binding.data()));
      if (!v) return std::nullopt;
      c.push_back(*v);
    }
    if (!net.places()[arc.place].domain.contains(c)) return std::nullopt;
    out.push_back({arc.place, c, static_cast<std::uint32_t>(*w)});
  }
  return out;
}

namespace detail {

inline Colour arc_colour(const InputArc& arc, const std::vector<Value>& binding) {
  Colour c;
  for (int s : arc.slots) c.push_back(binding[s]);
  return c;
}

inline bool demand_available(const Net& net, const Marking& mk, const EnabledFiring& f) {
  const auto& tr = net.transitions()[f.transition];
  const auto& arcs = tr.inputs;
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    const Colour c = arc_colour(arcs[i], f.binding);
    std::uint64_t need = 0;
    bool first = true;
    for (std::size_t j = 0; j < arcs.size(); ++j) {
      if (arcs[j].place != arcs[i].place || arc_colour(arcs[j], f.binding) != c) continue;
      if (j < i) first = false;
      need += arcs[j].weight;
    }
    if (first && mk.bags[arcs[i].place].count(c) < need) return false;
  }
  return true;
}

// Same validity test as produced_tokens, without building the deltas.
inline bool outputs_valid(const Net& net, const Transition& tr, const std::vector<Value>& binding) {
  for (const auto& arc : tr.outputs) {
    const auto w = to_value(arc.weight.eval(binding.data()));
    if (!w || *w < 0) return false;
    if (*w == 0) continue;
    Colour c;
    for (const auto& e : arc.components) {
      const auto v = to_value(e.eval(binding.data()));
      if (!v) return false;
      c.push_back(*v);
    }
    if (!net.places()[arc.place].domain.contains(c)) return false;
  }
  return true;
}

inline void finish_firing(const Net& net, std::size_t t, const std::vector<Value>& binding,
                          std::vector<EnabledFiring>& out) {
  const auto& tr = net.transitions()[t];
  if (!outputs_valid(net, tr, binding)) return;
  const double rate = tr.rate.eval(binding.data());
  if (!(rate > 0) || !std::isfinite(rate))
    throw Error("transition '" + tr.name + "' has non-positive rate " + format_number(rate) + " for binding " +
                net.format_binding(t, binding));
  const double steps = tr.spatial ? tr.steps.eval(binding.data()) : 0.0;
  out.push_back({t, binding, rate, steps});
}

// Restricts one input arc to a single colour.
struct ArcPin {
  std::size_t arc;
  const Colour* colour;
};

// Binds input-arc variables from the tokens present, then solves the guard.
// `binding` is shared scratch space (see BindingSolver).
inline void collect_inputs(const Net& net, const Marking& mk, std::size_t t, std::size_t arc_index,
                           std::vector<Value>& binding, std::uint64_t bound, std::vector<EnabledFiring>& out,
                           const ArcPin* pin = nullptr) {
  const auto& tr = net.transitions()[t];
  if (arc_index == tr.inputs.size()) {
    BindingSolver(tr).solve(binding, bound, guard_pending(tr), [&](const std::vector<Value>& b) {
      EnabledFiring probe{t, {}, 0.0, 0.0};
      probe.binding = b;
      if (demand_available(net, mk, probe)) finish_firing(net, t, probe.binding, out);
    });
    return;
  }
  const auto& arc = tr.inputs[arc_index];
  const Bag& bag = mk.bags[arc.place];
  if (arc.slots.empty()) {
    if (bag.total() >= arc.weight) collect_inputs(net, mk, t, arc_index + 1, binding, bound, out, pin);
    return;
  }
  for (const auto& [colour, n] : bag.entries()) {
    if (pin && pin->arc == arc_index && colour != *pin->colour) continue;
    std::uint64_t bb = bound;
    bool ok = true;
    for (std::size_t i = 0; i < arc.slots.size() && ok; ++i) {
      const int s = arc.slots[i];
      if ((bb >> s) & 1u) {
        ok = binding[s] == colour[i];
      } else {
        binding[s] = colour[i];
        bb |= std::uint64_t{1} << s;
      }
    }
    if (ok) collect_inputs(net, mk, t, arc_index + 1, binding, bb, out, pin);
  }
}

inline bool binding_less(const EnabledFiring& a, const EnabledFiring& b) { return a.binding < b.binding; }

}  // namespace detail

/// Enabled firings of one transition, sorted by binding.
inline std::vector<EnabledFiring> enabled_firings_of(const Net& net, const Marking& mk, std::size_t t) {
  const auto& tr = net.transitions().at(t);
  std::vector<EnabledFiring> out;
  std::vector<Value> binding(tr.vars.size(), 0);
  detail::collect_inputs(net, mk, t, 0, binding, 0, out);
  std::sort(out.begin(), out.end(), detail::binding_less);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Enabled firings of transition t that consume at least one token of a
/// listed (place, colour), sorted by binding. Every input arc of t on a
/// listed place must carry a pattern (not a plain Dot arc).
inline std::vector<EnabledFiring> enabled_firings_touching(const Net& net, const Marking& mk, std::size_t t,
                                                           const std::vector<std::pair<std::size_t, Colour>>& changed) {
  const auto& tr = net.transitions().at(t);
  std::vector<EnabledFiring> out;
  std::vector<Value> binding(tr.vars.size(), 0);
  for (std::size_t k = 0; k < tr.inputs.size(); ++k)
    for (const auto& [p, c] : changed) {
      if (p != tr.inputs[k].place || mk.bags[p].count(c) == 0) continue;
      const detail::ArcPin pin{k, &c};
      detail::collect_inputs(net, mk, t, 0, binding, 0, out, &pin);
    }
  std::sort(out.begin(), out.end(), detail::binding_less);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// All enabled (transition, binding) pairs, sorted by transition name and
/// then binding values.
inline std::vector<EnabledFiring> enabled_firings(const Net& net, const Marking& mk) {
  std::vector<EnabledFiring> out;
  for (std::size_t t : net.by_name()) {
    auto part = enabled_firings_of(net, mk, t);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

/// Successor marking without re-checking the guard. The firing must come
/// from enabled_firings on the same marking.
inline void fire_in_place(const Net& net, Marking& mk, const EnabledFiring& f) {
  const auto& tr = net.transitions()[f.transition];
  for (const auto& d : consumed_tokens(net, f)) mk.bags[d.place].remove(d.colour, d.count);
  const auto produced = produced_tokens(net, tr, f.binding);
  if (!produced) throw Error("firing of '" + tr.name + "' produces an invalid token");
  for (const auto& d : *produced) mk.bags[d.place].add(d.colour, d.count);
}

/// Checks that a firing is enabled in mk: binding values lie in their
/// domains, the guard holds, outputs are valid and input tokens are present.
inline bool is_enabled(const Net& net, const Marking& mk, const EnabledFiring& f) {
  if (f.transition >= net.transitions().size()) return false;
  const auto& tr = net.transitions()[f.transition];
  if (f.binding.size() != tr.vars.size()) return false;
  for (std::size_t i = 0; i < tr.vars.size(); ++i)
    if (!tr.vars[i].domain.contains(f.binding[i])) return false;
  if (!tr.guard.test(f.binding.data())) return false;
  if (!produced_tokens(net, tr, f.binding)) return false;
  return detail::demand_available(net, mk, f);
}

/// Successor marking; mk is unchanged. Throws if the firing is not enabled.
inline Marking fire(const Net& net, const Marking& mk, const EnabledFiring& f) {
  if (!is_enabled(net, mk, f)) {
    const std::string name = f.transition < net.transitions().size() ? net.transitions()[f.transition].name : "?";
    throw Error("firing of '" + name + "' is not enabled");
  }
  Marking next = mk;
  fire_in_place(net, next, f);
  return next;
}

/// Maximal group of enabled firings that compete for tokens, with the
/// player labels (tags `player:<name>`) of its transitions.
struct ConflictSet {
  std::vector<EnabledFiring> firings;
  std::set<std::string> players;
};

/// Partitions the enabled firings into conflict sets. Two firings conflict
/// when their combined demand on some (place, colour) exceeds what the
/// marking holds; sets are the transitive closure of that relation.
inline std::vector<ConflictSet> detect_conflicts(const Net& net, const Marking& mk) {
  const auto firings = enabled_firings(net, mk);
  const std::size_t n = firings.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<std::vector<TokenDelta>> demand;
  for (const auto& f : firings) demand.push_back(consumed_tokens(net, f));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      bool clash = false;
      for (const auto& a : demand[i]) {
        for (const auto& b : demand[j])
          if (a.place == b.place && a.colour == b.colour && a.count + b.count > mk.bags[a.place].count(a.colour)) {
            clash = true;
            break;
          }
        if (clash) break;
      }
      if (clash) parent[find(i)] = find(j);
    }
  std::map<std::size_t, std::size_t> slot;
  std::vector<ConflictSet> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    auto [it, fresh] = slot.emplace(r, out.size());
    if (fresh) out.emplace_back();
    auto& cs = out[it->second];
    cs.firings.push_back(firings[i]);
    for (const auto& tag : net.transitions()[firings[i].transition].tags)
      if (tag.rfind("player:", 0) == 0) cs.players.insert(tag.substr(7));
  }
  return out;
}

}  // namespace castel
