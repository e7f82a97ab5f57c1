#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "castel/colour.hpp"
#include "castel/error.hpp"
#include "castel/expr.hpp"
#include "castel/spatial.hpp"

namespace castel {

// ---------------------------------------------------------------------------
// Declarative description of a coloured net. This is what JSON files map to
// and what Net keeps around for serialization.

struct DomainSpec {
  std::string name;
  std::string kind;  // atoms | range | set | product
  std::vector<std::string> atoms;
  Value lo = 0;
  Value hi = 0;
  std::vector<Value> ints;
  std::vector<std::pair<std::string, std::string>> fields;  // product: (field, scalar domain)
};

struct PlaceSpec {
  std::string name;
  std::string domain = "Dot";
};

struct InputSpec {
  std::string place;
  std::vector<std::string> vars;  // one per colour component; empty for Dot
  std::uint32_t weight = 1;       // Dot places only
};

struct OutputSpec {
  std::string place;
  std::vector<std::string> exprs;  // one per colour component; empty for Dot
  std::string weight = "1";        // token count; may depend on variables
};

struct VarSpec {
  std::string name;
  std::string domain;  // scalar domain name
};

struct TransitionSpec {
  std::string name;
  std::vector<VarSpec> free;  // variables not bound by input arcs
  std::vector<InputSpec> inputs;
  std::vector<OutputSpec> outputs;
  std::string guard = "true";
  std::string rate = "1";
  std::string steps = "1";  // spatial step count of a firing; only read for `spatial` transitions
  std::vector<std::string> tags;
  // Set on fundamental transitions produced by unfolding.
  std::string origin;
  std::vector<std::pair<std::string, Value>> origin_binding;
};

struct NetSpec {
  std::string name = "net";
  std::vector<std::pair<std::string, double>> constants;
  std::vector<DomainSpec> domains;
  std::vector<PlaceSpec> places;
  std::vector<TransitionSpec> transitions;
  std::optional<RoadNetwork> road_network;
  // Initial marking: place -> list of (colour components as text, count).
  std::vector<std::pair<std::string, std::vector<std::pair<std::vector<std::string>, std::uint32_t>>>> initial;
};

// ---------------------------------------------------------------------------
// Compiled form.

struct Place {
  std::string name;
  ColourDomain domain;
};

struct Variable {
  std::string name;
  BasicDomain domain;
};

struct InputArc {
  std::size_t place = 0;
  std::vector<int> slots;
  std::uint32_t weight = 1;
};

struct OutputArc {
  std::size_t place = 0;
  std::vector<CompiledExpr> components;
  CompiledExpr weight;
};

struct Transition {
  std::string name;
  std::vector<Variable> vars;
  std::vector<InputArc> inputs;
  std::vector<OutputArc> outputs;
  CompiledExpr guard;
  std::vector<CompiledExpr> conjuncts;  // guard split at top-level `and`
  CompiledExpr rate;
  CompiledExpr steps;
  std::vector<std::string> tags;
  bool spatial = false;
  std::string origin;
  std::vector<std::pair<std::string, Value>> origin_binding;

  bool has_tag(const std::string& t) const { return std::find(tags.begin(), tags.end(), t) != tags.end(); }

  std::optional<int> slot(const std::string& var) const {
    for (std::size_t i = 0; i < vars.size(); ++i)
      if (vars[i].name == var) return static_cast<int>(i);
    return std::nullopt;
  }
};

namespace detail {

inline void flatten_and(const CompiledExpr& e, std::vector<CompiledExpr>& out) {
  if (e.op() == Op::And) {
    flatten_and(e.args()[0], out);
    flatten_and(e.args()[1], out);
  } else if (!(e.is_constant() && e.value() != 0.0)) {
    out.push_back(e);
  }
}

// Road-network lookups by atom id, precomputed so that guards evaluate
// without string handling.
struct SpatialTable {
  std::vector<bool> exit;          // per atom
  std::vector<int> start;          // per atom, -1 unless exit
  std::vector<std::vector<Point2>> pos;  // per exit atom, per zone
  Value hub = -1;
  double d_close = 0.0;

  SpatialTable(const RoadNetwork& rn, const AtomTable& atoms) : d_close(rn.d_close()) {
    const std::size_t n = atoms.size();
    exit.assign(n, false);
    start.assign(n, -1);
    pos.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& name = atoms.name(static_cast<Value>(i));
      if (name == rn.hub()) hub = static_cast<Value>(i);
      if (!rn.is_exit(name)) continue;
      exit[i] = true;
      start[i] = rn.start_zone(name);
      for (int p = 0; p <= start[i]; ++p) pos[i].push_back(rn.position(name, p, name));
    }
  }

  bool atom(double id) const { return id >= 0 && id < static_cast<double>(exit.size()) && id == std::floor(id); }
  bool is_exit(double id) const { return atom(id) && exit[static_cast<std::size_t>(id)]; }

  // Leg index of a car (f, p, t), or -1 if the position is invalid.
  long leg(double f, double p, double t) const {
    if (!atom(f) || !atom(t)) return -1;
    const double l = (static_cast<Value>(f) == hub) ? t : f;
    if (!is_exit(l)) return -1;
    const auto k = static_cast<std::size_t>(l);
    if (!(p >= 0 && p <= start[k]) || p != std::floor(p)) return -1;
    return static_cast<long>(k);
  }

  double remaining(double f, double p, double t) const {
    const auto k = static_cast<std::size_t>(t);
    return static_cast<Value>(f) == hub ? start[k] - p : p + start[k];
  }
};

inline void register_spatial_functions(FunctionTable& fns, std::shared_ptr<const RoadNetwork> rn,
                                       const AtomTable& atoms) {
  auto tab = std::make_shared<const SpatialTable>(*rn, atoms);
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  fns["IsRoute"] = {2, [tab](std::span<const double> a) {
                      return (tab->atom(a[0]) && a[0] != a[1] && tab->is_exit(a[1])) ? 1.0 : 0.0;
                    }};
  fns["START"] = {1, [tab](std::span<const double> a) {
                    return tab->is_exit(a[0]) ? static_cast<double>(tab->start[static_cast<std::size_t>(a[0])]) : nan;
                  }};
  fns["REMAINING"] = {3, [tab](std::span<const double> a) {
                        if (tab->leg(a[0], a[1], a[2]) < 0 || !tab->is_exit(a[2])) return nan;
                        return tab->remaining(a[0], a[1], a[2]);
                      }};
  fns["ETA"] = {4, [tab](std::span<const double> a) {
                  if (tab->leg(a[0], a[1], a[2]) < 0 || !tab->is_exit(a[2]) || !(a[3] > 0)) return nan;
                  return tab->remaining(a[0], a[1], a[2]) / a[3];
                }};
  fns["IsClose"] = {6, [tab](std::span<const double> a) {
                      const long l1 = tab->leg(a[0], a[1], a[2]);
                      const long l2 = tab->leg(a[3], a[4], a[5]);
                      if (l1 < 0 || l2 < 0) return 0.0;
                      const Point2 p1 = tab->pos[static_cast<std::size_t>(l1)][static_cast<std::size_t>(a[1])];
                      const Point2 p2 = tab->pos[static_cast<std::size_t>(l2)][static_cast<std::size_t>(a[4])];
                      return distance(p1, p2) <= tab->d_close ? 1.0 : 0.0;
                    }};
}

}  // namespace detail

/// Immutable compiled coloured stochastic Petri net plus its initial marking.
class Net {
 public:
  Net() = default;

  explicit Net(NetSpec spec) : spec_(std::move(spec)) { build(); }

  const NetSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  const AtomTable& atoms() const { return atoms_; }
  const std::vector<Place>& places() const { return places_; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  /// Transition indices sorted by name.
  const std::vector<std::size_t>& by_name() const { return by_name_; }
  const Marking& initial() const { return initial_; }
  const std::shared_ptr<const RoadNetwork>& road_network() const { return road_; }
  const FunctionTable& functions() const { return *functions_; }

  std::optional<std::size_t> find_place(const std::string& name) const {
    auto it = place_index_.find(name);
    if (it == place_index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t place(const std::string& name) const {
    auto p = find_place(name);
    if (!p) throw Error("unknown place '" + name + "'");
    return *p;
  }

  std::optional<std::size_t> find_transition(const std::string& name) const {
    auto it = transition_index_.find(name);
    if (it == transition_index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t transition(const std::string& name) const {
    auto t = find_transition(name);
    if (!t) throw Error("unknown transition '" + name + "'");
    return *t;
  }

  std::optional<double> constant(const std::string& name) const {
    for (const auto& [k, v] : spec_.constants)
      if (k == name) return v;
    return std::nullopt;
  }

  const ColourDomain& domain(const std::string& name) const {
    auto it = domains_.find(name);
    if (it == domains_.end()) throw ConfigError("unknown domain '" + name + "'");
    return it->second;
  }

  Marking empty_marking() const {
    Marking m;
    m.bags.resize(places_.size());
    return m;
  }

  /// Resolves a textual scalar (atom name or integer) for a component domain.
  Value parse_scalar(const std::string& text, const BasicDomain& d) const {
    if (d.kind == BasicDomain::Kind::Atoms) {
      auto id = atoms_.find(text);
      if (!id || !d.contains(*id)) throw ConfigError("'" + text + "' is not in the atom domain");
      return *id;
    }
    try {
      std::size_t used = 0;
      const long long x = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      if (!d.contains(x)) throw ConfigError("value " + text + " is outside its domain");
      return x;
    } catch (const std::logic_error&) {
      throw ConfigError("'" + text + "' is not an integer");
    }
  }

  Colour parse_colour(std::size_t place, const std::vector<std::string>& parts) const {
    const auto& dom = places_.at(place).domain;
    if (parts.size() != dom.arity())
      throw ConfigError("colour for place '" + places_[place].name + "' needs " + std::to_string(dom.arity()) +
                        " components");
    Colour c;
    for (std::size_t i = 0; i < parts.size(); ++i) c.push_back(parse_scalar(parts[i], dom.components[i]));
    return c;
  }

  std::string format_scalar(Value x, const BasicDomain& d) const {
    if (d.kind == BasicDomain::Kind::Atoms) return atoms_.name(x);
    return std::to_string(x);
  }

  std::string format_colour(std::size_t place, const Colour& c) const {
    const auto& dom = places_.at(place).domain;
    if (dom.is_dot()) return "dot";
    if (dom.arity() == 1) return format_scalar(c[0], dom.components[0]);
    std::string s = "(";
    for (std::size_t i = 0; i < c.size(); ++i) s += (i ? "," : "") + format_scalar(c[i], dom.components[i]);
    return s + ")";
  }

  std::string format_binding(std::size_t transition, const std::vector<Value>& binding) const {
    const auto& tr = transitions_.at(transition);
    std::string s;
    for (std::size_t i = 0; i < tr.vars.size(); ++i)
      s += (i ? "," : "") + tr.vars[i].name + "=" + format_scalar(binding[i], tr.vars[i].domain);
    return s;
  }

  std::string format_marking(const Marking& m) const {
    std::string s;
    for (std::size_t p = 0; p < places_.size(); ++p) {
      if (p) s += " ";
      s += places_[p].name + "=";
      if (places_[p].domain.is_dot()) {
        s += std::to_string(m.bags[p].total());
        continue;
      }
      s += "{";
      bool first = true;
      for (const auto& [c, n] : m.bags[p].entries()) {
        if (!first) s += ",";
        first = false;
        s += format_colour(p, c);
        if (n > 1) s += "*" + std::to_string(n);
      }
      s += "}";
    }
    return s;
  }

  /// Checks that every token lies in its place's colour domain.
  void validate(const Marking& m) const {
    if (m.bags.size() != places_.size()) throw ConfigError("marking does not match the net's places");
    for (std::size_t p = 0; p < places_.size(); ++p)
      for (const auto& [c, n] : m.bags[p].entries())
        if (!places_[p].domain.contains(c) || n == 0)
          throw ConfigError("token outside the colour domain of place '" + places_[p].name + "'");
  }

  /// Pads a marking of a net whose places are a prefix of this one's, using
  /// the initial marking for the extra places.
  Marking pad(Marking m) const {
    for (std::size_t p = m.bags.size(); p < places_.size(); ++p) m.bags.push_back(initial_.bags[p]);
    return m;
  }

 private:
  void build() {
    std::set<std::string> names;
    for (const auto& [k, v] : spec_.constants)
      if (!names.insert(k).second) throw ConfigError("duplicate constant '" + k + "'");

    domains_["Dot"] = ColourDomain{"Dot", {}, {}};
    std::map<std::string, BasicDomain> scalar;
    for (const auto& d : spec_.domains) {
      if (domains_.count(d.name)) throw ConfigError("duplicate domain '" + d.name + "'");
      BasicDomain b;
      if (d.kind == "atoms") {
        if (d.atoms.empty()) throw ConfigError("domain '" + d.name + "' is empty");
        std::vector<Value> ids;
        for (const auto& a : d.atoms) {
          if (names.count(a)) throw ConfigError("atom '" + a + "' clashes with a constant");
          ids.push_back(atoms_.intern(a));
        }
        b = BasicDomain::atoms(std::move(ids));
      } else if (d.kind == "range") {
        b = BasicDomain::range(d.lo, d.hi);
      } else if (d.kind == "set") {
        if (d.ints.empty()) throw ConfigError("domain '" + d.name + "' is empty");
        b = BasicDomain::set(d.ints);
      } else if (d.kind == "product") {
        ColourDomain cd{d.name, {}, {}};
        if (d.fields.empty()) throw ConfigError("product domain '" + d.name + "' has no fields");
        for (const auto& [field, dom] : d.fields) {
          auto it = scalar.find(dom);
          if (it == scalar.end()) throw ConfigError("product field domain '" + dom + "' must be a scalar domain");
          cd.fields.push_back(field);
          cd.components.push_back(it->second);
        }
        if (cd.components.size() > kMaxArity) throw ConfigError("product domain '" + d.name + "' is too wide");
        domains_[d.name] = std::move(cd);
        continue;
      } else {
        throw ConfigError("unknown domain kind '" + d.kind + "'");
      }
      scalar[d.name] = b;
      domains_[d.name] = ColourDomain{d.name, {d.name}, {b}};
    }

    for (const auto& ps : spec_.places) {
      if (place_index_.count(ps.name)) throw ConfigError("duplicate place '" + ps.name + "'");
      place_index_[ps.name] = places_.size();
      places_.push_back({ps.name, domain(ps.domain)});
    }

    auto fns = std::make_shared<FunctionTable>(builtin_functions());
    if (spec_.road_network) {
      road_ = std::make_shared<const RoadNetwork>(*spec_.road_network);
      detail::register_spatial_functions(*fns, road_, atoms_);
    }
    functions_ = fns;

    for (const auto& ts : spec_.transitions) {
      if (transition_index_.count(ts.name)) throw ConfigError("duplicate transition '" + ts.name + "'");
      transition_index_[ts.name] = transitions_.size();
      transitions_.push_back(compile_transition(ts, scalar));
    }
    by_name_.resize(transitions_.size());
    std::iota(by_name_.begin(), by_name_.end(), std::size_t{0});
    std::sort(by_name_.begin(), by_name_.end(),
              [&](std::size_t a, std::size_t b) { return transitions_[a].name < transitions_[b].name; });

    initial_ = empty_marking();
    for (const auto& [pname, toks] : spec_.initial) {
      const std::size_t p = place(pname);
      for (const auto& [parts, n] : toks) initial_.bags[p].add(parse_colour(p, parts), n);
    }
  }

  Transition compile_transition(const TransitionSpec& ts, const std::map<std::string, BasicDomain>& scalar) const {
    Transition tr;
    tr.name = ts.name;
    tr.tags = ts.tags;
    tr.spatial = tr.has_tag("spatial");
    tr.origin = ts.origin;
    tr.origin_binding = ts.origin_binding;

    auto add_var = [&](const std::string& name, const BasicDomain& d) -> int {
      if (auto s = tr.slot(name)) {
        if (tr.vars[*s].domain.values != d.values)
          throw ConfigError("variable '" + name + "' used with two domains in '" + ts.name + "'");
        return *s;
      }
      if (tr.vars.size() >= 63) throw ConfigError("too many variables in '" + ts.name + "'");
      tr.vars.push_back({name, d});
      return static_cast<int>(tr.vars.size() - 1);
    };

    for (const auto& in : ts.inputs) {
      InputArc arc;
      arc.place = place(in.place);
      const auto& dom = places_[arc.place].domain;
      if (in.vars.size() != dom.arity())
        throw ConfigError("input arc " + in.place + " -> " + ts.name + " needs " + std::to_string(dom.arity()) +
                          " pattern variables");
      for (std::size_t i = 0; i < in.vars.size(); ++i) arc.slots.push_back(add_var(in.vars[i], dom.components[i]));
      arc.weight = dom.is_dot() ? in.weight : 1;
      if (dom.is_dot() && in.weight == 0) throw ConfigError("zero-weight input arc into '" + ts.name + "'");
      tr.inputs.push_back(std::move(arc));
    }
    for (const auto& fv : ts.free) {
      auto it = scalar.find(fv.domain);
      if (it == scalar.end()) throw ConfigError("free variable '" + fv.name + "' needs a scalar domain");
      if (tr.slot(fv.name)) throw ConfigError("free variable '" + fv.name + "' is already bound by an input arc");
      add_var(fv.name, it->second);
    }

    const Resolver resolve = [&](const std::string& n) -> std::optional<NameRef> {
      if (auto s = tr.slot(n)) return NameRef{true, *s, 0.0};
      if (auto c = constant(n)) return NameRef{false, -1, *c};
      if (auto a = atoms_.find(n)) return NameRef{false, -1, static_cast<double>(*a)};
      return std::nullopt;
    };
    auto compile = [&](const std::string& text) { return CompiledExpr::compile(parse_expr(text), resolve, *functions_); };

    tr.guard = compile(ts.guard);
    detail::flatten_and(tr.guard, tr.conjuncts);
    tr.rate = compile(ts.rate);
    tr.steps = compile(ts.steps);
    for (const auto& out : ts.outputs) {
      OutputArc arc;
      arc.place = place(out.place);
      const auto& dom = places_[arc.place].domain;
      if (out.exprs.size() != dom.arity())
        throw ConfigError("output arc " + ts.name + " -> " + out.place + " needs " + std::to_string(dom.arity()) +
                          " component expressions");
      for (const auto& e : out.exprs) arc.components.push_back(compile(e));
      arc.weight = compile(out.weight);
      tr.outputs.push_back(std::move(arc));
    }
    return tr;
  }

  NetSpec spec_;
  AtomTable atoms_;
  std::map<std::string, ColourDomain> domains_;
  std::vector<Place> places_;
  std::vector<Transition> transitions_;
  std::vector<std::size_t> by_name_;
  std::unordered_map<std::string, std::size_t> place_index_;
  std::unordered_map<std::string, std::size_t> transition_index_;
  std::shared_ptr<const FunctionTable> functions_;
  std::shared_ptr<const RoadNetwork> road_;
  Marking initial_;
};

/// Total token count at a place, summed over colours.
inline std::uint64_t marking_count(const Net& net, const Marking& mk, const std::string& place) {
  return mk.bags.at(net.place(place)).total();
}

/// Copy of the multiset at a place.
inline Bag marking_tokens(const Net& net, const Marking& mk, const std::string& place) {
  return mk.bags.at(net.place(place));
}

/// Returns a copy of `net` with a fresh Dot place p_<transition> holding n
/// tokens, consumed once per firing of the transition, so that it fires at
/// most n times in any run.
inline Net add_bound_place(const Net& net, const std::string& transition, std::uint32_t n) {
  if (n == 0) throw Error("bound place needs at least one token");
  NetSpec spec = net.spec();
  auto it = std::find_if(spec.transitions.begin(), spec.transitions.end(),
                         [&](const TransitionSpec& t) { return t.name == transition; });
  if (it == spec.transitions.end()) throw Error("unknown transition '" + transition + "'");
  std::string pname = "p_" + transition;
  for (int k = 2; net.find_place(pname); ++k) pname = "p_" + transition + "_" + std::to_string(k);
  spec.places.push_back({pname, "Dot"});
  it->inputs.push_back({pname, {}, 1});
  spec.initial.push_back({pname, {{{}, n}}});
  return Net(std::move(spec));
}

}  // namespace castel
