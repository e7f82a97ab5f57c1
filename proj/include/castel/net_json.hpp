#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "castel/deadspot.hpp"
#include "castel/net.hpp"

namespace castel {

using Json = nlohmann::ordered_json;

namespace detail {

inline const Json& member(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  return j.at(key);
}

// nlohmann's type errors become ConfigError with the location prefixed.
template <typename T>
T get(const Json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return get<T>(j.at(key), where + "." + key);
}

inline void only_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Road network

inline RoadNetwork road_network_from_json(const Json& j) {
  const std::string w = "road_network";
  detail::only_keys(j, {"points", "hub", "exits", "rho", "d_close"}, w);
  std::map<std::string, Point2> points;
  for (const auto& [name, xy] : detail::member(j, "points", w).items()) {
    const auto v = detail::get<std::vector<double>>(xy, w + ".points." + name);
    if (v.size() != 2) throw ConfigError(w + ".points." + name + ": expected [x, y]");
    points[name] = {v[0], v[1]};
  }
  try {
    return RoadNetwork(std::move(points), detail::get<std::string>(detail::member(j, "hub", w), w + ".hub"),
                       detail::get<std::vector<std::string>>(detail::member(j, "exits", w), w + ".exits"),
                       detail::get_or(j, "rho", 1.0, w), detail::get_or(j, "d_close", 2.0, w));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(w + ": " + e.what());
  }
}

inline Json to_json(const RoadNetwork& rn) {
  Json j;
  Json pts = Json::object();
  for (const auto& [name, p] : rn.points()) pts[name] = {p.x, p.y};
  j["points"] = pts;
  j["hub"] = rn.hub();
  j["exits"] = rn.exits();
  j["rho"] = rn.rho();
  j["d_close"] = rn.d_close();
  return j;
}

// ---------------------------------------------------------------------------
// Nets

inline NetSpec net_spec_from_json(const Json& j) {
  detail::only_keys(j, {"name", "constants", "domains", "places", "transitions", "initial", "road_network"}, "net");
  NetSpec s;
  s.name = detail::get_or<std::string>(j, "name", "net", "net");
  if (j.contains("constants"))
    for (const auto& [k, v] : j.at("constants").items())
      s.constants.emplace_back(k, detail::get<double>(v, "net.constants." + k));

  if (j.contains("domains"))
    for (const auto& d : j.at("domains")) {
      const std::string w = "domain";
      detail::only_keys(d, {"name", "kind", "atoms", "lo", "hi", "values", "fields"}, w);
      DomainSpec ds;
      ds.name = detail::get<std::string>(detail::member(d, "name", w), w + ".name");
      const std::string where = "domain " + ds.name;
      ds.kind = detail::get<std::string>(detail::member(d, "kind", where), where + ".kind");
      if (ds.kind == "atoms") {
        ds.atoms = detail::get<std::vector<std::string>>(detail::member(d, "atoms", where), where + ".atoms");
      } else if (ds.kind == "range") {
        ds.lo = detail::get<Value>(detail::member(d, "lo", where), where + ".lo");
        ds.hi = detail::get<Value>(detail::member(d, "hi", where), where + ".hi");
      } else if (ds.kind == "set") {
        ds.ints = detail::get<std::vector<Value>>(detail::member(d, "values", where), where + ".values");
      } else if (ds.kind == "product") {
        for (const auto& f : detail::member(d, "fields", where)) {
          const auto pair = detail::get<std::vector<std::string>>(f, where + ".fields");
          if (pair.size() != 2) throw ConfigError(where + ".fields: expected [field, domain] pairs");
          ds.fields.emplace_back(pair[0], pair[1]);
        }
      } else {
        throw ConfigError(where + ": unknown kind '" + ds.kind + "'");
      }
      s.domains.push_back(std::move(ds));
    }

  for (const auto& p : detail::member(j, "places", "net")) {
    detail::only_keys(p, {"name", "domain"}, "place");
    s.places.push_back({detail::get<std::string>(detail::member(p, "name", "place"), "place.name"),
                        detail::get_or<std::string>(p, "domain", "Dot", "place")});
  }

  for (const auto& t : detail::member(j, "transitions", "net")) {
    TransitionSpec ts;
    ts.name = detail::get<std::string>(detail::member(t, "name", "transition"), "transition.name");
    const std::string w = "transition " + ts.name;
    detail::only_keys(t, {"name", "free", "inputs", "outputs", "guard", "rate", "steps", "tags"}, w);
    if (t.contains("free"))
      for (const auto& v : t.at("free")) {
        const auto pair = detail::get<std::vector<std::string>>(v, w + ".free");
        if (pair.size() != 2) throw ConfigError(w + ".free: expected [variable, domain] pairs");
        ts.free.push_back({pair[0], pair[1]});
      }
    if (t.contains("inputs"))
      for (const auto& a : t.at("inputs")) {
        detail::only_keys(a, {"place", "vars", "weight"}, w + ".inputs");
        ts.inputs.push_back({detail::get<std::string>(detail::member(a, "place", w), w + ".inputs.place"),
                             detail::get_or<std::vector<std::string>>(a, "vars", {}, w + ".inputs"),
                             detail::get_or<std::uint32_t>(a, "weight", 1, w + ".inputs")});
      }
    if (t.contains("outputs"))
      for (const auto& a : t.at("outputs")) {
        detail::only_keys(a, {"place", "exprs", "weight"}, w + ".outputs");
        OutputSpec o{detail::get<std::string>(detail::member(a, "place", w), w + ".outputs.place"),
                     detail::get_or<std::vector<std::string>>(a, "exprs", {}, w + ".outputs"), "1"};
        if (a.contains("weight")) {
          const auto& wt = a.at("weight");
          o.weight = wt.is_string() ? wt.get<std::string>() : format_number(detail::get<double>(wt, w + ".weight"));
        }
        ts.outputs.push_back(std::move(o));
      }
    ts.guard = detail::get_or<std::string>(t, "guard", "true", w);
    if (t.contains("rate")) {
      const auto& r = t.at("rate");
      ts.rate = r.is_string() ? r.get<std::string>() : format_number(detail::get<double>(r, w + ".rate"));
    }
    if (t.contains("steps")) {
      const auto& r = t.at("steps");
      ts.steps = r.is_string() ? r.get<std::string>() : format_number(detail::get<double>(r, w + ".steps"));
    }
    ts.tags = detail::get_or<std::vector<std::string>>(t, "tags", {}, w);
    s.transitions.push_back(std::move(ts));
  }

  if (j.contains("initial"))
    for (const auto& [place, v] : j.at("initial").items()) {
      const std::string w = "initial." + place;
      std::vector<std::pair<std::vector<std::string>, std::uint32_t>> tokens;
      if (v.is_number()) {
        tokens.push_back({{}, detail::get<std::uint32_t>(v, w)});
      } else {
        for (const auto& tok : v) {
          detail::only_keys(tok, {"colour", "count"}, w);
          std::vector<std::string> parts;
          for (const auto& c : detail::member(tok, "colour", w))
            parts.push_back(c.is_string() ? c.get<std::string>() : format_number(detail::get<double>(c, w)));
          tokens.push_back({parts, detail::get_or<std::uint32_t>(tok, "count", 1, w)});
        }
      }
      s.initial.push_back({place, std::move(tokens)});
    }
  if (j.contains("road_network")) s.road_network = road_network_from_json(j.at("road_network"));
  return s;
}

inline Net net_from_json(const Json& j) {
  NetSpec s = net_spec_from_json(j);
  try {
    return Net(std::move(s));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("net: ") + e.what());
  }
}

inline Json to_json(const NetSpec& s) {
  Json j;
  j["name"] = s.name;
  Json consts = Json::object();
  for (const auto& [k, v] : s.constants) consts[k] = v;
  j["constants"] = consts;
  Json doms = Json::array();
  for (const auto& d : s.domains) {
    Json dj{{"name", d.name}, {"kind", d.kind}};
    if (d.kind == "atoms") dj["atoms"] = d.atoms;
    if (d.kind == "range") {
      dj["lo"] = d.lo;
      dj["hi"] = d.hi;
    }
    if (d.kind == "set") dj["values"] = d.ints;
    if (d.kind == "product") {
      Json fs = Json::array();
      for (const auto& [f, dom] : d.fields) fs.push_back({f, dom});
      dj["fields"] = fs;
    }
    doms.push_back(dj);
  }
  j["domains"] = doms;
  Json places = Json::array();
  for (const auto& p : s.places) places.push_back({{"name", p.name}, {"domain", p.domain}});
  j["places"] = places;
  Json trs = Json::array();
  for (const auto& t : s.transitions) {
    Json tj{{"name", t.name}};
    if (!t.free.empty()) {
      Json fr = Json::array();
      for (const auto& v : t.free) fr.push_back({v.name, v.domain});
      tj["free"] = fr;
    }
    Json ins = Json::array();
    for (const auto& a : t.inputs) {
      Json aj{{"place", a.place}};
      if (!a.vars.empty()) aj["vars"] = a.vars;
      if (a.weight != 1) aj["weight"] = a.weight;
      ins.push_back(aj);
    }
    tj["inputs"] = ins;
    Json outs = Json::array();
    for (const auto& a : t.outputs) {
      Json aj{{"place", a.place}};
      if (!a.exprs.empty()) aj["exprs"] = a.exprs;
      if (a.weight != "1") aj["weight"] = a.weight;
      outs.push_back(aj);
    }
    tj["outputs"] = outs;
    tj["guard"] = t.guard;
    tj["rate"] = t.rate;
    if (t.steps != "1") tj["steps"] = t.steps;
    if (!t.tags.empty()) tj["tags"] = t.tags;
    trs.push_back(tj);
  }
  j["transitions"] = trs;
  Json init = Json::object();
  for (const auto& [place, tokens] : s.initial) {
    Json& slot = init[place];
    if (tokens.size() == 1 && tokens[0].first.empty()) {
      slot = slot.is_number() ? slot.get<std::uint32_t>() + tokens[0].second : tokens[0].second;
      continue;
    }
    if (!slot.is_array()) slot = Json::array();
    for (const auto& [parts, n] : tokens) slot.push_back({{"colour", parts}, {"count", n}});
  }
  j["initial"] = init;
  if (s.road_network) j["road_network"] = to_json(*s.road_network);
  return j;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Deadspot parameters

namespace deadspot {

/// Sets one named parameter from a number; used by scenario files and sweep
/// grids alike. Booleans take 0 or 1.
inline void set_param(Params& p, const std::string& name, double x) {
  auto as_int = [&] {
    if (x != std::floor(x) || std::fabs(x) > 1e9) throw ConfigError("parameter " + name + " must be an integer");
    return static_cast<int>(x);
  };
  auto as_bool = [&] {
    if (x != 0.0 && x != 1.0) throw ConfigError("parameter " + name + " must be 0 or 1");
    return x == 1.0;
  };
  if (name == "N") p.N = as_int();
  else if (name == "M") p.M = as_int();
  else if (name == "R") p.R = as_int();
  else if (name == "ent_rate") p.ent_rate = x;
  else if (name == "ext_rate") p.ext_rate = x;
  else if (name == "adv_coef") p.adv_coef = x;
  else if (name == "cre_rate") p.cre_rate = x;
  else if (name == "jmp_rate") p.jmp_rate = x;
  else if (name == "arrival_scale") p.arrival_scale = x;
  else if (name == "d_close") p.d_close = x;
  else if (name == "jmp") p.jmp = as_bool();
  else if (name == "satellite") p.satellite = as_bool();
  else if (name == "sat_n") {
    p.sat_n = as_int();
    p.satellite = true;
  } else if (name == "sat_rate") p.sat_rate = x;
  else throw ConfigError("unknown deadspot parameter '" + name + "'");
}

inline Params params_from_json(const Json& j) {
  Params p;
  if (!j.is_object()) throw ConfigError("params: expected an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "speeds") p.speeds = castel::detail::get<std::vector<int>>(v, "params.speeds");
    else if (k == "road_network") p.road = road_network_from_json(v);
    else if (v.is_boolean()) set_param(p, k, v.get<bool>() ? 1.0 : 0.0);
    else set_param(p, k, castel::detail::get<double>(v, "params." + k));
  }
  // A custom road network takes its closeness radius from the params.
  if (p.road && j.contains("d_close"))
    p.road = RoadNetwork(p.road->points(), p.road->hub(), p.road->exits(), p.road->rho(), p.d_close);
  validate(p);
  return p;
}

inline Json to_json(const Params& p) {
  Json j;
  j["N"] = p.N;
  j["M"] = p.M;
  j["R"] = p.R;
  j["speeds"] = p.speeds;
  j["ent_rate"] = p.ent_rate;
  j["ext_rate"] = p.ext_rate;
  j["adv_coef"] = p.adv_coef;
  j["cre_rate"] = p.cre_rate;
  j["jmp_rate"] = p.jmp_rate;
  j["arrival_scale"] = p.arrival_scale;
  j["d_close"] = p.d_close;
  j["jmp"] = p.jmp;
  j["satellite"] = p.satellite;
  j["sat_n"] = p.sat_n;
  j["sat_rate"] = p.sat_rate;
  if (p.road) j["road_network"] = castel::to_json(*p.road);
  return j;
}

}  // namespace deadspot

// ---------------------------------------------------------------------------
// Scenarios

/// A model plus run settings. `model` is "deadspot" (built from params) or
/// "net" (a net document, inline or by file).
struct Scenario {
  std::string model = "deadspot";
  deadspot::Params params;
  std::optional<NetSpec> net;
  std::optional<std::pair<std::string, std::uint32_t>> bound;  // (transition, n) for add_bound_place
  double horizon = 100.0;
  std::size_t runs = 1;
  std::uint64_t seed = 1;
  std::size_t samples = 1000;
  double level = 0.95;
  double epsilon = 1e-6;

  std::pair<Net, Marking> build() const {
    if (model == "deadspot") return deadspot::build(params);
    try {
      Net n(*net);
      if (bound) n = add_bound_place(n, bound->first, bound->second);
      Marking init = n.initial();
      return {std::move(n), std::move(init)};
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("net: ") + e.what());
    }
  }
};

inline Scenario scenario_from_json(const Json& j, const std::string& base_dir = ".") {
  detail::only_keys(j, {"model", "params", "net", "net_file", "bound", "horizon", "runs", "seed", "samples", "level",
                        "epsilon"},
                    "scenario");
  Scenario s;
  s.model = detail::get_or<std::string>(j, "model", "deadspot", "scenario");
  if (s.model == "deadspot") {
    if (j.contains("net") || j.contains("net_file")) throw ConfigError("scenario: deadspot model takes params, not a net");
    s.params = deadspot::params_from_json(j.contains("params") ? j.at("params") : Json::object());
  } else if (s.model == "net") {
    if (j.contains("params")) throw ConfigError("scenario: net model takes no params");
    if (j.contains("net")) {
      s.net = net_spec_from_json(j.at("net"));
    } else if (j.contains("net_file")) {
      std::string path = detail::get<std::string>(j.at("net_file"), "scenario.net_file");
      if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
      s.net = net_spec_from_json(read_json_file(path));
    } else {
      throw ConfigError("scenario: net model needs 'net' or 'net_file'");
    }
    if (j.contains("bound")) {
      const auto& b = j.at("bound");
      detail::only_keys(b, {"transition", "n"}, "scenario.bound");
      const auto n = detail::get<std::uint32_t>(detail::member(b, "n", "scenario.bound"), "scenario.bound.n");
      if (n == 0) throw ConfigError("scenario.bound.n must be at least 1");
      s.bound = {{detail::get<std::string>(detail::member(b, "transition", "scenario.bound"), "scenario.bound"), n}};
    }
  } else {
    throw ConfigError("scenario: unknown model '" + s.model + "'");
  }
  s.horizon = detail::get_or(j, "horizon", s.horizon, "scenario");
  s.runs = detail::get_or(j, "runs", s.runs, "scenario");
  s.seed = detail::get_or(j, "seed", s.seed, "scenario");
  s.samples = detail::get_or(j, "samples", s.samples, "scenario");
  s.level = detail::get_or(j, "level", s.level, "scenario");
  s.epsilon = detail::get_or(j, "epsilon", s.epsilon, "scenario");
  if (!(s.horizon > 0) || !std::isfinite(s.horizon)) throw ConfigError("scenario: horizon must be positive");
  if (s.runs == 0) throw ConfigError("scenario: runs must be at least 1");
  if (!(s.level > 0 && s.level < 1)) throw ConfigError("scenario: level must lie in (0, 1)");
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return scenario_from_json(read_json_file(path), slash == std::string::npos ? "." : path.substr(0, slash));
}

}  // namespace castel
