#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "castel/error.hpp"
#include "castel/net.hpp"
#include "castel/spatial.hpp"

namespace castel::deadspot {

/// Scenario parameters. Default rates: ent 1, ext 1,
/// adv 0.04 v, cre 3, jmp 5 (all per binding).
struct Params {
  int N = 10;  // max cars in the dead spot (tokens in K)
  int M = 20;  // max messages (tokens in L)
  int R = 1;   // zones per distance unit
  std::vector<int> speeds{80, 100, 120};
  double ent_rate = 1.0;
  double ext_rate = 1.0;
  double adv_coef = 0.04;
  double cre_rate = 3.0;
  double jmp_rate = 5.0;
  double arrival_scale = 1.0;
  double d_close = 2.0;
  bool jmp = true;
  bool satellite = false;
  int sat_n = 0;  // satellite-equipped cars per 10
  double sat_rate = 10.0;
  // Custom geometry; when unset the T-junction network with rho = R and
  // the radius above is used.
  std::optional<RoadNetwork> road;
};

inline void validate(const Params& p) {
  if (p.N < 1) throw ConfigError("N must be at least 1");
  if (p.M < 0) throw ConfigError("M must be non-negative");
  if (p.R < 1) throw ConfigError("R must be at least 1");
  if (p.speeds.empty()) throw ConfigError("speed set is empty");
  for (int v : p.speeds)
    if (v <= 0) throw ConfigError("speeds must be positive");
  for (double r : {p.ent_rate, p.ext_rate, p.adv_coef, p.cre_rate, p.jmp_rate, p.arrival_scale, p.sat_rate})
    if (!(r > 0)) throw ConfigError("rates must be positive");
  if (p.d_close < 0) throw ConfigError("closeness radius must be non-negative");
  if (p.sat_n < 0 || p.sat_n > 10) throw ConfigError("satellite count must be in [0, 10]");
}

inline RoadNetwork road_network(const Params& p) {
  if (p.road) return *p.road;
  return RoadNetwork::t_junction(static_cast<double>(p.R), p.d_close);
}

/// Smallest useful instance: straight road A - T - B with START = 2 on both
/// legs, speed 80 only.
inline Params tiny(int N, int M, bool jmp = true) {
  Params p;
  p.N = N;
  p.M = M;
  p.speeds = {80};
  p.jmp = jmp;
  p.road = RoadNetwork::single_road(2.0, 1.0, p.d_close);
  return p;
}

/// Car colour fields, in order.
inline std::vector<std::string> car_fields(const Params& p) {
  std::vector<std::string> f{"f", "p", "t", "v", "m"};
  if (p.satellite) f.push_back("s");
  return f;
}

/// Builds the dead-spot net (places K, L, Z; transitions ent, ext, adv, cre,
/// jmp and, for the satellite variant, sat-deliver) with K = N, L = M, Z empty.
inline NetSpec build_spec(const Params& p) {
  validate(p);
  const RoadNetwork rn = road_network(p);
  const std::string& H = rn.hub();
  const bool sat = p.satellite;

  NetSpec s;
  s.name = "deadspot";
  s.road_network = rn;
  s.constants = {{"N", p.N},           {"M", p.M},           {"ENT", p.ent_rate}, {"EXT", p.ext_rate},
                 {"ADV", p.adv_coef},  {"CRE", p.cre_rate},  {"JMP", p.jmp_rate}, {"ARRIVAL", p.arrival_scale},
                 {"SAT", p.sat_n},     {"SATRATE", p.sat_rate}};

  DomainSpec point{"Point", "atoms", rn.exits(), 0, 0, {}, {}};
  point.atoms.push_back(H);
  s.domains.push_back(point);
  s.domains.push_back({"Exit", "atoms", rn.exits(), 0, 0, {}, {}});
  s.domains.push_back({"Zone", "range", {}, 0, rn.max_start_zone(), {}, {}});
  std::vector<Value> speeds(p.speeds.begin(), p.speeds.end());
  s.domains.push_back({"Speed", "set", {}, 0, 0, speeds, {}});
  s.domains.push_back({"Msg", "range", {}, 0, p.M, {}, {}});
  DomainSpec car{"Car", "product", {}, 0, 0, {}, {{"f", "Point"}, {"p", "Zone"}, {"t", "Exit"}, {"v", "Speed"}, {"m", "Msg"}}};
  if (sat) {
    s.domains.push_back({"Flag", "range", {}, 0, 1, {}, {}});
    car.fields.emplace_back("s", "Flag");
  }
  s.domains.push_back(car);

  s.places = {{"K", "Dot"}, {"L", "Dot"}, {"Z", "Car"}};
  s.initial = {{"K", {{{}, static_cast<std::uint32_t>(p.N)}}}};
  if (p.M > 0) s.initial.push_back({"L", {{{}, static_cast<std::uint32_t>(p.M)}}});

  auto car_vars = [&](const std::string& suffix) {
    std::vector<std::string> v{"f" + suffix, "p" + suffix, "t" + suffix, "v" + suffix, "m" + suffix};
    if (sat) v.push_back("s" + suffix);
    return v;
  };
  auto with_sat = [&](std::vector<std::string> v, const std::string& sv) {
    if (sat) v.push_back(sv);
    return v;
  };

  TransitionSpec ent;
  ent.name = "ent";
  ent.free = {{"f", "Point"}, {"p", "Zone"}, {"t", "Exit"}, {"v", "Speed"}};
  if (sat) ent.free.push_back({"s", "Flag"});
  ent.inputs = {{"K", {}, 1}};
  ent.outputs = {{"Z", with_sat({"f", "p", "t", "v", "0"}, "s"), "1"}};
  ent.guard = "IsRoute(f, t) and f != " + H + " and p = START(f)";
  ent.rate = "ENT * ARRIVAL";
  if (sat) {
    ent.guard += " and ((s = 1 and SAT > 0) or (s = 0 and SAT < 10))";
    ent.rate = "ENT * ARRIVAL * (s * SAT + (1 - s) * (10 - SAT)) / 10";
  }
  ent.tags = {"player:environment"};

  TransitionSpec ext;
  ext.name = "ext";
  ext.inputs = {{"Z", car_vars(""), 1}};
  ext.outputs = {{"K", {}, "1"}, {"L", {}, "m"}};
  ext.guard = "IsRoute(f, t) and f = " + H + " and p = START(t)";
  ext.rate = "EXT";
  ext.tags = {"player:driver"};

  TransitionSpec adv;
  adv.name = "adv";
  adv.inputs = {{"Z", car_vars(""), 1}};
  adv.free = {{"f'", "Point"}, {"p'", "Zone"}};
  adv.outputs = {{"Z", with_sat({"f'", "p'", "t", "v", "m"}, "s"), "1"}};
  adv.guard = "IsRoute(f, t) and ((f != " + H + " and ((p != 0 and p' = p - 1 and f' = f) or (p = 0 and p' = 0 and f' = " +
              H + "))) or (f = " + H + " and p != START(t) and f' = f and p' = p + 1))";
  adv.rate = "ADV * v";
  adv.steps = "p' != p";
  adv.tags = {"spatial", "player:driver"};

  TransitionSpec cre;
  cre.name = "cre";
  cre.inputs = {{"Z", car_vars(""), 1}, {"L", {}, 1}};
  cre.outputs = {{"Z", with_sat({"f", "p", "t", "v", "m + 1"}, "s"), "1"}};
  cre.rate = "CRE";
  cre.tags = {"player:passenger"};

  s.transitions = {ent, ext, adv, cre};

  if (p.jmp) {
    TransitionSpec jmp;
    jmp.name = "jmp";
    jmp.inputs = {{"Z", car_vars(""), 1}, {"Z", car_vars("'"), 1}};
    jmp.outputs = {{"Z", with_sat({"f", "p", "t", "v", "m + m'"}, "s"), "1"},
                   {"Z", with_sat({"f'", "p'", "t'", "v'", "0"}, "s'"), "1"}};
    jmp.guard = "IsClose(f, p, t, f', p', t') and ETA(f, p, t, v) < ETA(f', p', t', v')";
    jmp.rate = "JMP";
    jmp.tags = {"player:relay"};
    s.transitions.push_back(jmp);
  }
  if (sat) {
    TransitionSpec st;
    st.name = "sat-deliver";
    st.inputs = {{"Z", car_vars(""), 1}};
    st.outputs = {{"Z", {"f", "p", "t", "v", "0", "s"}, "1"}, {"L", {}, "m"}};
    st.guard = "s = 1 and m > 0";
    st.rate = "SATRATE";
    st.tags = {"player:relay"};
    s.transitions.push_back(st);
  }
  return s;
}

inline std::pair<Net, Marking> build(const Params& p) {
  Net net(build_spec(p));
  Marking init = net.initial();
  return {std::move(net), std::move(init)};
}

/// Builds a car colour from textual components, e.g. {"A","59","C","100","0"}.
inline Colour car(const Net& net, const std::vector<std::string>& parts) {
  return net.parse_colour(net.place("Z"), parts);
}

enum class JumpDecision { ToFirst, ToSecond, None };

/// Messages move to the car with the strictly smaller ETA; ties move nothing.
inline JumpDecision jmp_direction(double first_eta, double second_eta) {
  if (first_eta < second_eta) return JumpDecision::ToFirst;
  if (second_eta < first_eta) return JumpDecision::ToSecond;
  return JumpDecision::None;
}

}  // namespace castel::deadspot
