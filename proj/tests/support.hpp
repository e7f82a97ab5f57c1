#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <string>
#include <utility>
#include <vector>

#include "castel/deadspot.hpp"
#include "castel/net.hpp"

namespace castel::testing {

/// One place `done`, one input-free transition `t` feeding it.
inline NetSpec dangling_spec(double rate = 1.0) {
  NetSpec s;
  s.name = "dangling";
  s.places = {{"done", "Dot"}};
  TransitionSpec t;
  t.name = "t";
  t.outputs = {{"done", {}, "1"}};
  t.rate = std::to_string(rate);
  s.transitions = {t};
  return s;
}

/// Place `src` with one token and transition `go` moving it to `dst` at
/// the given rate; `fired` labels the target state.
inline NetSpec two_state_spec(double rate = 1.0) {
  NetSpec s;
  s.name = "two-state";
  s.places = {{"src", "Dot"}, {"dst", "Dot"}};
  TransitionSpec t;
  t.name = "go";
  t.inputs = {{"src", {}, 1}};
  t.outputs = {{"dst", {}, "1"}};
  t.rate = format_number(rate);
  s.transitions = {t};
  s.initial = {{"src", {{{}, 1}}}};
  return s;
}

/// Place `loop` with a self-loop transition of the given rate.
inline NetSpec self_loop_spec(double rate) {
  NetSpec s;
  s.name = "self-loop";
  s.places = {{"loop", "Dot"}};
  TransitionSpec t;
  t.name = "tick";
  t.inputs = {{"loop", {}, 1}};
  t.outputs = {{"loop", {}, "1"}};
  t.rate = format_number(rate);
  s.transitions = {t};
  s.initial = {{"loop", {{{}, 1}}}};
  return s;
}

/// Reference marking with K = N - 3, L = M - 6 and three
/// cars (A,59,C,100,0), (T,0,A,80,4), (C,10,A,120,2).
inline Marking reference_marking(const Net& net, int N, int M) {
  Marking m = net.empty_marking();
  m.bags[net.place("K")].add(Colour{}, static_cast<std::uint32_t>(N - 3));
  if (M > 6) m.bags[net.place("L")].add(Colour{}, static_cast<std::uint32_t>(M - 6));
  for (const auto& c : std::vector<std::vector<std::string>>{
           {"A", "59", "C", "100", "0"}, {"T", "0", "A", "80", "4"}, {"C", "10", "A", "120", "2"}})
    m.bags[net.place("Z")].add(deadspot::car(net, c));
  return m;
}

/// Parameters of a lone car on the T-junction: no arrivals, no messages.
inline deadspot::Params solitary_params() {
  deadspot::Params p;
  p.N = 1;
  p.M = 0;
  p.speeds = {80};
  p.jmp = false;
  return p;
}

/// Marking with the single car at the start of route f -> t.
inline Marking solitary_marking(const Net& net, const std::string& f, const std::string& t) {
  Marking m = net.empty_marking();
  const int start = net.road_network()->start_zone(f);
  m.bags[net.place("Z")].add(deadspot::car(net, {f, std::to_string(start), t, "80", "0"}));
  return m;
}

}  // namespace castel::testing
