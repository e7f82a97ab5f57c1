#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "castel/error.hpp"

namespace castel {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Star-shaped road network: straight roads from each exit point to a
/// single hub. Zones count distance to the hub in units of 1/rho.
class RoadNetwork {
 public:
  RoadNetwork() = default;

  RoadNetwork(std::map<std::string, Point2> points, std::string hub, std::vector<std::string> exits,
              double rho = 1.0, double d_close = 2.0)
      : points_(std::move(points)), hub_(std::move(hub)), exits_(std::move(exits)), rho_(rho), d_close_(d_close) {
    validate();
  }

  /// Default layout: A(0,0), B(100,0), C(60,20), hub T(60,0).
  static RoadNetwork t_junction(double rho = 1.0, double d_close = 2.0) {
    return RoadNetwork({{"A", {0, 0}}, {"B", {100, 0}}, {"C", {60, 20}}, {"T", {60, 0}}}, "T", {"A", "B", "C"}, rho,
                       d_close);
  }

  /// Straight road A(0,0) - T(len,0) - B(2 len,0).
  static RoadNetwork single_road(double len, double rho = 1.0, double d_close = 2.0) {
    return RoadNetwork({{"A", {0, 0}}, {"T", {len, 0}}, {"B", {2 * len, 0}}}, "T", {"A", "B"}, rho, d_close);
  }

  const std::map<std::string, Point2>& points() const { return points_; }
  const std::string& hub() const { return hub_; }
  const std::vector<std::string>& exits() const { return exits_; }
  double rho() const { return rho_; }
  double d_close() const { return d_close_; }

  bool is_exit(const std::string& p) const { return std::find(exits_.begin(), exits_.end(), p) != exits_.end(); }
  bool has_point(const std::string& p) const { return points_.count(p) != 0; }

  Point2 coord(const std::string& p) const {
    auto it = points_.find(p);
    if (it == points_.end()) throw Error("unknown point '" + p + "'");
    return it->second;
  }

  int start_zone(const std::string& point) const {
    if (point == hub_) throw Error("START is undefined at the hub '" + hub_ + "'");
    if (!is_exit(point)) throw Error("unknown exit point '" + point + "'");
    return static_cast<int>(std::lround(rho_ * distance(coord(point), coord(hub_))));
  }

  int max_start_zone() const {
    int m = 0;
    for (const auto& e : exits_) m = std::max(m, start_zone(e));
    return m;
  }

  bool is_route(const std::string& from, const std::string& to) const { return from != to && is_exit(to); }

  /// Coordinates of a car at zone p; inbound cars (from != hub) lie on the
  /// from-leg, outbound cars on the to-leg.
  Point2 position(const std::string& from, int p, const std::string& to) const {
    const std::string& leg = (from == hub_) ? to : from;
    if (!is_exit(leg)) throw Error("position: '" + leg + "' is not an exit");
    const int start = start_zone(leg);
    if (p < 0 || p > start) throw Error("zone " + std::to_string(p) + " out of range on leg " + leg);
    const Point2 h = coord(hub_);
    const Point2 e = coord(leg);
    const double len = distance(h, e);
    const double s = (static_cast<double>(p) / rho_) / len;
    return {h.x + (e.x - h.x) * s, h.y + (e.y - h.y) * s};
  }

  /// Zones left until the exit: p + START(to) inbound, START(to) - p outbound.
  int remaining(const std::string& from, int p, const std::string& to) const {
    position(from, p, to);  // range check
    if (from == hub_) return start_zone(to) - p;
    return p + start_zone(to);
  }

  double eta(const std::string& from, int p, const std::string& to, double v) const {
    if (!(v > 0)) throw Error("ETA requires positive speed");
    return remaining(from, p, to) / v;
  }

  bool is_close(const std::string& f1, int p1, const std::string& t1, const std::string& f2, int p2,
                const std::string& t2) const {
    return distance(position(f1, p1, t1), position(f2, p2, t2)) <= d_close_;
  }

 private:
  void validate() const {
    if (!(rho_ > 0)) throw ConfigError("zone resolution must be positive");
    if (!(d_close_ >= 0)) throw ConfigError("closeness radius must be non-negative");
    if (!has_point(hub_)) throw ConfigError("hub '" + hub_ + "' is not a declared point");
    if (exits_.empty()) throw ConfigError("road network has no exits");
    for (const auto& e : exits_) {
      if (e == hub_) throw ConfigError("hub cannot be an exit");
      if (!has_point(e)) throw ConfigError("exit '" + e + "' is not a declared point");
    }
    for (auto a = points_.begin(); a != points_.end(); ++a)
      for (auto b = std::next(a); b != points_.end(); ++b)
        if (distance(a->second, b->second) == 0.0)
          throw ConfigError("points '" + a->first + "' and '" + b->first + "' coincide");
  }

  std::map<std::string, Point2> points_;
  std::string hub_;
  std::vector<std::string> exits_;
  double rho_ = 1.0;
  double d_close_ = 2.0;
};

struct CarPosition {
  int id = 0;
  std::string from;
  int zone = 0;
  std::string to;
};

/// Undirected graph of cars within closeness range. Edges are (i, j) with
/// i < j as indices into `ids`.
struct ProximityGraph {
  std::vector<int> ids;
  std::vector<Point2> positions;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};

inline ProximityGraph proximity_graph(const RoadNetwork& rn, const std::vector<CarPosition>& cars) {
  ProximityGraph g;
  std::set<int> seen;
  for (const auto& c : cars) {
    if (!seen.insert(c.id).second) throw Error("duplicate car id " + std::to_string(c.id));
    g.ids.push_back(c.id);
    g.positions.push_back(rn.position(c.from, c.zone, c.to));
  }
  for (std::size_t i = 0; i < g.ids.size(); ++i)
    for (std::size_t j = i + 1; j < g.ids.size(); ++j)
      if (distance(g.positions[i], g.positions[j]) <= rn.d_close()) g.edges.emplace_back(i, j);
  return g;
}

/// Connected group of at least two cars; `support` holds the induced edges
/// as id pairs.
struct Bubble {
  std::vector<int> members;
  std::vector<std::pair<int, int>> support;
};

/// Connected components of g with at least k members, ordered by their
/// smallest node index.
inline std::vector<Bubble> bubbles(const ProximityGraph& g, std::size_t k) {
  if (k < 2) throw Error("bubble size must be at least 2");
  const std::size_t n = g.ids.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (auto [a, b] : g.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<int> comp(n, -1);
  std::vector<std::vector<std::size_t>> comps;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const int c = static_cast<int>(comps.size());
    comps.emplace_back();
    std::vector<std::size_t> stack{s};
    comp[s] = c;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      comps[c].push_back(u);
      for (std::size_t w : adj[u])
        if (comp[w] < 0) {
          comp[w] = c;
          stack.push_back(w);
        }
    }
  }
  std::vector<Bubble> out;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    if (comps[c].size() < k) continue;
    std::sort(comps[c].begin(), comps[c].end());
    Bubble b;
    for (std::size_t u : comps[c]) b.members.push_back(g.ids[u]);
    for (auto [a, bb] : g.edges)
      if (comp[a] == static_cast<int>(c)) b.support.emplace_back(g.ids[a], g.ids[bb]);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace castel
