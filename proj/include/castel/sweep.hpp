#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "castel/delivery.hpp"
#include "castel/sim.hpp"
#include "castel/stats.hpp"

namespace castel {

using Cell = std::vector<std::pair<std::string, double>>;
using NetBuilder = std::function<std::pair<Net, Marking>(const Cell&)>;

/// Metrics: events, tokens:<place> (time-averaged token count), mean_cars
/// (tokens:Z), and the deadspot delivery figures created, delivered,
/// jumps, mean_delay, mean_ratio, half_time_fraction.
struct SweepSpec {
  std::vector<std::pair<std::string, std::vector<double>>> grid;
  std::size_t runs = 10;
  std::uint64_t base_seed = 1;
  double horizon = 100.0;
  std::vector<std::string> metrics{"events"};
  unsigned jobs = 1;
};

struct SweepRow {
  std::size_t cell = 0;
  Cell params;
  std::string metric;
  double mean = std::nan("");
  double sd = std::nan("");
  std::size_t count = 0;  // runs with a defined value
  bool failed = false;
  std::string error;
};

struct SweepSample {
  std::size_t cell = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

struct SweepTable {
  std::vector<std::string> parameters;
  std::vector<SweepRow> rows;
  std::vector<SweepSample> samples;
  std::vector<std::string> warnings;

  const SweepRow& row(std::size_t cell, const std::string& metric) const {
    for (const auto& r : rows)
      if (r.cell == cell && r.metric == metric) return r;
    throw Error("no sweep row for cell " + std::to_string(cell) + " metric " + metric);
  }
};

namespace detail {

inline bool is_delivery_metric(const std::string& m) {
  return m == "created" || m == "delivered" || m == "jumps" || m == "mean_delay" || m == "mean_ratio" ||
         m == "half_time_fraction";
}

inline std::string metric_place(const std::string& m) {
  if (m == "mean_cars") return "Z";
  if (m.rfind("tokens:", 0) == 0) return m.substr(7);
  return {};
}

// Time integral of the token count at one place.
class Occupancy : public Observer {
 public:
  struct Result {
    double integral = 0.0;
    double last_time = 0.0;
    double count = 0.0;
  };

  Occupancy(std::size_t place, Result& out) : place_(place), out_(out) {}

  void on_start(const Net&, const Marking& m) override {
    out_ = {0.0, 0.0, static_cast<double>(m.bags[place_].total())};
  }

  void on_fire(const Net&, double time, const EnabledFiring&, const Marking& m, std::vector<Annotation>&) override {
    out_.integral += out_.count * (time - out_.last_time);
    out_.last_time = time;
    out_.count = static_cast<double>(m.bags[place_].total());
  }

 private:
  std::size_t place_;
  Result& out_;
};

class Fanout : public Observer {
 public:
  void add(std::unique_ptr<Observer> o) { parts_.push_back(std::move(o)); }

  void on_start(const Net& net, const Marking& m) override {
    for (auto& o : parts_) o->on_start(net, m);
  }

  void on_fire(const Net& net, double time, const EnabledFiring& f, const Marking& m,
               std::vector<Annotation>& notes) override {
    for (auto& o : parts_) o->on_fire(net, time, f, m, notes);
  }

 private:
  std::vector<std::unique_ptr<Observer>> parts_;
};

// Metric values of one run, in the order of `metrics`; NaN when undefined.
inline std::vector<double> run_metrics(const Net& net, const Marking& init, double horizon, std::uint64_t seed,
                                       const std::vector<std::string>& metrics) {
  std::vector<std::size_t> places;
  bool delivery = false;
  for (const auto& m : metrics) {
    const std::string p = metric_place(m);
    if (!p.empty()) places.push_back(net.place(p));
    delivery = delivery || is_delivery_metric(m);
  }
  std::vector<Occupancy::Result> occ(places.size());
  SimOptions o;
  o.observer = [&] {
    auto fan = std::make_unique<Fanout>();
    for (std::size_t i = 0; i < places.size(); ++i) fan->add(std::make_unique<Occupancy>(places[i], occ[i]));
    if (delivery) fan->add(deadspot::message_tracker()());
    return fan;
  };
  const Trace t = simulate(net, init, horizon, seed, o);
  std::optional<deadspot::RunDelivery> d;
  if (delivery) d = deadspot::run_delivery(t, deadspot::delivery_records(t));

  std::vector<double> out;
  std::size_t k = 0;
  for (const auto& m : metrics) {
    if (m == "events") {
      out.push_back(static_cast<double>(t.events.size()));
    } else if (!metric_place(m).empty()) {
      const auto& r = occ[k++];
      out.push_back((r.integral + r.count * (horizon - r.last_time)) / horizon);
    } else if (m == "created") {
      out.push_back(static_cast<double>(d->created));
    } else if (m == "delivered") {
      out.push_back(static_cast<double>(d->delivered));
    } else if (m == "jumps") {
      out.push_back(static_cast<double>(d->jumps));
    } else if (m == "mean_delay") {
      out.push_back(d->mean_delay);
    } else if (m == "mean_ratio") {
      out.push_back(d->mean_ratio);
    } else {
      out.push_back(d->half_time_fraction);
    }
  }
  return out;
}

inline void check_metric(const std::string& m) {
  if (m == "events" || !metric_place(m).empty() || is_delivery_metric(m)) return;
  throw ConfigError("unknown metric '" + m + "'");
}

}  // namespace detail

/// Cartesian product of the grid, first parameter varying slowest.
/// Duplicate values are dropped with a warning.
inline std::vector<Cell> grid_cells(std::vector<std::pair<std::string, std::vector<double>>>& grid,
                                    std::vector<std::string>* warnings = nullptr) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  for (auto& [name, values] : grid) {
    if (values.empty()) throw ConfigError("sweep parameter " + name + " has no values");
    std::vector<double> unique;
    for (double v : values) {
      if (std::find(unique.begin(), unique.end(), v) != unique.end()) {
        if (warnings) warnings->push_back("duplicate value " + format_number(v) + " for " + name + " ignored");
        continue;
      }
      unique.push_back(v);
    }
    values = std::move(unique);
  }
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (grid[i].first == grid[j].first) throw ConfigError("sweep parameter " + grid[i].first + " listed twice");
  std::vector<Cell> cells{{}};
  for (const auto& [name, values] : grid) {
    std::vector<Cell> next;
    for (const auto& c : cells)
      for (double v : values) {
        Cell d = c;
        d.emplace_back(name, v);
        next.push_back(std::move(d));
      }
    cells = std::move(next);
  }
  return cells;
}

/// Runs `spec.runs` seeded simulations per grid cell, seeds base..base+runs-1
/// in every cell, and aggregates each metric. A cell whose builder or runs
/// throw is reported as failed and the sweep continues.
inline SweepTable sweep(const NetBuilder& builder, SweepSpec spec) {
  if (spec.runs == 0) throw ConfigError("sweep needs at least one run per cell");
  if (!(spec.horizon > 0) || !std::isfinite(spec.horizon)) throw ConfigError("horizon must be positive and finite");
  if (spec.metrics.empty()) throw ConfigError("sweep needs at least one metric");
  for (const auto& m : spec.metrics) detail::check_metric(m);
  SweepTable table;
  const auto cells = grid_cells(spec.grid, &table.warnings);
  for (const auto& [name, values] : spec.grid) table.parameters.push_back(name);

  const std::size_t nm = spec.metrics.size();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<std::vector<double>> values(spec.runs);
    std::string error;
    try {
      auto [net, init] = builder(cells[c]);
      parallel_for(spec.runs, spec.jobs, [&](std::size_t i) {
        values[i] = detail::run_metrics(net, init, spec.horizon, spec.base_seed + i, spec.metrics);
      });
    } catch (const Error& e) {
      error = e.what();
    }
    for (std::size_t k = 0; k < nm; ++k) {
      SweepRow row;
      row.cell = c;
      row.params = cells[c];
      row.metric = spec.metrics[k];
      if (!error.empty()) {
        row.failed = true;
        row.error = error;
        table.rows.push_back(std::move(row));
        continue;
      }
      std::vector<double> xs;
      for (std::size_t i = 0; i < spec.runs; ++i) {
        const double x = values[i][k];
        if (std::isnan(x)) continue;
        xs.push_back(x);
        table.samples.push_back({c, spec.base_seed + i, spec.metrics[k], x});
      }
      row.count = xs.size();
      if (!xs.empty()) {
        row.mean = stats::mean(xs);
        row.sd = xs.size() > 1 ? stats::sd(xs) : 0.0;
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

/// Sweep over deadspot parameters on top of `base`.
inline SweepTable deadspot_sweep(const deadspot::Params& base, SweepSpec spec,
                                 const std::function<void(deadspot::Params&, const std::string&, double)>& set) {
  return sweep(
      [&](const Cell& cell) {
        deadspot::Params p = base;
        for (const auto& [name, v] : cell) set(p, name, v);
        return deadspot::build(p);
      },
      std::move(spec));
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

/// One row per (cell, metric).
inline void write_sweep_csv(const SweepTable& t, std::ostream& os) {
  for (const auto& p : t.parameters) os << detail::csv_field(p) << ',';
  os << "metric,mean,sd,count,failed,error\n";
  for (const auto& r : t.rows) {
    for (const auto& [name, v] : r.params) os << format_number(v) << ',';
    os << detail::csv_field(r.metric) << ',' << format_real(r.mean) << ',' << format_real(r.sd) << ',' << r.count
       << ',' << (r.failed ? 1 : 0) << ',' << detail::csv_field(r.error) << '\n';
  }
}

/// Long format: one row per (cell, seed, metric) value.
inline void write_sweep_long_csv(const SweepTable& t, std::ostream& os) {
  for (const auto& p : t.parameters) os << detail::csv_field(p) << ',';
  os << "seed,metric,value\n";
  for (const auto& s : t.samples) {
    const SweepRow& r = t.row(s.cell, s.metric);
    for (const auto& [name, v] : r.params) os << format_number(v) << ',';
    os << s.seed << ',' << detail::csv_field(s.metric) << ',' << format_real(s.value) << '\n';
  }
}

/// Satellite sweep table with the fitted line as a comment footer.
inline void write_satellite_csv(const deadspot::SatelliteResult& r, std::ostream& os) {
  os << "n,mean_delay,delay_se,factor,factor_se,runs_used\n";
  auto row = [&](const deadspot::SatellitePoint& p) {
    os << p.n << ',' << format_real(p.mean_delay) << ',' << format_real(p.delay_se) << ',' << format_real(p.factor)
       << ',' << format_real(p.factor_se) << ',' << p.runs_used << '\n';
  };
  row(r.baseline);
  for (const auto& p : r.points) row(p);
  os << "# fit factor = A*n + B: A=" << format_real(r.fit.slope) << " B=" << format_real(r.fit.intercept)
     << " R2=" << format_real(r.fit.r2) << '\n';
  os << "# non_decreasing_95=" << (r.non_decreasing ? "true" : "false") << '\n';
}

}  // namespace castel
