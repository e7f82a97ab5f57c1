#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "castel/deadspot.hpp"
#include "castel/error.hpp"
#include "castel/net.hpp"
#include "castel/sim.hpp"
#include "castel/stats.hpp"

namespace castel::deadspot {

/// Expected time for a car at (f, p, t) with speed v to leave the dead spot:
/// one adv firing per remaining zone, one more for the turn at the hub when
/// still inbound, then the ext delay.
inline double expected_exit_delay(const RoadNetwork& rn, const std::string& f, int p, const std::string& t, double v,
                                  double adv_coef, double ext_rate) {
  const int steps = rn.remaining(f, p, t) + (f == rn.hub() ? 0 : 1);
  return steps / (adv_coef * v) + 1.0 / ext_rate;
}

/// Observer that gives messages identities. cre assigns a fresh id to the
/// creating car, jmp moves all ids of the donor to the receiver, ext and
/// sat-deliver deliver every id the car holds. Cars with identical colours
/// are interchangeable; instances are matched first in, first out.
class MessageTracker : public Observer {
 public:
  void on_start(const Net& net, const Marking& init) override {
    if (net.name() != "deadspot") throw Error("message tracking needs a deadspot net");
    if (!net.road_network()) throw Error("deadspot net without a road network");
    rn_ = net.road_network().get();
    z_ = net.place("Z");
    adv_coef_ = net.constant("ADV").value_or(0.04);
    ext_rate_ = net.constant("EXT").value_or(1.0);
    auto idx = [&](const char* n) { return net.find_transition(n); };
    ent_ = idx("ent");
    ext_t_ = idx("ext");
    adv_t_ = idx("adv");
    cre_ = idx("cre");
    jmp_ = idx("jmp");
    sat_ = idx("sat-deliver");
    for (const auto& [c, n] : init.bags[z_].entries())
      for (std::uint32_t i = 0; i < n; ++i) place_car(c, new_car());
  }

  void on_fire(const Net& net, double time, const EnabledFiring& f, const Marking&,
               std::vector<Annotation>& notes) override {
    const auto t = std::optional<std::size_t>(f.transition);
    const auto& tr = net.transitions()[f.transition];
    if (t == ent_) {
      place_car(output_colour(tr, 0, f.binding), new_car());
    } else if (t == adv_t_) {
      place_car(output_colour(tr, 0, f.binding), take_car(input_colour(tr, 0, f.binding)));
    } else if (t == cre_) {
      const Colour c = input_colour(tr, 0, f.binding);
      const std::size_t car = take_car(c);
      const std::uint64_t id = next_message_++;
      cars_[car].push_back(id);
      notes.push_back({Annotation::Kind::Created, id, static_cast<std::int64_t>(car), expected_delay(net, c)});
      created_[id] = time;
      place_car(output_colour(tr, 0, f.binding), car);
    } else if (t == ext_t_ || t == sat_) {
      const Colour c = input_colour(tr, 0, f.binding);
      const std::size_t car = take_car(c);
      for (std::uint64_t id : cars_[car]) {
        notes.push_back({Annotation::Kind::Delivered, id, static_cast<std::int64_t>(car), time - created_.at(id)});
        created_.erase(id);
      }
      cars_[car].clear();
      if (t == sat_) place_car(output_colour(tr, 0, f.binding), car);
    } else if (t == jmp_) {
      const Colour rc = input_colour(tr, 0, f.binding);
      const Colour dc = input_colour(tr, 1, f.binding);
      if (!(eta(net, rc) < eta(net, dc))) throw Error("jmp fired towards a car that is not faster");
      const std::size_t receiver = take_car(rc);
      const std::size_t donor = take_car(dc);
      if (cars_[donor].empty()) {
        notes.push_back({Annotation::Kind::NoopJump, 0, static_cast<std::int64_t>(donor), 0.0});
      } else {
        for (std::uint64_t id : cars_[donor]) {
          cars_[receiver].push_back(id);
          notes.push_back({Annotation::Kind::Jumped, id, static_cast<std::int64_t>(receiver), 0.0});
        }
        cars_[donor].clear();
      }
      place_car(output_colour(tr, 0, f.binding), receiver);
      place_car(output_colour(tr, 1, f.binding), donor);
    }
  }

 private:
  static Colour input_colour(const Transition& tr, std::size_t arc, const std::vector<Value>& b) {
    Colour c;
    for (int s : tr.inputs[arc].slots) c.push_back(b[static_cast<std::size_t>(s)]);
    return c;
  }

  static Colour output_colour(const Transition& tr, std::size_t arc, const std::vector<Value>& b) {
    Colour c;
    for (const auto& e : tr.outputs[arc].components) c.push_back(static_cast<Value>(std::llround(e.eval(b.data()))));
    return c;
  }

  std::size_t new_car() {
    cars_.emplace_back();
    return cars_.size() - 1;
  }

  void place_car(const Colour& c, std::size_t car) { where_[c].push_back(car); }

  std::size_t take_car(const Colour& c) {
    auto it = where_.find(c);
    if (it == where_.end() || it->second.empty()) throw Error("message tracker lost a car");
    const std::size_t car = it->second.front();
    it->second.pop_front();
    if (it->second.empty()) where_.erase(it);
    return car;
  }

  double eta(const Net& net, const Colour& c) const {
    return rn_->eta(net.atoms().name(c[0]), static_cast<int>(c[1]), net.atoms().name(c[2]), static_cast<double>(c[3]));
  }

  double expected_delay(const Net& net, const Colour& c) const {
    return expected_exit_delay(*rn_, net.atoms().name(c[0]), static_cast<int>(c[1]), net.atoms().name(c[2]),
                               static_cast<double>(c[3]), adv_coef_, ext_rate_);
  }

  const RoadNetwork* rn_ = nullptr;
  std::size_t z_ = 0;
  double adv_coef_ = 0.04;
  double ext_rate_ = 1.0;
  std::optional<std::size_t> ent_, ext_t_, adv_t_, cre_, jmp_, sat_;
  std::vector<std::vector<std::uint64_t>> cars_;  // message ids per car instance
  std::unordered_map<Colour, std::deque<std::size_t>, ColourHash> where_;
  std::unordered_map<std::uint64_t, double> created_;
  std::uint64_t next_message_ = 0;
};

inline ObserverFactory message_tracker() {
  return [] { return std::make_unique<MessageTracker>(); };
}

struct DeliveryRecord {
  std::uint64_t seed = 0;
  std::uint64_t message = 0;
  std::int64_t car = -1;
  double created = 0.0;
  double expected_delay = 0.0;  // expected own-exit delay at creation
  std::optional<double> delivered;
  int hops = 0;

  std::optional<double> delay() const {
    if (!delivered) return std::nullopt;
    return *delivered - created;
  }
};

/// Per-message records of one traced run.
inline std::vector<DeliveryRecord> delivery_records(const Trace& trace) {
  if (trace.net_name != "deadspot") throw Error("delivery metrics need a deadspot trace");
  std::vector<DeliveryRecord> out;
  std::map<std::uint64_t, std::size_t> at;
  for (const auto& ev : trace.events)
    for (const auto& a : ev.annotations) {
      switch (a.kind) {
        case Annotation::Kind::Created:
          at[a.message] = out.size();
          out.push_back({trace.seed, a.message, a.car, ev.time, a.value, std::nullopt, 0});
          break;
        case Annotation::Kind::Jumped: ++out.at(at.at(a.message)).hops; break;
        case Annotation::Kind::Delivered: out.at(at.at(a.message)).delivered = ev.time; break;
        case Annotation::Kind::NoopJump: break;
      }
    }
  return out;
}

struct RunDelivery {
  std::uint64_t seed = 0;
  std::size_t created = 0;
  std::size_t delivered = 0;
  std::size_t censored = 0;
  std::size_t half_time = 0;
  std::size_t jumps = 0;
  std::size_t noop_jumps = 0;
  double mean_delay = std::nan("");  // NaN when nothing was delivered
  double mean_ratio = std::nan("");
  double half_time_fraction = std::nan("");
};

struct DeliverySummary {
  std::size_t runs = 0;
  std::size_t created = 0;
  std::size_t delivered = 0;
  std::size_t censored = 0;
  std::size_t jumps = 0;
  std::size_t noop_jumps = 0;
  bool empty = true;  // no message was created
  double half_time_fraction = std::nan("");
  stats::Interval half_time_ci{};
  double mean_delay = std::nan("");
  stats::Interval mean_delay_ci{};
  double mean_ratio = std::nan("");
  stats::Interval mean_ratio_ci{};
  std::vector<RunDelivery> per_run;
  std::vector<DeliveryRecord> records;
};

inline RunDelivery run_delivery(const Trace& trace, const std::vector<DeliveryRecord>& recs) {
  RunDelivery r;
  r.seed = trace.seed;
  r.created = recs.size();
  double delay_sum = 0.0, ratio_sum = 0.0;
  for (const auto& rec : recs) {
    if (auto d = rec.delay()) {
      ++r.delivered;
      delay_sum += *d;
      ratio_sum += *d / rec.expected_delay;
      if (*d < 0.5 * rec.expected_delay) ++r.half_time;
    } else {
      ++r.censored;
    }
  }
  for (const auto& ev : trace.events)
    for (const auto& a : ev.annotations) {
      if (a.kind == Annotation::Kind::NoopJump) ++r.noop_jumps;
    }
  std::size_t jmp_events = 0;
  for (const auto& ev : trace.events) {
    bool moved = false;
    for (const auto& a : ev.annotations) moved = moved || a.kind == Annotation::Kind::Jumped;
    jmp_events += moved;
  }
  r.jumps = jmp_events;
  if (r.delivered > 0) {
    const double n = static_cast<double>(r.delivered);
    r.mean_delay = delay_sum / n;
    r.mean_ratio = ratio_sum / n;
    r.half_time_fraction = static_cast<double>(r.half_time) / n;
  }
  return r;
}

/// Summary of per-run figures and message records. Pooled estimates are
/// over delivered messages; intervals are normal approximations across
/// per-run values. Messages still in transit at the horizon are censored
/// and excluded.
inline DeliverySummary summarize_delivery(std::vector<RunDelivery> runs, std::vector<DeliveryRecord> records,
                                          double level = 0.95) {
  DeliverySummary s;
  s.runs = runs.size();
  std::size_t half = 0;
  std::vector<double> run_frac, run_delay, run_ratio;
  for (const auto& r : runs) {
    s.created += r.created;
    s.delivered += r.delivered;
    s.censored += r.censored;
    s.jumps += r.jumps;
    s.noop_jumps += r.noop_jumps;
    half += r.half_time;
    if (r.delivered > 0) {
      run_frac.push_back(r.half_time_fraction);
      run_delay.push_back(r.mean_delay);
      run_ratio.push_back(r.mean_ratio);
    }
  }
  double delay_sum = 0.0, ratio_sum = 0.0;
  for (const auto& rec : records)
    if (auto d = rec.delay()) {
      delay_sum += *d;
      ratio_sum += *d / rec.expected_delay;
    }
  s.empty = s.created == 0;
  if (s.delivered > 0) {
    const double n = static_cast<double>(s.delivered);
    s.half_time_fraction = static_cast<double>(half) / n;
    s.mean_delay = delay_sum / n;
    s.mean_ratio = ratio_sum / n;
    s.half_time_ci = stats::normal_interval(run_frac, level);
    s.mean_delay_ci = stats::normal_interval(run_delay, level);
    s.mean_ratio_ci = stats::normal_interval(run_ratio, level);
  }
  s.per_run = std::move(runs);
  s.records = std::move(records);
  return s;
}

/// Delivery summary over traced runs.
inline DeliverySummary delivery_metrics(const std::vector<Trace>& traces, double level = 0.95) {
  std::vector<RunDelivery> runs;
  std::vector<DeliveryRecord> records;
  for (const auto& tr : traces) {
    auto recs = delivery_records(tr);
    runs.push_back(run_delivery(tr, recs));
    records.insert(records.end(), recs.begin(), recs.end());
  }
  return summarize_delivery(std::move(runs), std::move(records), level);
}

/// One row per message.
inline void write_delivery_csv(const std::vector<DeliveryRecord>& recs, std::ostream& os) {
  os << "seed,message,car,created,expected_delay,delivered,delay,hops\n";
  for (const auto& r : recs) {
    os << r.seed << ',' << r.message << ',' << r.car << ',' << format_real(r.created) << ','
       << format_real(r.expected_delay) << ',';
    if (r.delivered) os << format_real(*r.delivered) << ',' << format_real(*r.delay());
    else os << "censored,";
    os << ',' << r.hops << '\n';
  }
}

/// One summary row per run.
inline void write_run_csv(const std::vector<RunDelivery>& runs, std::ostream& os) {
  os << "seed,created,delivered,censored,half_time,jumps,noop_jumps,mean_delay,mean_ratio,half_time_fraction\n";
  for (const auto& r : runs)
    os << r.seed << ',' << r.created << ',' << r.delivered << ',' << r.censored << ',' << r.half_time << ','
       << r.jumps << ',' << r.noop_jumps << ',' << format_real(r.mean_delay) << ',' << format_real(r.mean_ratio)
       << ',' << format_real(r.half_time_fraction) << '\n';
}

struct SatellitePoint {
  int n = 0;
  double mean_delay = std::nan("");
  double delay_se = 0.0;
  double factor = std::nan("");  // baseline delay / delay at n
  double factor_se = 0.0;
  std::size_t runs_used = 0;
};

struct SatelliteResult {
  SatellitePoint baseline;
  std::vector<SatellitePoint> points;
  stats::LinearFit fit;
  bool non_decreasing = true;  // no consecutive pair shows a significant drop
};

struct SweepRunOptions {
  double horizon = 100.0;
  std::uint64_t base_seed = 1;
  unsigned jobs = 1;
};

namespace detail {

inline SatellitePoint satellite_point(Params p, int n, std::size_t runs, const SweepRunOptions& o) {
  p.satellite = true;
  p.sat_n = n;
  auto [net, init] = build(p);
  SimOptions so;
  so.observer = message_tracker();
  std::vector<double> delays(runs, std::nan(""));
  parallel_for(runs, o.jobs, [&](std::size_t i) {
    const Trace t = simulate(net, init, o.horizon, o.base_seed + i, so);
    delays[i] = run_delivery(t, delivery_records(t)).mean_delay;
  });
  std::vector<double> used;
  for (double d : delays)
    if (!std::isnan(d)) used.push_back(d);
  SatellitePoint pt;
  pt.n = n;
  pt.runs_used = used.size();
  pt.mean_delay = stats::mean(used);
  pt.delay_se = stats::standard_error(used);
  return pt;
}

}  // namespace detail

/// Improvement factor of the mean delivery delay for each satellite count,
/// relative to a fleet without satellite links, and its OLS fit in n.
/// Standard errors of the ratios use the delta method.
inline SatelliteResult satellite_sweep(const Params& params, std::vector<int> ns, std::size_t runs,
                                       const SweepRunOptions& o = {}) {
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  if (ns.size() < 2) throw ConfigError("satellite sweep needs at least two distinct n values");
  for (int n : ns)
    if (n < 1 || n > 9) throw ConfigError("satellite counts must lie in [1, 9]");
  if (runs < 30) throw ConfigError("satellite sweep needs at least 30 runs per value");

  SatelliteResult r;
  r.baseline = detail::satellite_point(params, 0, runs, o);
  r.baseline.factor = 1.0;
  const double b = r.baseline.mean_delay;
  const double rb = r.baseline.delay_se / b;
  std::vector<double> xs, ys;
  for (int n : ns) {
    SatellitePoint pt = detail::satellite_point(params, n, runs, o);
    pt.factor = b / pt.mean_delay;
    const double rd = pt.delay_se / pt.mean_delay;
    pt.factor_se = pt.factor * std::sqrt(rb * rb + rd * rd);
    xs.push_back(n);
    ys.push_back(pt.factor);
    r.points.push_back(pt);
  }
  r.fit = stats::fit_linear(xs, ys);
  const double z = stats::normal_quantile(0.95);
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const auto& a = r.points[i - 1];
    const auto& c = r.points[i];
    const double se = std::hypot(a.factor_se, c.factor_se);
    if (se > 0 ? (c.factor - a.factor) / se < -z : c.factor < a.factor) r.non_decreasing = false;
  }
  return r;
}

}  // namespace castel::deadspot
