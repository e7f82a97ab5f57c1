#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <exception>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "castel/error.hpp"
#include "castel/net.hpp"
#include "castel/semantics.hpp"

namespace castel {

/// Message lifecycle record attached to a trace event.
struct Annotation {
  enum class Kind : std::uint8_t { Created, Jumped, NoopJump, Delivered };
  Kind kind = Kind::Created;
  std::uint64_t message = 0;
  std::int64_t car = -1;
  double value = 0.0;  // Created: expected own-exit delay; Jumped: hop count; Delivered: delay

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

inline const char* kind_name(Annotation::Kind k) {
  switch (k) {
    case Annotation::Kind::Created: return "created";
    case Annotation::Kind::Jumped: return "jumped";
    case Annotation::Kind::NoopJump: return "noop-jump";
    case Annotation::Kind::Delivered: return "delivered";
  }
  return "?";
}

struct TraceEvent {
  double time = 0.0;
  std::size_t transition = 0;
  std::vector<Value> binding;
  std::optional<Marking> marking;  // marking after the event, if recorded
  std::vector<Annotation> annotations;
};

struct Trace {
  std::uint64_t seed = 0;
  double horizon = 0.0;
  std::string net_name;
  std::vector<TraceEvent> events;
  Marking final_marking;
};

/// Hook invoked after every firing. Observers see the firing and the new
/// marking and may attach annotations to the event.
class Observer {
 public:
  virtual ~Observer() = default;
  virtual void on_start(const Net&, const Marking&) {}
  virtual void on_fire(const Net& net, double time, const EnabledFiring& f, const Marking& after,
                       std::vector<Annotation>& notes) = 0;
};

using ObserverFactory = std::function<std::unique_ptr<Observer>()>;

struct SimOptions {
  bool record_markings = false;
  ObserverFactory observer;
};

/// 64-bit Mersenne twister seeded from both halves of the run seed. Run i
/// of a batch uses seed base + i, giving one independent stream per run.
inline std::mt19937_64 make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return std::mt19937_64(seq);
}

/// Uniform draw in the open interval (0, 1).
inline double uniform_open(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Exponential-race simulator over a single marking. Enabled firings are
/// cached per transition; after a firing only the bindings that consume a
/// token whose count changed are re-derived.
class Simulator {
 public:
  Simulator(const Net& net, Marking init, std::uint64_t seed)
      : net_(net), marking_(std::move(init)), rng_(make_rng(seed)) {
    const std::size_t nt = net.transitions().size();
    cache_.resize(nt);
    totals_.assign(nt, 0.0);
    full_.assign(nt, true);
    changes_.resize(nt);
    readers_.resize(net.places().size());
    for (std::size_t t = 0; t < nt; ++t)
      for (const auto& in : net.transitions()[t].inputs) {
        auto& r = readers_[in.place];
        if (std::find_if(r.begin(), r.end(), [&](const Reader& x) { return x.transition == t; }) == r.end())
          r.push_back({t, false});
        if (in.slots.empty())
          for (auto& x : r)
            if (x.transition == t) x.plain = true;
      }
  }

  double time() const { return time_; }
  const Marking& marking() const { return marking_; }
  std::mt19937_64& rng() { return rng_; }

  /// Total rate of the current marking.
  double total_rate() {
    refresh();
    double sum = 0.0;
    for (std::size_t t : net_.by_name()) sum += totals_[t];
    return sum;
  }

  /// Enabled firings of the current marking, in canonical order.
  std::vector<EnabledFiring> enabled() {
    refresh();
    std::vector<EnabledFiring> out;
    for (std::size_t t : net_.by_name()) out.insert(out.end(), cache_[t].begin(), cache_[t].end());
    return out;
  }

  /// Draws a sojourn time for total rate `lambda`.
  double sample_sojourn(double lambda) { return -std::log(uniform_open(rng_)) / lambda; }

  /// Advances to the next event if it occurs no later than `limit`. On
  /// deadlock or when the sampled time exceeds the limit, the clock is set
  /// to the limit and nothing fires.
  std::optional<EnabledFiring> step(double limit) {
    const double lambda = total_rate();
    if (!(lambda > 0)) {
      time_ = std::max(time_, limit);
      return std::nullopt;
    }
    double next = time_ + sample_sojourn(lambda);
    if (next > limit) {
      time_ = limit;
      return std::nullopt;
    }
    if (next <= time_) next = std::nextafter(time_, std::numeric_limits<double>::infinity());
    time_ = next;

    const double target = uniform_open(rng_) * lambda;
    const EnabledFiring* chosen = nullptr;
    double acc = 0.0;
    for (std::size_t t : net_.by_name()) {
      if (cache_[t].empty()) continue;
      if (acc + totals_[t] <= target) {
        acc += totals_[t];
        chosen = &cache_[t].back();
        continue;
      }
      for (const auto& f : cache_[t]) {
        chosen = &f;
        acc += f.rate;
        if (acc > target) break;
      }
      break;
    }
    EnabledFiring f = *chosen;
    fire_in_place(net_, marking_, f);
    touch(f);
    return f;
  }

 private:
  void refresh() {
    for (std::size_t t = 0; t < full_.size(); ++t) {
      if (full_[t]) {
        cache_[t] = enabled_firings_of(net_, marking_, t);
      } else if (!changes_[t].empty()) {
        auto fresh = enabled_firings_touching(net_, marking_, t, changes_[t]);
        auto& c = cache_[t];
        const auto& tr = net_.transitions()[t];
        c.erase(std::remove_if(c.begin(), c.end(), [&](const EnabledFiring& f) { return touches(tr, f, changes_[t]); }),
                c.end());
        const std::size_t mid = c.size();
        c.insert(c.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
        std::inplace_merge(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(mid), c.end(), detail::binding_less);
      } else {
        continue;
      }
      double s = 0.0;
      for (const auto& f : cache_[t]) s += f.rate;
      totals_[t] = s;
      full_[t] = false;
      changes_[t].clear();
    }
  }

  static bool touches(const Transition& tr, const EnabledFiring& f,
                      const std::vector<std::pair<std::size_t, Colour>>& changed) {
    for (const auto& arc : tr.inputs) {
      const Colour c = detail::arc_colour(arc, f.binding);
      for (const auto& [p, x] : changed)
        if (p == arc.place && x == c) return true;
    }
    return false;
  }

  // Records which (place, colour) counts the firing changed and schedules
  // the affected transitions.
  void touch(const EnabledFiring& f) {
    const auto& tr = net_.transitions()[f.transition];
    auto note = [&](std::size_t p, const Colour& c) {
      for (const auto& r : readers_[p]) {
        if (r.plain) {
          full_[r.transition] = true;
          continue;
        }
        auto& ch = changes_[r.transition];
        if (std::find(ch.begin(), ch.end(), std::pair{p, c}) == ch.end()) ch.emplace_back(p, c);
      }
    };
    for (const auto& arc : tr.inputs) note(arc.place, detail::arc_colour(arc, f.binding));
    for (const auto& arc : tr.outputs) {
      Colour c;
      for (const auto& e : arc.components) c.push_back(static_cast<Value>(std::llround(e.eval(f.binding.data()))));
      note(arc.place, c);
    }
  }

  struct Reader {
    std::size_t transition;
    bool plain;  // reads the place through an arc without a pattern
  };

  const Net& net_;
  Marking marking_;
  std::mt19937_64 rng_;
  double time_ = 0.0;
  std::vector<std::vector<EnabledFiring>> cache_;
  std::vector<double> totals_;
  std::vector<bool> full_;
  std::vector<std::vector<std::pair<std::size_t, Colour>>> changes_;
  std::vector<std::vector<Reader>> readers_;
};

/// One simulation run up to `horizon`. Fully determined by the seed.
inline Trace simulate(const Net& net, const Marking& init, double horizon, std::uint64_t seed,
                      const SimOptions& options = {}) {
  if (!(horizon > 0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive and finite");
  net.validate(init);
  Trace tr;
  tr.seed = seed;
  tr.horizon = horizon;
  tr.net_name = net.name();
  Simulator sim(net, init, seed);
  std::unique_ptr<Observer> obs = options.observer ? options.observer() : nullptr;
  if (obs) obs->on_start(net, init);
  while (auto f = sim.step(horizon)) {
    TraceEvent ev;
    ev.time = sim.time();
    ev.transition = f->transition;
    ev.binding = std::move(f->binding);
    if (obs) {
      f->binding = ev.binding;
      obs->on_fire(net, ev.time, *f, sim.marking(), ev.annotations);
    }
    if (options.record_markings) ev.marking = sim.marking();
    tr.events.push_back(std::move(ev));
  }
  tr.final_marking = sim.marking();
  return tr;
}

/// Re-fires the recorded events from `init` with full enabling checks and
/// returns the final marking.
inline Marking replay(const Net& net, const Marking& init, const Trace& trace) {
  Marking m = init;
  for (const auto& ev : trace.events) {
    EnabledFiring f{ev.transition, ev.binding, 0.0, 0.0};
    if (ev.transition >= net.transitions().size()) throw Error("trace refers to an unknown transition");
    if (!is_enabled(net, m, f)) throw Error("trace event at time " + std::to_string(ev.time) + " is not enabled");
    fire_in_place(net, m, f);
  }
  return m;
}

/// Resolves a worker count: 0 means hardware concurrency.
inline unsigned resolve_jobs(unsigned jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `body(i)` for i in [0, n) on up to `jobs` threads. The first
/// exception (lowest index) is rethrown after all workers finish.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(resolve_jobs(jobs), std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// n runs with seeds base..base+n-1, returned in seed order.
inline std::vector<Trace> run_many(const Net& net, const Marking& init, double horizon, std::size_t n,
                                   std::uint64_t base_seed, const SimOptions& options = {}, unsigned jobs = 1) {
  if (n == 0) throw ConfigError("run count must be at least 1");
  std::vector<Trace> out(n);
  parallel_for(n, jobs, [&](std::size_t i) { out[i] = simulate(net, init, horizon, base_seed + i, options); });
  return out;
}

/// Shortest text that reads back to the same double.
inline std::string format_real(double x) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

/// CSV export: time, transition, binding, annotations.
inline void write_trace_csv(const Net& net, const Trace& trace, std::ostream& os) {
  os << "# seed=" << trace.seed << " horizon=" << format_number(trace.horizon) << " net=" << trace.net_name << '\n';
  os << "time,transition,binding,annotations\n";
  for (const auto& ev : trace.events) {
    os << format_real(ev.time) << ',' << net.transitions()[ev.transition].name << ",\""
       << net.format_binding(ev.transition, ev.binding) << "\",\"";
    for (std::size_t i = 0; i < ev.annotations.size(); ++i) {
      const auto& a = ev.annotations[i];
      os << (i ? ";" : "") << kind_name(a.kind) << ':' << a.message << ':' << a.car << ':' << format_real(a.value);
    }
    os << "\"\n";
  }
}

namespace detail {

inline constexpr char kTraceMagic[8] = {'C', 'S', 'P', 'N', 'T', 'R', 'C', '\0'};
inline constexpr std::uint32_t kTraceVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("truncated trace file");
  return v;
}

}  // namespace detail

/// Binary replay format (host byte order, little-endian on supported
/// platforms): magic "CSPNTRC\0", u32 version, u64 seed, f64 horizon,
/// u32 name length + bytes, u64 event count, then per event f64 time,
/// u32 transition, u32 arity + i64 values, u32 annotation count + records
/// of (u8 kind, u64 message, i64 car, f64 value).
inline void write_trace_binary(const Trace& trace, std::ostream& os) {
  using detail::put;
  os.write(detail::kTraceMagic, sizeof detail::kTraceMagic);
  put<std::uint32_t>(os, detail::kTraceVersion);
  put<std::uint64_t>(os, trace.seed);
  put<double>(os, trace.horizon);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(trace.net_name.size()));
  os.write(trace.net_name.data(), static_cast<std::streamsize>(trace.net_name.size()));
  put<std::uint64_t>(os, trace.events.size());
  for (const auto& ev : trace.events) {
    put<double>(os, ev.time);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ev.transition));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ev.binding.size()));
    for (Value v : ev.binding) put<std::int64_t>(os, v);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ev.annotations.size()));
    for (const auto& a : ev.annotations) {
      put<std::uint8_t>(os, static_cast<std::uint8_t>(a.kind));
      put<std::uint64_t>(os, a.message);
      put<std::int64_t>(os, a.car);
      put<double>(os, a.value);
    }
  }
}

/// Reads a binary trace. The final marking is left empty; use replay to
/// reconstruct it.
inline Trace read_trace_binary(std::istream& is) {
  using detail::get;
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, detail::kTraceMagic, sizeof magic) != 0)
    throw Error("not a trace file");
  if (get<std::uint32_t>(is) != detail::kTraceVersion) throw Error("unsupported trace version");
  Trace t;
  t.seed = get<std::uint64_t>(is);
  t.horizon = get<double>(is);
  t.net_name.resize(get<std::uint32_t>(is));
  if (!is.read(t.net_name.data(), static_cast<std::streamsize>(t.net_name.size()))) throw Error("truncated trace file");
  const auto n = get<std::uint64_t>(is);
  t.events.resize(n);
  for (auto& ev : t.events) {
    ev.time = get<double>(is);
    ev.transition = get<std::uint32_t>(is);
    ev.binding.resize(get<std::uint32_t>(is));
    for (auto& v : ev.binding) v = get<std::int64_t>(is);
    ev.annotations.resize(get<std::uint32_t>(is));
    for (auto& a : ev.annotations) {
      const auto k = get<std::uint8_t>(is);
      if (k > 3) throw Error("bad annotation kind in trace file");
      a.kind = static_cast<Annotation::Kind>(k);
      a.message = get<std::uint64_t>(is);
      a.car = get<std::int64_t>(is);
      a.value = get<double>(is);
    }
  }
  return t;
}

}  // namespace castel
