#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "castel/error.hpp"

namespace castel {

using Value = std::int64_t;

/// Interned atom names shared by all domains of one net. Atom values are
/// indices into this table, so atoms compare as integers.
class AtomTable {
 public:
  Value intern(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<Value>(names_.size());
    names_.push_back(name);
    ids_.emplace(name, id);
    return id;
  }

  std::optional<Value> find(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(Value id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Value> ids_;
};

/// A finite scalar domain: an ordered atom set, an integer range or an integer set.
struct BasicDomain {
  enum class Kind { Atoms, Range, Set };

  Kind kind = Kind::Range;
  std::vector<Value> values;  // enumeration order

  static BasicDomain atoms(std::vector<Value> ids) { return {Kind::Atoms, std::move(ids)}; }

  static BasicDomain range(Value lo, Value hi) {
    if (hi < lo) throw ConfigError("empty integer range");
    std::vector<Value> v(static_cast<std::size_t>(hi - lo + 1));
    std::iota(v.begin(), v.end(), lo);
    return {Kind::Range, std::move(v)};
  }

  static BasicDomain set(std::vector<Value> ints) {
    std::sort(ints.begin(), ints.end());
    ints.erase(std::unique(ints.begin(), ints.end()), ints.end());
    return {Kind::Set, std::move(ints)};
  }

  bool contains(Value x) const {
    if (kind == Kind::Range) return !values.empty() && x >= values.front() && x <= values.back();
    return std::find(values.begin(), values.end(), x) != values.end();
  }

  std::size_t size() const { return values.size(); }
};

inline constexpr std::size_t kMaxArity = 8;

/// A colour value: a flat tuple of scalar components. The empty tuple is the
/// Dot colour.
class Colour {
 public:
  Colour() = default;
  Colour(std::initializer_list<Value> xs) {
    assert(xs.size() <= kMaxArity);
    for (Value x : xs) v_[n_++] = x;
  }

  template <typename It>
  static Colour from_range(It first, It last) {
    Colour c;
    for (; first != last; ++first) c.push_back(*first);
    return c;
  }

  void push_back(Value x) {
    if (n_ >= kMaxArity) throw ConfigError("colour tuple arity exceeds " + std::to_string(kMaxArity));
    v_[n_++] = x;
  }

  std::size_t size() const { return n_; }
  bool empty() const { return n_ == 0; }
  Value operator[](std::size_t i) const { return v_[i]; }
  Value& operator[](std::size_t i) { return v_[i]; }
  const Value* begin() const { return v_.data(); }
  const Value* end() const { return v_.data() + n_; }

  friend bool operator==(const Colour& a, const Colour& b) {
    return a.n_ == b.n_ && std::equal(a.begin(), a.end(), b.begin());
  }
  friend bool operator<(const Colour& a, const Colour& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
  friend bool operator!=(const Colour& a, const Colour& b) { return !(a == b); }

  std::size_t hash() const {
    std::size_t h = n_;
    for (Value x : *this) h = h * 1000003u ^ std::hash<Value>{}(x);
    return h;
  }

 private:
  std::array<Value, kMaxArity> v_{};
  std::uint8_t n_ = 0;
};

/// Named colour domain: Dot (no components), a scalar domain, or a product
/// of scalar domains with field names.
struct ColourDomain {
  std::string name;
  std::vector<std::string> fields;
  std::vector<BasicDomain> components;

  bool is_dot() const { return components.empty(); }
  std::size_t arity() const { return components.size(); }

  std::optional<std::size_t> field_index(const std::string& field) const {
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (fields[i] == field) return i;
    return std::nullopt;
  }

  bool contains(const Colour& c) const {
    if (c.size() != components.size()) return false;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (!components[i].contains(c[i])) return false;
    return true;
  }

  /// Number of colour values, saturating at SIZE_MAX.
  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& d : components) {
      if (d.size() != 0 && n > SIZE_MAX / d.size()) return SIZE_MAX;
      n *= d.size();
    }
    return n;
  }

  /// Calls f on every colour in lexicographic domain order.
  template <typename F>
  void for_each(F&& f) const {
    Colour c;
    for (const auto& d : components) {
      if (d.values.empty()) return;
      c.push_back(d.values.front());
    }
    std::vector<std::size_t> idx(components.size(), 0);
    while (true) {
      f(static_cast<const Colour&>(c));
      bool advanced = false;
      for (std::size_t k = components.size(); k-- > 0;) {
        if (++idx[k] < components[k].values.size()) {
          c[k] = components[k].values[idx[k]];
          advanced = true;
          break;
        }
        idx[k] = 0;
        c[k] = components[k].values.front();
      }
      if (!advanced) return;
    }
  }
};

/// Multiset of colours, kept sorted by colour so equal bags compare equal.
class Bag {
 public:
  using Entry = std::pair<Colour, std::uint32_t>;

  void add(const Colour& c, std::uint32_t n = 1) {
    if (n == 0) return;
    auto it = lower(c);
    if (it != items_.end() && it->first == c)
      it->second += n;
    else
      items_.insert(it, {c, n});
  }

  /// Removes n copies of c; throws if fewer are present.
  void remove(const Colour& c, std::uint32_t n = 1) {
    if (n == 0) return;
    auto it = lower(c);
    if (it == items_.end() || it->first != c || it->second < n)
      throw Error("removing a token that is not present");
    it->second -= n;
    if (it->second == 0) items_.erase(it);
  }

  std::uint32_t count(const Colour& c) const {
    auto it = std::lower_bound(items_.begin(), items_.end(), c,
                               [](const Entry& e, const Colour& k) { return e.first < k; });
    return (it != items_.end() && it->first == c) ? it->second : 0;
  }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& e : items_) n += e.second;
    return n;
  }

  bool empty() const { return items_.empty(); }
  const std::vector<Entry>& entries() const { return items_; }

  friend bool operator==(const Bag& a, const Bag& b) {
    if (a.items_.size() != b.items_.size()) return false;
    for (std::size_t i = 0; i < a.items_.size(); ++i)
      if (a.items_[i].first != b.items_[i].first || a.items_[i].second != b.items_[i].second) return false;
    return true;
  }
  friend bool operator<(const Bag& a, const Bag& b) {
    return std::lexicographical_compare(
        a.items_.begin(), a.items_.end(), b.items_.begin(), b.items_.end(),
        [](const Entry& x, const Entry& y) {
          if (x.first != y.first) return x.first < y.first;
          return x.second < y.second;
        });
  }

  std::size_t hash() const {
    std::size_t h = 0x9e3779b9u;
    for (const auto& e : items_) h = (h * 31u) ^ (e.first.hash() + e.second * 0x85ebca6bu);
    return h;
  }

 private:
  std::vector<Entry>::iterator lower(const Colour& c) {
    return std::lower_bound(items_.begin(), items_.end(), c,
                            [](const Entry& e, const Colour& k) { return e.first < k; });
  }

  std::vector<Entry> items_;
};

/// Global state of a net: one bag per place, indexed like Net::places().
struct Marking {
  std::vector<Bag> bags;

  friend bool operator==(const Marking& a, const Marking& b) { return a.bags == b.bags; }
  friend bool operator!=(const Marking& a, const Marking& b) { return !(a == b); }
  friend bool operator<(const Marking& a, const Marking& b) { return a.bags < b.bags; }
};

struct ColourHash {
  std::size_t operator()(const Colour& c) const { return c.hash(); }
};

struct MarkingHash {
  std::size_t operator()(const Marking& m) const {
    std::size_t h = m.bags.size();
    for (const auto& b : m.bags) h = h * 1000003u ^ b.hash();
    return h;
  }
};

}  // namespace castel
