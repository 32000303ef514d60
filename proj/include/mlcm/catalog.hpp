// Copyright 2026 The mlcm-lab Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlcm/rng.hpp"

namespace mlcm {

/// Raised when a request exceeds what the enumeration-based core can do
/// (more than 32 courses, exhaustive fairness checks on large economies).
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kMaxEnumerableCourses = 32;

/// A course schedule as an indicator vector over at most 32 courses.
/// Bit j set means course j is taken.
class Schedule {
 public:
  constexpr Schedule() = default;
  constexpr explicit Schedule(std::uint32_t bits) : bits_(bits) {}

  static Schedule of(std::initializer_list<int> courses) {
    Schedule s;
    for (int c : courses) s = s.with(c);
    return s;
  }
  static Schedule of(const std::vector<int>& courses) {
    Schedule s;
    for (int c : courses) s = s.with(c);
    return s;
  }

  constexpr std::uint32_t bits() const { return bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int size() const { return std::popcount(bits_); }
  constexpr bool contains(int course) const { return (bits_ >> course) & 1U; }
  constexpr Schedule with(int course) const {
    return Schedule(bits_ | (1U << course));
  }
  constexpr Schedule without(int course) const {
    return Schedule(bits_ & ~(1U << course));
  }
  constexpr bool subset_of(Schedule other) const {
    return (bits_ & ~other.bits_) == 0;
  }
  constexpr int overlap(std::uint32_t mask) const {
    return std::popcount(bits_ & mask);
  }

  std::vector<int> courses() const {
    std::vector<int> out;
    for (std::uint32_t b = bits_; b != 0; b &= b - 1) {
      out.push_back(std::countr_zero(b));
    }
    return out;
  }

  /// Sort key for lexicographic order of the indicator vector
  /// (x_0, x_1, ..., x_{m-1}) with x_0 most significant. The empty schedule
  /// is the smallest.
  constexpr std::uint32_t lex_key() const { return reverse_bits(bits_); }

  friend constexpr bool operator==(Schedule, Schedule) = default;

  /// Strict lexicographic comparison (see lex_key).
  friend constexpr bool lex_less(Schedule a, Schedule b) {
    return a.lex_key() < b.lex_key();
  }

  std::string to_string() const {
    std::string s = "{";
    bool first = true;
    for (int c : courses()) {
      if (!first) s += ",";
      s += std::to_string(c);
      first = false;
    }
    return s + "}";
  }

 private:
  static constexpr std::uint32_t reverse_bits(std::uint32_t v) {
    v = ((v >> 1) & 0x55555555U) | ((v & 0x55555555U) << 1);
    v = ((v >> 2) & 0x33333333U) | ((v & 0x33333333U) << 2);
    v = ((v >> 4) & 0x0F0F0F0FU) | ((v & 0x0F0F0F0FU) << 4);
    v = ((v >> 8) & 0x00FF00FFU) | ((v & 0x00FF00FFU) << 8);
    return (v >> 16) | (v << 16);
  }

  std::uint32_t bits_ = 0;
};

struct ScheduleHash {
  std::size_t operator()(Schedule s) const {
    return std::hash<std::uint32_t>{}(s.bits());
  }
};

inline void to_json(nlohmann::json& j, Schedule s) { j = s.courses(); }
inline void from_json(const nlohmann::json& j, Schedule& s) {
  s = Schedule::of(j.get<std::vector<int>>());
}

/// Student-specific constraints defining the permissible schedules.
struct Permissibility {
  int max_courses = 5;
  std::uint32_t ineligible = 0;
  /// One mask per time slot; at most one course from each may be taken.
  std::vector<std::uint32_t> slot_conflicts;

  bool operator==(const Permissibility&) const = default;
};

inline bool is_permissible(Schedule x, const Permissibility& perm) {
  if (x.size() > perm.max_courses) return false;
  if ((x.bits() & perm.ineligible) != 0) return false;
  for (std::uint32_t slot : perm.slot_conflicts) {
    if (x.overlap(slot) > 1) return false;
  }
  return true;
}

/// Visits every permissible schedule over m courses in lexicographic order.
template <typename Fn>
void for_each_permissible(const Permissibility& perm, int m, Fn&& visit) {
  if (m > kMaxEnumerableCourses || m < 0) {
    throw CapabilityError("schedule enumeration supports at most 32 courses, got " +
                          std::to_string(m));
  }
  // Depth-first over positions 0..m-1, branch "not taken" before "taken",
  // which produces ascending lex_key order. Slot conflicts are checked
  // incrementally so infeasible prefixes are pruned.
  struct Frame {
    const Permissibility& perm;
    int m;
    Fn& visit;
    void go(int pos, std::uint32_t bits, int count) {
      if (pos == m) {
        visit(Schedule(bits));
        return;
      }
      go(pos + 1, bits, count);
      if (count >= perm.max_courses) return;
      const std::uint32_t bit = 1U << pos;
      if (perm.ineligible & bit) return;
      for (std::uint32_t slot : perm.slot_conflicts) {
        if ((slot & bit) && (bits & slot)) return;
      }
      go(pos + 1, bits | bit, count + 1);
    }
  };
  Frame{perm, m, visit}.go(0, 0U, 0);
}

inline std::vector<Schedule> enumerate_permissible(const Permissibility& perm,
                                                   int m) {
  std::vector<Schedule> out;
  for_each_permissible(perm, m, [&](Schedule s) { out.push_back(s); });
  return out;
}

struct Course {
  int id = 0;
  int capacity = 1;
  int x = 0;
  int y = 0;
  bool popular = false;
  std::optional<int> slot;

  bool operator==(const Course&) const = default;
};

struct Catalog {
  int m = 0;
  double supply_ratio = 1.0;
  std::vector<Course> courses;

  int capacity(int j) const { return courses[static_cast<std::size_t>(j)].capacity; }
  int total_seats() const {
    int total = 0;
    for (const auto& c : courses) total += c.capacity;
    return total;
  }
  std::vector<int> popular() const {
    std::vector<int> out;
    for (const auto& c : courses) {
      if (c.popular) out.push_back(c.id);
    }
    return out;
  }
  /// Conflict masks grouped by slot id, for building a Permissibility.
  std::vector<std::uint32_t> slot_masks() const {
    std::vector<std::pair<int, std::uint32_t>> slots;
    for (const auto& c : courses) {
      if (!c.slot) continue;
      auto it = std::find_if(slots.begin(), slots.end(),
                             [&](const auto& p) { return p.first == *c.slot; });
      if (it == slots.end()) {
        slots.emplace_back(*c.slot, 1U << c.id);
      } else {
        it->second |= 1U << c.id;
      }
    }
    std::vector<std::uint32_t> masks;
    for (const auto& [id, mask] : slots) masks.push_back(mask);
    return masks;
  }

  bool operator==(const Catalog&) const = default;
};

/// Grid dimensions for the latent space: smallest near-square grid with at
/// least m cells (30 courses -> 6 wide, 5 high).
struct LatentGrid {
  int width = 0;
  int height = 0;
};

inline LatentGrid latent_grid(int m) {
  const int width = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));
  const int height = width == 0 ? 0 : (m + width - 1) / width;
  return {width, height};
}

struct CatalogConfig {
  int m = 25;
  int n_students = 30;
  int max_courses = 5;
  double supply_ratio = 1.25;
  int n_popular = 9;
};

/// Seats total round(supply_ratio * n * k), split as evenly as possible.
/// Courses are placed row-major on the latent grid starting at (1, 1);
/// popular courses are a seeded random subset.
inline Catalog make_catalog(const CatalogConfig& cfg, std::uint64_t seed) {
  if (cfg.m < 1 || cfg.m > kMaxEnumerableCourses) {
    throw CapabilityError("catalog size must be in [1, 32]");
  }
  if (cfg.n_popular < 0 || cfg.n_popular > cfg.m) {
    throw ValidationError("n_popular must be in [0, m]");
  }
  const int total = static_cast<int>(
      std::lround(cfg.supply_ratio * cfg.n_students * cfg.max_courses));
  const auto grid = latent_grid(cfg.m);
  Catalog cat;
  cat.m = cfg.m;
  cat.supply_ratio = cfg.supply_ratio;
  for (int j = 0; j < cfg.m; ++j) {
    Course c;
    c.id = j;
    c.capacity = std::max(1, total / cfg.m + (j < total % cfg.m ? 1 : 0));
    c.x = j % grid.width + 1;
    c.y = j / grid.width + 1;
    cat.courses.push_back(c);
  }
  Rng rng(derive_seed(seed, stream::kCatalog));
  for (int j : rng.sample(cfg.m, cfg.n_popular)) {
    cat.courses[static_cast<std::size_t>(j)].popular = true;
  }
  return cat;
}

inline void to_json(nlohmann::json& j, const Course& c) {
  j = nlohmann::json{{"id", c.id}, {"capacity", c.capacity}, {"x", c.x},
                     {"y", c.y},   {"popular", c.popular}};
  j["slot"] = c.slot ? nlohmann::json(*c.slot) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, Course& c) {
  j.at("id").get_to(c.id);
  j.at("capacity").get_to(c.capacity);
  j.at("x").get_to(c.x);
  j.at("y").get_to(c.y);
  j.at("popular").get_to(c.popular);
  if (j.contains("slot") && !j.at("slot").is_null()) {
    c.slot = j.at("slot").get<int>();
  } else {
    c.slot.reset();
  }
  if (c.capacity < 1) throw ValidationError("course capacity must be >= 1");
}

inline void to_json(nlohmann::json& j, const Catalog& c) {
  j = nlohmann::json{{"m", c.m}, {"supply_ratio", c.supply_ratio},
                     {"courses", c.courses}};
}

inline void from_json(const nlohmann::json& j, Catalog& c) {
  j.at("m").get_to(c.m);
  j.at("supply_ratio").get_to(c.supply_ratio);
  j.at("courses").get_to(c.courses);
  if (static_cast<int>(c.courses.size()) != c.m) {
    throw ValidationError("catalog course count does not match m");
  }
}

inline void to_json(nlohmann::json& j, const Permissibility& p) {
  j = nlohmann::json{{"max_courses", p.max_courses},
                     {"ineligible", Schedule(p.ineligible)},
                     {"slot_conflicts", nlohmann::json::array()}};
  for (auto mask : p.slot_conflicts) j["slot_conflicts"].push_back(Schedule(mask));
}

inline void from_json(const nlohmann::json& j, Permissibility& p) {
  j.at("max_courses").get_to(p.max_courses);
  p.ineligible = j.at("ineligible").get<Schedule>().bits();
  p.slot_conflicts.clear();
  for (const auto& s : j.at("slot_conflicts")) {
    p.slot_conflicts.push_back(s.get<Schedule>().bits());
  }
}

}  // namespace mlcm
