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
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <tuple>
#include <vector>

#include "mlcm/catalog.hpp"

namespace mlcm {

/// Per-course prices in budget units.
using PriceVector = std::vector<double>;

inline double cost(Schedule x, const PriceVector& p) {
  double total = 0.0;
  for (std::uint32_t b = x.bits(); b != 0; b &= b - 1) {
    total += p[static_cast<std::size_t>(std::countr_zero(b))];
  }
  return total;
}

inline bool affordable(Schedule x, const PriceVector& p, double budget) {
  return cost(x, p) <= budget;
}

/// All permissible schedules for one Permissibility, in lexicographic order.
struct ScheduleSpace {
  Permissibility perm;
  int m = 0;
  std::vector<Schedule> schedules;

  std::size_t size() const { return schedules.size(); }
};

/// Enumerations are shared between students with identical constraints;
/// this cache makes that sharing automatic.
inline std::shared_ptr<const ScheduleSpace> schedule_space(const Permissibility& perm,
                                                           int m) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, std::uint32_t, std::vector<std::uint32_t>>,
                  std::shared_ptr<const ScheduleSpace>>
      cache;
  auto key = std::make_tuple(m, perm.max_courses, perm.ineligible, perm.slot_conflicts);
  std::lock_guard lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto space = std::make_shared<ScheduleSpace>();
  space->perm = perm;
  space->m = m;
  space->schedules = enumerate_permissible(perm, m);
  cache.emplace(std::move(key), space);
  return space;
}

/// Exhaustive argmax of `value` over permissible, affordable schedules not
/// rejected by `exclude`. Ties go to the lexicographically smallest schedule.
template <typename ValueFn, typename ExcludeFn>
std::optional<Schedule> argmax_scan(const ScheduleSpace& space, ValueFn&& value,
                                    const PriceVector& p, double budget,
                                    ExcludeFn&& exclude) {
  std::optional<Schedule> best;
  double best_value = 0.0;
  for (Schedule x : space.schedules) {
    if (!affordable(x, p, budget) || exclude(x)) continue;
    const double v = value(x);
    if (!best || v > best_value) {
      best = x;
      best_value = v;
    }
  }
  return best;
}

/// A valuer tabulated over a ScheduleSpace, with schedules pre-sorted by
/// value (descending, ties lexicographic) so demand queries stop at the
/// first schedule that passes the filter.
class ValueTable {
 public:
  ValueTable() = default;

  template <typename ValueFn>
  ValueTable(std::shared_ptr<const ScheduleSpace> space, ValueFn&& value)
      : space_(std::move(space)) {
    values_.resize(space_->size());
    for (std::size_t i = 0; i < space_->size(); ++i) {
      values_[i] = value(space_->schedules[i]);
    }
    std::vector<std::uint32_t> order(values_.size());
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return values_[a] > values_[b];
    });
    sorted_.reserve(order.size());
    sorted_values_.reserve(order.size());
    for (std::uint32_t i : order) {
      sorted_.push_back(space_->schedules[i]);
      sorted_values_.push_back(values_[i]);
    }
  }

  const ScheduleSpace& space() const { return *space_; }
  std::size_t size() const { return values_.size(); }
  /// Value of the i-th schedule of the space (space order).
  double value_at(std::size_t i) const { return values_[i]; }
  /// Schedules best first, with their values.
  const std::vector<Schedule>& sorted() const { return sorted_; }
  const std::vector<double>& sorted_values() const { return sorted_values_; }

  /// Value of an arbitrary permissible schedule (binary search in the
  /// lexicographically ordered space).
  double value(Schedule x) const {
    const auto& s = space_->schedules;
    auto it = std::lower_bound(s.begin(), s.end(), x,
                               [](Schedule a, Schedule b) { return lex_less(a, b); });
    if (it == s.end() || *it != x) {
      throw ValidationError("schedule " + x.to_string() + " is not permissible");
    }
    return values_[static_cast<std::size_t>(it - s.begin())];
  }

  /// Highest-valued schedule accepted by `accept`.
  template <typename AcceptFn>
  std::optional<Schedule> best(AcceptFn&& accept) const {
    for (Schedule x : sorted_) {
      if (accept(x)) return x;
    }
    return std::nullopt;
  }

  /// Demand at prices p and budget b. The empty schedule is always
  /// affordable, so the result exists whenever the space is non-empty.
  Schedule demand(const PriceVector& p, double budget) const {
    auto x = best([&](Schedule s) { return affordable(s, p, budget); });
    return x.value_or(Schedule{});
  }

 private:
  std::shared_ptr<const ScheduleSpace> space_;
  std::vector<double> values_;
  std::vector<Schedule> sorted_;
  std::vector<double> sorted_values_;
};

}  // namespace mlcm
