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

// Fairness and efficiency audits of an allocation: envy bounded by a
// single good, (l, eps)-maximin share and eps-Pareto efficiency. The last
// two are exhaustive and limited to small economies.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mlcm/catalog.hpp"
#include "mlcm/market.hpp"

namespace mlcm {

using UtilityFn = std::function<double(Schedule)>;

inline constexpr int kMaxExhaustiveCourses = 8;
inline constexpr int kMaxExhaustiveStudents = 3;

/// Smallest eps for which i's envy of `other` is eps-bounded by a single
/// good: the envy itself, or the envy left after removing the best single
/// course from `other`, whichever is smaller (0 when there is no envy).
inline double single_good_envy(const UtilityFn& u, Schedule own, Schedule other) {
  const double mine = u(own);
  double bound = u(other) - mine;
  for (int j : other.courses()) bound = std::min(bound, u(other.without(j)) - mine);
  return std::max(0.0, bound);
}

/// Largest single_good_envy over all ordered pairs of distinct students.
inline double envy_bound(const Allocation& a, const std::vector<UtilityFn>& u) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (i != k) worst = std::max(worst, single_good_envy(u[i], a[i], a[k]));
    }
  }
  return worst;
}

/// Envy of `other` counting every permissible subset of it:
/// max over x ⊆ other of u(x) - u(own), floored at 0.
inline double subset_envy(const UtilityFn& u, Schedule own, Schedule other,
                          const Permissibility& perm) {
  const double mine = u(own);
  double best = 0.0;
  const std::uint32_t full = other.bits();
  // Standard submask walk, including the empty set.
  for (std::uint32_t s = full;; s = (s - 1) & full) {
    const Schedule x(s);
    if (is_permissible(x, perm)) best = std::max(best, u(x) - mine);
    if (s == 0) break;
  }
  return best;
}

/// Shortcut for monotone valuers: no subset is worth more than the whole
/// bundle, so only the full bundle needs checking (when it is permissible).
inline double subset_envy_monotone(const UtilityFn& u, Schedule own, Schedule other) {
  return std::max(0.0, u(other) - u(own));
}

struct MaximinSplit {
  double value = 0.0;
  std::vector<Schedule> bundles;
};

/// The l-maximin split of a student: l permissible schedules using at most
/// q_j seats of each course that maximize the worst bundle's utility.
/// Exhaustive (branch and bound over schedules in decreasing utility).
inline MaximinSplit maximin_share(const UtilityFn& u, const Catalog& catalog,
                                  const Permissibility& perm, int l) {
  if (catalog.m > kMaxExhaustiveCourses) {
    throw CapabilityError("maximin share is exhaustive and limited to 8 courses");
  }
  if (l < 1) throw ValidationError("split size must be positive");
  struct Item {
    Schedule x;
    double v;
  };
  std::vector<Item> items;
  for_each_permissible(perm, catalog.m, [&](Schedule x) { items.push_back({x, u(x)}); });
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.v > b.v; });

  std::vector<int> seats(static_cast<std::size_t>(catalog.m));
  for (int j = 0; j < catalog.m; ++j) seats[static_cast<std::size_t>(j)] = catalog.capacity(j);
  MaximinSplit best;
  bool found = false;
  std::vector<Schedule> chosen;
  // Bundles are chosen in nondecreasing item index and `from` is the index
  // of the last one, so items[from] holds the running minimum.
  std::function<void(std::size_t)> dfs = [&](std::size_t from) {
    if (static_cast<int>(chosen.size()) == l) {
      const double v = items[from].v;
      if (!found || v > best.value) {
        best.value = v;
        best.bundles = chosen;
        found = true;
      }
      return;
    }
    for (std::size_t t = from; t < items.size(); ++t) {
      if (found && items[t].v <= best.value) return;
      const Schedule x = items[t].x;
      bool fits = true;
      for (int j : x.courses()) fits = fits && seats[static_cast<std::size_t>(j)] > 0;
      if (!fits) continue;
      for (int j : x.courses()) --seats[static_cast<std::size_t>(j)];
      chosen.push_back(x);
      dfs(t);
      chosen.pop_back();
      for (int j : x.courses()) ++seats[static_cast<std::size_t>(j)];
    }
  };
  dfs(0);
  return best;
}

/// A feasible allocation giving every student strictly more than
/// u_i(a_i) + threshold, if one exists. Exhaustive.
inline std::optional<Allocation> pareto_improvement(const Allocation& a, const std::vector<UtilityFn>& u,
                                                    const Catalog& catalog,
                                                    const Permissibility& perm, double threshold) {
  if (catalog.m > kMaxExhaustiveCourses || a.size() > static_cast<std::size_t>(kMaxExhaustiveStudents)) {
    throw CapabilityError("Pareto audit is exhaustive and limited to 8 courses and 3 students");
  }
  const auto all = enumerate_permissible(perm, catalog.m);
  std::vector<std::vector<Schedule>> candidates(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double floor = u[i](a[i]) + threshold;
    for (Schedule x : all) {
      if (u[i](x) > floor) candidates[i].push_back(x);
    }
  }
  std::vector<int> seats(static_cast<std::size_t>(catalog.m));
  for (int j = 0; j < catalog.m; ++j) seats[static_cast<std::size_t>(j)] = catalog.capacity(j);
  Allocation trial(a.size());
  std::function<bool(std::size_t)> dfs = [&](std::size_t i) {
    if (i == a.size()) return true;
    for (Schedule x : candidates[i]) {
      bool fits = true;
      for (int j : x.courses()) fits = fits && seats[static_cast<std::size_t>(j)] > 0;
      if (!fits) continue;
      for (int j : x.courses()) --seats[static_cast<std::size_t>(j)];
      trial[i] = x;
      const bool ok = dfs(i + 1);
      for (int j : x.courses()) ++seats[static_cast<std::size_t>(j)];
      if (ok) return true;
    }
    return false;
  };
  if (dfs(0)) return trial;
  return std::nullopt;
}

struct AuditReport {
  double eps = 0.0;
  double envy_bound = 0.0;
  bool envy_ok = true;
  /// Per student: maximin share value and shortfall below it; only filled
  /// for economies small enough for the exhaustive search.
  std::vector<double> maximin_value;
  std::vector<double> maximin_shortfall;
  std::optional<bool> maximin_ok;
  std::optional<bool> pareto_ok;
};

/// Envy for any size; maximin ((n+1)-splits) and Pareto only when
/// m <= 8 and n <= 3, otherwise those fields stay empty.
inline AuditReport audit_fairness(const Allocation& a, const std::vector<UtilityFn>& u,
                                  const Catalog& catalog, const Permissibility& perm, double eps) {
  AuditReport r;
  r.eps = eps;
  r.envy_bound = envy_bound(a, u);
  r.envy_ok = r.envy_bound <= eps;
  const bool small = catalog.m <= kMaxExhaustiveCourses &&
                     a.size() <= static_cast<std::size_t>(kMaxExhaustiveStudents);
  if (!small) return r;
  const int l = static_cast<int>(a.size()) + 1;
  bool ok = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double share = maximin_share(u[i], catalog, perm, l).value;
    const double shortfall = std::max(0.0, share - u[i](a[i]));
    r.maximin_value.push_back(share);
    r.maximin_shortfall.push_back(shortfall);
    ok = ok && shortfall <= eps;
  }
  r.maximin_ok = ok;
  r.pareto_ok = !pareto_improvement(a, u, catalog, perm, eps).has_value();
  return r;
}

inline void to_json(nlohmann::json& j, const AuditReport& r) {
  j = nlohmann::json{{"eps", r.eps},
                     {"envy_bound", r.envy_bound},
                     {"envy_ok", r.envy_ok},
                     {"maximin_value", r.maximin_value},
                     {"maximin_shortfall", r.maximin_shortfall}};
  j["maximin_ok"] = r.maximin_ok ? nlohmann::json(*r.maximin_ok) : nlohmann::json();
  j["pareto_ok"] = r.pareto_ok ? nlohmann::json(*r.pareto_ok) : nlohmann::json();
}

}  // namespace mlcm
