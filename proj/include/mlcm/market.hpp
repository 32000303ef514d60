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

// Budgets, clearing error, the three Course Match stages (tabu price
// search, oversubscription removal, fill) and random serial dictatorship.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <bit>
#include <deque>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlcm/catalog.hpp"
#include "mlcm/rng.hpp"
#include "mlcm/valuation.hpp"

namespace mlcm {

using Allocation = std::vector<Schedule>;

/// b_i = 1 + U(0, beta), one draw per student in index order.
inline std::vector<double> draw_budgets(int n, double beta, std::uint64_t seed) {
  if (beta < 0) throw ValidationError("budget spread must be nonnegative");
  Rng rng(derive_seed(seed, stream::kBudget));
  std::vector<double> b(static_cast<std::size_t>(n));
  for (auto& v : b) v = 1.0 + rng.uniform(0.0, beta);
  return b;
}

/// Seats taken per course.
inline std::vector<int> enrollment(const Allocation& a, int m) {
  std::vector<int> d(static_cast<std::size_t>(m), 0);
  for (Schedule x : a) {
    for (std::uint32_t b = x.bits(); b != 0; b &= b - 1) ++d[static_cast<std::size_t>(std::countr_zero(b))];
  }
  return d;
}

struct ClearingReport {
  std::vector<double> z;
  double alpha = 0.0;
  double target = 0.0;
  bool cleared() const { return alpha <= target; }
};

/// Clearing threshold sqrt(sigma m) / 2 with sigma = min(2k, m).
inline double clearing_target(int m, int k) {
  const double sigma = std::min(2 * k, m);
  return std::sqrt(sigma * m) / 2.0;
}

/// z_j is excess demand for priced courses and only the positive part of it
/// for free courses; alpha is the Euclidean norm of z.
inline ClearingReport clearing_error(const Allocation& a, const PriceVector& p,
                                     const Catalog& catalog, int k) {
  ClearingReport r;
  const auto d = enrollment(a, catalog.m);
  r.z.resize(static_cast<std::size_t>(catalog.m));
  double ss = 0.0;
  for (int j = 0; j < catalog.m; ++j) {
    const double excess = d[static_cast<std::size_t>(j)] - catalog.capacity(j);
    const double z = p[static_cast<std::size_t>(j)] > 0.0 ? excess : std::max(excess, 0.0);
    r.z[static_cast<std::size_t>(j)] = z;
    ss += z * z;
  }
  r.alpha = std::sqrt(ss);
  r.target = clearing_target(catalog.m, k);
  return r;
}

inline bool feasible(const Allocation& a, const Catalog& catalog,
                     const std::vector<Permissibility>& perms) {
  const auto d = enrollment(a, catalog.m);
  for (int j = 0; j < catalog.m; ++j) {
    if (d[static_cast<std::size_t>(j)] > catalog.capacity(j)) return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!is_permissible(a[i], perms[i])) return false;
  }
  return true;
}

/// The students' valuers (tabulated) and budgets.
struct Economy {
  const Catalog* catalog = nullptr;
  std::vector<const ValueTable*> valuers;
  std::vector<double> budgets;
  int k = 5;

  int n() const { return static_cast<int>(valuers.size()); }
  int m() const { return catalog->m; }
};

inline Allocation demand(const Economy& e, const PriceVector& p) {
  Allocation a(static_cast<std::size_t>(e.n()));
  for (int i = 0; i < e.n(); ++i) {
    a[static_cast<std::size_t>(i)] = e.valuers[static_cast<std::size_t>(i)]->demand(p, e.budgets[static_cast<std::size_t>(i)]);
  }
  return a;
}

/// Demand after changing the price of course j from `base` prices; only
/// students whose choice can change are recomputed (on a price increase,
/// only those holding j).
inline Allocation demand_after_change(const Economy& e, const PriceVector& p_new,
                                      const PriceVector& p_old, const Allocation& a_old, int j) {
  Allocation a = a_old;
  const bool increase = p_new[static_cast<std::size_t>(j)] >= p_old[static_cast<std::size_t>(j)];
  for (int i = 0; i < e.n(); ++i) {
    if (increase && !a_old[static_cast<std::size_t>(i)].contains(j)) continue;
    a[static_cast<std::size_t>(i)] = e.valuers[static_cast<std::size_t>(i)]->demand(p_new, e.budgets[static_cast<std::size_t>(i)]);
  }
  return a;
}

struct Stage1Config {
  int max_steps = 500;
  double delta = 0.1;
  double eta = 0.1;
  int tabu_tenure = 10;
  /// Steps without improving the best alpha before a random restart.
  int restart_after = 50;
  /// Each neighbor move is also tried at these fractions of its full step.
  std::vector<double> step_scales{1.0, 0.3};
  std::uint64_t seed = 0;
};

struct Stage1Step {
  int step = 0;
  double alpha = 0.0;
  double best_alpha = 0.0;
};

struct Stage1Result {
  PriceVector prices;
  Allocation allocation;
  ClearingReport report;
  std::vector<Stage1Step> trace;
  int steps = 0;
};

/// Tabu search over price vectors. Neighbors of p: for every course with
/// z_j != 0, p_j moved by delta * z_j (clamped at 0); plus one gradient
/// move p + eta * z on all courses. The best non-tabu
/// neighbor is taken even when worse; a neighbor is tabu when its aggregate
/// demand vector was visited within the last `tabu_tenure` steps.
inline Stage1Result stage1_search(const Economy& e, const Stage1Config& cfg) {
  const int m = e.m();
  const Catalog& cat = *e.catalog;
  Rng rng(derive_seed(cfg.seed, stream::kStage1));
  double max_budget = 0.0;
  for (double b : e.budgets) max_budget = std::max(max_budget, b);
  const double price_cap = max_budget + 1e-4;

  PriceVector p(static_cast<std::size_t>(m), 0.0);
  Allocation a = demand(e, p);
  ClearingReport rep = clearing_error(a, p, cat, e.k);
  Stage1Result best{p, a, rep, {}, 0};
  best.trace.push_back({0, rep.alpha, rep.alpha});
  if (rep.cleared()) return best;

  // Start from prices proportional to demand at zero prices, scaled so an
  // average k-course bundle costs about one budget.
  {
    const auto d = enrollment(a, m);
    double total = 0.0;
    for (int v : d) total += v;
    for (int j = 0; j < m; ++j) {
      p[static_cast<std::size_t>(j)] = total > 0 ? (static_cast<double>(m) / e.k) * d[static_cast<std::size_t>(j)] / total : 0.0;
    }
    a = demand(e, p);
    rep = clearing_error(a, p, cat, e.k);
    if (rep.alpha < best.report.alpha) best = {p, a, rep, std::move(best.trace), 0};
  }

  std::deque<std::vector<int>> tabu;
  auto is_tabu = [&](const std::vector<int>& d) {
    return std::find(tabu.begin(), tabu.end(), d) != tabu.end();
  };
  auto remember = [&](std::vector<int> d) {
    tabu.push_back(std::move(d));
    while (static_cast<int>(tabu.size()) > cfg.tabu_tenure) tabu.pop_front();
  };
  remember(enrollment(a, m));

  int since_improvement = 0;
  int step = 0;
  for (step = 1; step <= cfg.max_steps && !best.report.cleared(); ++step) {
    struct Candidate {
      PriceVector p;
      Allocation a;
      ClearingReport rep;
      std::vector<int> d;
    };
    std::optional<Candidate> chosen;
    auto consider = [&](PriceVector np, Allocation na) {
      auto nd = enrollment(na, m);
      if (is_tabu(nd)) return;
      auto nrep = clearing_error(na, np, cat, e.k);
      if (!chosen || nrep.alpha < chosen->rep.alpha) {
        chosen = Candidate{std::move(np), std::move(na), std::move(nrep), std::move(nd)};
      }
    };
    for (double scale : cfg.step_scales) {
      for (int j = 0; j < m; ++j) {
        const double z = rep.z[static_cast<std::size_t>(j)];
        if (z == 0.0) continue;
        PriceVector np = p;
        auto& pj = np[static_cast<std::size_t>(j)];
        pj = std::clamp(pj + scale * cfg.delta * z, 0.0, price_cap);
        if (pj == p[static_cast<std::size_t>(j)]) continue;
        Allocation na = demand_after_change(e, np, p, a, j);
        consider(std::move(np), std::move(na));
      }
      PriceVector np = p;
      for (int j = 0; j < m; ++j) {
        np[static_cast<std::size_t>(j)] = std::clamp(
            p[static_cast<std::size_t>(j)] + scale * cfg.eta * rep.z[static_cast<std::size_t>(j)],
            0.0, price_cap);
      }
      Allocation na = demand(e, np);
      consider(std::move(np), std::move(na));
    }

    if (!chosen || since_improvement >= cfg.restart_after) {
      // Random restart around the best prices found so far.
      p = best.prices;
      for (auto& v : p) v = std::clamp(v * (1.0 + rng.uniform(-0.2, 0.2)), 0.0, price_cap);
      a = demand(e, p);
      rep = clearing_error(a, p, cat, e.k);
      tabu.clear();
      since_improvement = 0;
    } else {
      p = std::move(chosen->p);
      a = std::move(chosen->a);
      rep = std::move(chosen->rep);
      remember(std::move(chosen->d));
    }
    if (rep.alpha < best.report.alpha) {
      best.prices = p;
      best.allocation = a;
      best.report = rep;
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    best.trace.push_back({step, rep.alpha, best.report.alpha});
  }
  best.steps = step - 1;
  return best;
}

struct Stage2Result {
  PriceVector prices;
  Allocation allocation;
  int raises = 0;
};

/// Repeatedly raises the price of the most oversubscribed course (ties to
/// the lowest id) to the smallest level, on a 1e-4 grid, at which at least
/// one demander drops it.
inline Stage2Result stage2_remove_oversubscription(const Economy& e, PriceVector p) {
  constexpr double kGranularity = 1e-4;
  const int m = e.m();
  const Catalog& cat = *e.catalog;
  double max_budget = 0.0;
  for (double b : e.budgets) max_budget = std::max(max_budget, b);
  Allocation a = demand(e, p);
  Stage2Result out;
  for (;;) {
    const auto d = enrollment(a, m);
    int worst = -1;
    int worst_excess = 0;
    for (int j = 0; j < m; ++j) {
      const int excess = d[static_cast<std::size_t>(j)] - cat.capacity(j);
      if (excess > worst_excess) {
        worst = j;
        worst_excess = excess;
      }
    }
    if (worst < 0) break;
    const auto sj = static_cast<std::size_t>(worst);
    const int current = d[sj];
    auto demand_at = [&](double price) {
      PriceVector np = p;
      np[sj] = price;
      return demand_after_change(e, np, p, a, worst);
    };
    // Invariant: demand at lo is still `current`; at hi it is lower.
    double lo = p[sj];
    double hi = std::max(lo, max_budget) + kGranularity;
    while (hi - lo > kGranularity) {
      const double mid = 0.5 * (lo + hi);
      const auto na = demand_at(mid);
      if (enrollment(na, m)[sj] < current) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    PriceVector np = p;
    np[sj] = hi;
    a = demand_after_change(e, np, p, a, worst);
    p = std::move(np);
    ++out.raises;
  }
  out.prices = std::move(p);
  out.allocation = std::move(a);
  return out;
}

/// Stage 3: every budget is raised by `bump`; students, in seeded random
/// order, may switch to a strictly better affordable schedule that fits in
/// the seats left over by everybody else and has at least as many courses
/// (so total undersubscription never grows).
inline Allocation stage3_fill(const Economy& e, const PriceVector& p, Allocation a, double bump,
                              std::uint64_t seed) {
  const int m = e.m();
  const Catalog& cat = *e.catalog;
  auto used = enrollment(a, m);
  std::vector<int> order(static_cast<std::size_t>(e.n()));
  for (int i = 0; i < e.n(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, stream::kStage3));
  rng.shuffle(order);
  for (int i : order) {
    const auto si = static_cast<std::size_t>(i);
    const Schedule current = a[si];
    // Seats available to i: free seats plus those i already holds.
    std::uint32_t full = 0;
    for (int j = 0; j < m; ++j) {
      const int others = used[static_cast<std::size_t>(j)] - (current.contains(j) ? 1 : 0);
      if (others >= cat.capacity(j)) full |= 1U << j;
    }
    const double budget = e.budgets[si] * (1.0 + bump);
    const ValueTable& table = *e.valuers[si];
    const double current_value = table.value(current);
    const auto& sorted = table.sorted();
    const auto& values = table.sorted_values();
    for (std::size_t t = 0; t < sorted.size() && values[t] > current_value; ++t) {
      const Schedule x = sorted[t];
      if (x.size() < current.size() || (x.bits() & full) != 0 || !affordable(x, p, budget)) continue;
      for (int j : current.courses()) --used[static_cast<std::size_t>(j)];
      for (int j : x.courses()) ++used[static_cast<std::size_t>(j)];
      a[si] = x;
      break;
    }
  }
  return a;
}

/// Random serial dictatorship: in seeded random order each student takes
/// their favorite schedule among those with seats left.
inline Allocation rsd(const Catalog& catalog, const std::vector<const ValueTable*>& valuers,
                      std::uint64_t seed) {
  const int n = static_cast<int>(valuers.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, stream::kRsd));
  rng.shuffle(order);
  std::vector<int> used(static_cast<std::size_t>(catalog.m), 0);
  Allocation a(static_cast<std::size_t>(n));
  for (int i : order) {
    std::uint32_t full = 0;
    for (int j = 0; j < catalog.m; ++j) {
      if (used[static_cast<std::size_t>(j)] >= catalog.capacity(j)) full |= 1U << j;
    }
    auto x = valuers[static_cast<std::size_t>(i)]->best([&](Schedule s) { return (s.bits() & full) == 0; });
    const Schedule pick = x.value_or(Schedule{});
    for (int j : pick.courses()) ++used[static_cast<std::size_t>(j)];
    a[static_cast<std::size_t>(i)] = pick;
  }
  return a;
}

/// Stages 1-3 in sequence.
struct CourseMatchConfig {
  Stage1Config stage1;
  double stage3_bump = 0.10;
  std::uint64_t stage3_seed = 0;
};

struct CourseMatchResult {
  PriceVector stage1_prices;
  ClearingReport stage1_report;
  int stage1_steps = 0;
  PriceVector prices;  // after stage 2
  Allocation stage2_allocation;
  Allocation allocation;  // final
  std::vector<Stage1Step> trace;
};

inline CourseMatchResult course_match(const Economy& e, const CourseMatchConfig& cfg,
                                      const PriceVector* fixed_prices = nullptr) {
  CourseMatchResult out;
  PriceVector p;
  if (fixed_prices) {
    p = *fixed_prices;
    out.stage1_report = clearing_error(demand(e, p), p, *e.catalog, e.k);
  } else {
    auto s1 = stage1_search(e, cfg.stage1);
    p = s1.prices;
    out.stage1_report = s1.report;
    out.stage1_steps = s1.steps;
    out.trace = std::move(s1.trace);
  }
  out.stage1_prices = p;
  auto s2 = stage2_remove_oversubscription(e, p);
  out.prices = s2.prices;
  out.stage2_allocation = s2.allocation;
  out.allocation = stage3_fill(e, s2.prices, s2.allocation, cfg.stage3_bump, cfg.stage3_seed);
  return out;
}

inline std::string stage1_trace_csv(const std::vector<Stage1Step>& trace) {
  std::ostringstream os;
  os.precision(10);
  os << "step,alpha,best_alpha\n";
  for (const auto& s : trace) os << s.step << ',' << s.alpha << ',' << s.best_alpha << '\n';
  return os.str();
}

inline nlohmann::json allocation_json(const Allocation& a, const PriceVector& p) {
  return nlohmann::json{{"allocation", a}, {"prices", p}};
}

}  // namespace mlcm
