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

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary. Nothing here calls the code it is used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "mlcm/elicitation.hpp"
#include "mlcm/fairness.hpp"
#include "mlcm/prefgen.hpp"
#include "mlcm/valuemodel.hpp"

namespace mlcm::fixtures {

// Queries needed in the worst case to insert into a list of length l.
inline int worst_case_queries(int l) { return static_cast<int>(std::ceil(std::log2(l + 1.0))); }

struct SortRun {
  std::vector<int> queries_per_insertion;
  bool all_inserted = true;
};

// Inserts `arrivals` in order, answering from a hidden rank table (lower
// rank is better).
inline SortRun sort_with_oracle(BinaryInsertionSorter& sorter, const std::vector<Schedule>& arrivals,
                                const std::map<std::uint32_t, int>& rank) {
  SortRun run;
  sorter.seed(arrivals.front());
  for (std::size_t t = 1; t < arrivals.size(); ++t) {
    sorter.set_pending(arrivals[t]);
    int queries = 0;
    for (;;) {
      const auto s = sorter.search();
      if (!s.mid) break;
      const Schedule other = sorter.sorted()[static_cast<std::size_t>(*s.mid)];
      const Schedule winner = rank.at(arrivals[t].bits()) < rank.at(other.bits()) ? arrivals[t] : other;
      sorter.record(arrivals[t], other, winner);
      ++queries;
    }
    run.all_inserted = sorter.try_insert() && run.all_inserted;
    run.queries_per_insertion.push_back(queries);
  }
  return run;
}

struct AdversaryRun {
  int sorted_size = 0;
  int inferred_pairs = 0;
};

// Answers every query so that the larger of the two remaining intervals
// stays open, for `n_queries` answers.
inline AdversaryRun adversarial_sort(int n_queries) {
  BinaryInsertionSorter sorter;
  sorter.seed(Schedule(1));
  std::uint32_t next = 2;
  for (int answered = 0; answered < n_queries; ++answered) {
    if (!sorter.pending()) sorter.set_pending(Schedule(next++));
    const auto s = sorter.search();
    if (!s.mid) break;
    const int mid = *s.mid;
    const bool pending_wins = (mid - s.lo) > (s.hi - mid);
    const Schedule other = sorter.sorted()[static_cast<std::size_t>(mid)];
    sorter.record(*sorter.pending(), other, pending_wins ? *sorter.pending() : other);
    sorter.try_insert();
  }
  return {static_cast<int>(sorter.sorted().size()), static_cast<int>(sorter.ordinal().size())};
}

// Linear model reproducing `coefficients` in utility units once training
// has set the scale from `card`.
inline MonotoneValueModel linear_fit(const std::vector<double>& coefficients, const CardinalDataset& card) {
  double scale = 0.0;
  for (const auto& s : card) scale = std::max(scale, std::abs(s.y));
  std::vector<double> normalized;
  for (double c : coefficients) normalized.push_back(c / scale);
  return MonotoneValueModel::linear(static_cast<int>(coefficients.size()), normalized);
}

// The four-course worked example: true values (85, 70, 50, 40), reported
// values (75, 77, 42, 45), prices (0.6, 0.6, 0.3, 0.3), budget 1, at most
// two courses. Courses are 0-based here.
struct WorkedExample {
  Permissibility perm{2, 0, {}};
  PriceVector prices{0.6, 0.6, 0.3, 0.3};
  TrueUtility truth;
  GuiReport report;

  WorkedExample() {
    truth.base = {85, 70, 50, 40};
    truth.perm = perm;
    report.base = {75, 77, 42, 45};
  }

  ElicitationSession session() const {
    TrainConfig cfg;
    CardinalDataset card = build_cardinal(report, perm, 100, 100, 1);
    MonotoneValueModel model = linear_fit(report.base, card);
    train(model, card, {}, cfg);
    return ElicitationSession({QueryAlgorithm::kObis, cfg, 1}, model, card, prices, 1.0, perm);
  }

  // The expected query sequence as unordered pairs.
  static std::vector<std::pair<Schedule, Schedule>> expected_queries() {
    return {{Schedule::of({0, 3}), Schedule::of({1, 3})},
            {Schedule::of({0, 2}), Schedule::of({0, 3})},
            {Schedule::of({0, 3}), Schedule::of({1, 2})},
            {Schedule::of({1, 2}), Schedule::of({1, 3})}};
  }
};

// Random MVNN with hidden biases pushed below zero so both flat regions of
// the activation are exercised.
inline MonotoneValueModel random_mvnn(int m, int hidden, std::uint64_t seed) {
  MonotoneValueModel model = MonotoneValueModel::mvnn(m, hidden, seed);
  Rng rng(seed + 1);
  for (int h = 0; h < hidden; ++h) model.params()[static_cast<std::size_t>(hidden * m + h)] = -rng.uniform(0.0, 0.8);
  model.set_scale(rng.uniform(10.0, 200.0));
  return model;
}

inline Schedule random_subset(Rng& rng, int m) {
  return Schedule(static_cast<std::uint32_t>(rng.index(std::size_t{1} << m)));
}

// Central differences of f with respect to every parameter.
template <typename F>
std::vector<double> numeric_grad(MonotoneValueModel model, F&& f, double h = 1e-6) {
  std::vector<double> g(model.params().size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = model.params()[i];
    model.params()[i] = keep + h;
    const double up = f(model);
    model.params()[i] = keep - h;
    const double down = f(model);
    model.params()[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

// Objective of the individual-student MIP maximized over every feasible
// assignment of the G (complement) and J (substitute) indicators for a
// fixed schedule x. The two groups share no constraint, so each is
// enumerated on its own.
inline double mip_objective(const TrueUtility& u, Schedule x, int tau_bar) {
  double total = u.base_mass(x.bits());
  for (const auto& c : u.centers) {
    const int tau_x = x.overlap(c.complements);
    const int kappa_x = x.overlap(c.substitutes);
    auto best_over = [&](std::uint32_t set, auto&& feasible, auto&& factor) {
      const auto members = Schedule(set).courses();
      double best = -1e300;
      std::function<void(std::size_t, double)> go = [&](std::size_t i, double acc) {
        if (i == members.size()) {
          best = std::max(best, acc);
          return;
        }
        for (int t = 0; t <= tau_bar; ++t) {
          if (!feasible(t)) continue;
          const double b = u.base[static_cast<std::size_t>(members[i])];
          go(i + 1, acc + (t == 0 ? 0.0 : factor(t) * b));
        }
      };
      go(0, 0.0);
      return best;
    };
    // sum_t t G <= tau_x (G off contributes 0 to the left side).
    total += best_over(
        c.complements, [&](int t) { return t <= tau_x; }, [&](int t) { return c.psi_at(t); });
    // sum_t t J >= kappa_x.
    total += best_over(
        c.substitutes, [&](int t) { return t >= kappa_x; }, [&](int t) { return c.xi_at(t); });
  }
  return total;
}

// Power-set argmax of u under prices and budget; ties to the
// lexicographically smallest schedule.
inline Schedule scan_argmax(const TrueUtility& u, int m, int k, const PriceVector& p, double budget) {
  Schedule best;
  double best_v = eval_true(u, best);
  for (std::uint32_t b = 1; b < (1U << m); ++b) {
    const Schedule x(b);
    if (x.size() > k) continue;
    double c = 0.0;
    for (int j : x.courses()) c += p[static_cast<std::size_t>(j)];
    if (c > budget) continue;
    const double v = eval_true(u, x);
    if (v > best_v || (v == best_v && lex_less(x, best))) {
      best_v = v;
      best = x;
    }
  }
  return best;
}

inline Catalog unit_catalog(const std::vector<int>& caps) {
  Catalog c;
  c.m = static_cast<int>(caps.size());
  for (int j = 0; j < c.m; ++j) c.courses.push_back(Course{j, caps[static_cast<std::size_t>(j)], 0, 0, false, std::nullopt});
  return c;
}

// Utility given by a table of listed schedules (by bit mask), 0 elsewhere.
inline UtilityFn listed(std::map<std::uint32_t, double> values) {
  return [values = std::move(values)](Schedule x) {
    auto it = values.find(x.bits());
    return it == values.end() ? 0.0 : it->second;
  };
}

inline std::uint32_t bits(std::initializer_list<int> cs) { return Schedule::of(cs).bits(); }

// Envy construction: courses a, b, c with capacities (2, 1, 1), a1 = {a, b, c},
// a2 = {a}. Student 2's envy is bounded by a single good at exactly 2 eps.
struct EnvyTightness {
  Catalog catalog = unit_catalog({2, 1, 1});
  std::vector<UtilityFn> u;
  Allocation a{Schedule::of({0, 1, 2}), Schedule::of({0})};

  explicit EnvyTightness(double eps) {
    u.push_back(listed({{bits({0, 1}), 1.0}, {bits({0, 1, 2}), 1.0}}));
    u.push_back(listed({{bits({0}), 0.5 - eps},
                        {bits({1}), 0.5 - eps},
                        {bits({0, 2}), 0.5 + eps},
                        {bits({1, 2}), 0.5 + eps},
                        {bits({0, 1}), 1.0},
                        {bits({0, 1, 2}), 1.0}}));
  }
};

// Maximin construction: four unit courses a, b, c, d; a1 = {c}, a2 =
// {a, b, d}. Student 1's 3-maximin share is 0.5 + eps, reached by
// {{a}, {b}, {c, d}}, and they get 0.5 - eps.
struct MaximinTightness {
  Catalog catalog = unit_catalog({1, 1, 1, 1});
  std::vector<UtilityFn> u;
  Allocation a{Schedule::of({2}), Schedule::of({0, 1, 3})};

  explicit MaximinTightness(double eps) {
    u.push_back(listed({{bits({0}), 1.0},
                        {bits({1}), 0.5 + eps},
                        {bits({2}), 0.5 - eps},
                        {bits({1, 2}), 0.5 + eps},
                        {bits({1, 3}), 0.5 + eps},
                        {bits({2, 3}), 0.5 + eps}}));
    u.push_back(listed({{bits({0}), 0.8}, {bits({0, 1}), 0.9}, {bits({0, 3}), 0.9}, {bits({0, 1, 3}), 1.0}}));
  }
};

// Maximin share by assigning every seat to one of l bundles or leaving it
// unused, and scoring the worst bundle.
inline double maximin_oracle(const UtilityFn& u, const Catalog& cat, const Permissibility& perm, int l) {
  std::vector<int> seat_course;
  for (int j = 0; j < cat.m; ++j) {
    for (int s = 0; s < cat.capacity(j); ++s) seat_course.push_back(j);
  }
  double best = -1e300;
  std::vector<int> owner(seat_course.size(), 0);
  for (;;) {
    std::vector<std::uint32_t> bundle(static_cast<std::size_t>(l), 0);
    bool ok = true;
    for (std::size_t s = 0; s < seat_course.size() && ok; ++s) {
      if (owner[s] == l) continue;
      const std::uint32_t bit = 1U << seat_course[s];
      auto& b = bundle[static_cast<std::size_t>(owner[s])];
      ok = (b & bit) == 0;  // one seat of a course per bundle
      b |= bit;
    }
    if (ok) {
      double worst = 1e300;
      for (auto b : bundle) {
        ok = ok && is_permissible(Schedule(b), perm);
        worst = std::min(worst, u(Schedule(b)));
      }
      if (ok) best = std::max(best, worst);
    }
    std::size_t s = 0;
    while (s < owner.size() && ++owner[s] > l) owner[s++] = 0;
    if (s == owner.size()) break;
  }
  return best;
}

// Whether some pair of schedules within capacity gives both students more
// than their current utility plus t.
inline bool pareto_oracle(const Allocation& a, const std::vector<UtilityFn>& u, const Catalog& cat,
                          const Permissibility& perm, double t) {
  const std::uint32_t n_sets = 1U << cat.m;
  for (std::uint32_t x = 0; x < n_sets; ++x) {
    if (!is_permissible(Schedule(x), perm) || !(u[0](Schedule(x)) > u[0](a[0]) + t)) continue;
    for (std::uint32_t y = 0; y < n_sets; ++y) {
      if (!is_permissible(Schedule(y), perm) || !(u[1](Schedule(y)) > u[1](a[1]) + t)) continue;
      bool fits = true;
      for (int j = 0; j < cat.m; ++j) {
        const int used = static_cast<int>(((x >> j) & 1U) + ((y >> j) & 1U));
        fits = fits && used <= cat.capacity(j);
      }
      if (fits) return true;
    }
  }
  return false;
}

// Random table utility over all subsets of m courses with integer values
// in [0, 10]; made monotone by a running max over one-course-smaller sets.
inline UtilityFn random_utility(int m, Rng& rng, bool monotone) {
  std::vector<double> v(std::size_t{1} << m, 0.0);
  for (std::uint32_t s = 1; s < v.size(); ++s) {
    v[s] = std::round(rng.uniform(0.0, 10.0));
    if (monotone) {
      for (int j = 0; j < m; ++j) {
        if ((s >> j) & 1U) v[s] = std::max(v[s], v[s & ~(1U << j)]);
      }
    }
  }
  return [v](Schedule x) { return v[x.bits()]; };
}

}  // namespace mlcm::fixtures
