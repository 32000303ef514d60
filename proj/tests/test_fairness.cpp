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

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mlcm/fairness.hpp"
#include "mlcm/rng.hpp"

namespace mlcm {
namespace {

constexpr double kEps = 0.01;

using fixtures::bits;
using fixtures::listed;
using fixtures::maximin_oracle;
using fixtures::pareto_oracle;
using fixtures::random_utility;
using fixtures::unit_catalog;

TEST(Fairness, EnvyTightnessIsExactlyTwoEps) {
  const fixtures::EnvyTightness ex(kEps);
  EXPECT_NEAR(single_good_envy(ex.u[1], ex.a[1], ex.a[0]), 2 * kEps, 1e-12);
  EXPECT_EQ(single_good_envy(ex.u[0], ex.a[0], ex.a[1]), 0.0);
  EXPECT_NEAR(envy_bound(ex.a, ex.u), 2 * kEps, 1e-12);
  Permissibility perm;
  perm.max_courses = 3;
  EXPECT_TRUE(audit_fairness(ex.a, ex.u, ex.catalog, perm, 2 * kEps + 1e-12).envy_ok);
  EXPECT_FALSE(audit_fairness(ex.a, ex.u, ex.catalog, perm, 2 * kEps - 1e-6).envy_ok);
}

TEST(Fairness, MaximinTightnessIsExactlyTwoEps) {
  const fixtures::MaximinTightness ex(kEps);
  Permissibility perm;
  perm.max_courses = 4;
  const auto split = maximin_share(ex.u[0], ex.catalog, perm, 3);
  EXPECT_NEAR(split.value, 0.5 + kEps, 1e-12);
  const auto report = audit_fairness(ex.a, ex.u, ex.catalog, perm, 2 * kEps + 1e-12);
  EXPECT_NEAR(report.maximin_shortfall[0], 2 * kEps, 1e-12);
  EXPECT_TRUE(*report.maximin_ok);
  EXPECT_FALSE(*audit_fairness(ex.a, ex.u, ex.catalog, perm, 2 * kEps - 1e-6).maximin_ok);
}

TEST(Fairness, MaximinOfListedUtility) {
  // Two unit courses, two bundles: {a} and {b} score min(3, 2) = 2, beating
  // {a, b} with an empty bundle.
  const auto u = listed({{bits({0}), 3.0}, {bits({1}), 2.0}, {bits({0, 1}), 6.0}});
  Permissibility perm;
  perm.max_courses = 2;
  EXPECT_DOUBLE_EQ(maximin_share(u, unit_catalog({1, 1}), perm, 2).value, 2.0);
}

TEST(Fairness, MaximinMatchesSeatEnumeration) {
  Rng rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 3 + static_cast<int>(rng.index(3));  // 3..5
    std::vector<int> caps(static_cast<std::size_t>(m));
    for (auto& c : caps) c = 1 + static_cast<int>(rng.index(2));
    const Catalog cat = unit_catalog(caps);
    Permissibility perm;
    perm.max_courses = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(m)));
    const auto u = random_utility(m, rng, trial % 2 == 0);
    const int l = 2 + static_cast<int>(rng.index(2));
    EXPECT_DOUBLE_EQ(maximin_share(u, cat, perm, l).value, maximin_oracle(u, cat, perm, l))
        << "trial " << trial;
  }
}

TEST(Fairness, ParetoMatchesPairEnumeration) {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 3 + static_cast<int>(rng.index(4));  // 3..6
    std::vector<int> caps(static_cast<std::size_t>(m));
    for (auto& c : caps) c = 1 + static_cast<int>(rng.index(2));
    const Catalog cat = unit_catalog(caps);
    Permissibility perm;
    perm.max_courses = 1 + static_cast<int>(rng.index(3));
    const std::vector<UtilityFn> u{random_utility(m, rng, true), random_utility(m, rng, false)};
    const Allocation a{Schedule(static_cast<std::uint32_t>(rng.index(1U << m))), Schedule{}};
    const double t = std::round(rng.uniform(0.0, 3.0));
    const bool expected = pareto_oracle(a, u, cat, perm, t);
    const auto found = pareto_improvement(a, u, cat, perm, t);
    EXPECT_EQ(found.has_value(), expected) << "trial " << trial;
    if (found) {
      for (std::size_t i = 0; i < 2; ++i) EXPECT_GT(u[i]((*found)[i]), u[i](a[i]) + t);
      EXPECT_TRUE(feasible(*found, cat, {perm, perm}));
    }
  }
}

TEST(Fairness, SubsetEnvyShortcutAgreesForMonotoneValuers) {
  Rng rng(23);
  Permissibility perm;
  perm.max_courses = 6;
  for (int trial = 0; trial < 200; ++trial) {
    const auto u = random_utility(6, rng, true);
    const Schedule own(static_cast<std::uint32_t>(rng.index(64)));
    const Schedule other(static_cast<std::uint32_t>(rng.index(64)));
    EXPECT_DOUBLE_EQ(subset_envy(u, own, other, perm), subset_envy_monotone(u, own, other));
  }
}

TEST(Fairness, ExhaustiveChecksRefuseLargeEconomies) {
  const Catalog cat = unit_catalog(std::vector<int>(9, 1));
  Permissibility perm;
  perm.max_courses = 2;
  const UtilityFn u = [](Schedule x) { return static_cast<double>(x.size()); };
  EXPECT_THROW(maximin_share(u, cat, perm, 2), CapabilityError);
  const auto r = audit_fairness(Allocation{Schedule{}, Schedule{}}, {u, u}, cat, perm, 0.0);
  EXPECT_FALSE(r.maximin_ok.has_value());
  EXPECT_FALSE(r.pareto_ok.has_value());
  EXPECT_TRUE(nlohmann::json(r).at("pareto_ok").is_null());
}

}  // namespace
}  // namespace mlcm
