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

// Latent-space student preference generator: base values plus
// complement/substitute synergies around a few "center" courses.

#pragma once

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mlcm/catalog.hpp"
#include "mlcm/rng.hpp"
#include "mlcm/valuation.hpp"

namespace mlcm {

/// Synergy structure around one center course. `psi[t]` is the bonus
/// multiplier when t courses of `complements` are taken; `xi[t]` the
/// (nonpositive) penalty multiplier for t courses of `substitutes`.
/// Both factors scale the base values of the whole set.
struct SynergyCenter {
  int center = 0;
  std::uint32_t substitutes = 0;
  std::uint32_t complements = 0;
  std::vector<double> psi;
  std::vector<double> xi;

  double psi_at(int t) const {
    if (psi.empty()) return 0.0;
    return psi[static_cast<std::size_t>(std::min<int>(t, static_cast<int>(psi.size()) - 1))];
  }
  double xi_at(int t) const {
    if (xi.empty()) return 0.0;
    return xi[static_cast<std::size_t>(std::min<int>(t, static_cast<int>(xi.size()) - 1))];
  }

  bool operator==(const SynergyCenter&) const = default;
};

struct TrueUtility {
  std::vector<double> base;
  std::vector<SynergyCenter> centers;
  Permissibility perm;

  int m() const { return static_cast<int>(base.size()); }
  double base_mass(std::uint32_t mask) const {
    double total = 0.0;
    for (std::uint32_t b = mask; b != 0; b &= b - 1) {
      total += base[static_cast<std::size_t>(std::countr_zero(b))];
    }
    return total;
  }

  bool operator==(const TrueUtility&) const = default;
};

/// Defaults are the calibrated setting (see `mlcm calibrate`).
struct GeneratorConfig {
  int n_favorites = 5;
  int n_centers = 1;
  int r_s = 1;
  int r_c = 1;
  double l_p = 68.6;
  double u_p = 90.1;
  double l_np = 0.0;
  double u_np = 42.7;
  /// psi and xi are step functions: at each t >= 2 the table jumps with
  /// probability step_prob, by U(0, psi_step_max) (resp. -U(0, xi_step_max)).
  double psi_step_max = 0.458;
  double xi_step_max = 0.121;
  double step_prob = 0.476;
  bool additive_mode = false;
  std::uint64_t seed = 0;
};

inline int l1_distance(const Course& a, const Course& b) {
  return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

inline int linf_distance(const Course& a, const Course& b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

/// Substitutes: L1 ball of radius r_s. Complements: L-inf ball of radius
/// r_c minus the substitutes, plus the center itself.
inline SynergyCenter synergy_sets(const Catalog& catalog, int center, int r_s, int r_c) {
  SynergyCenter sc;
  sc.center = center;
  const Course& c = catalog.courses[static_cast<std::size_t>(center)];
  for (const Course& other : catalog.courses) {
    if (l1_distance(other, c) <= r_s) sc.substitutes |= 1U << other.id;
  }
  for (const Course& other : catalog.courses) {
    if (linf_distance(other, c) <= r_c && !((sc.substitutes >> other.id) & 1U)) {
      sc.complements |= 1U << other.id;
    }
  }
  sc.complements |= 1U << center;
  return sc;
}

/// Utility of schedule x: base values of the taken courses, plus for every
/// center psi(|x ∩ C|) times the base mass of all of C and xi(|x ∩ S|)
/// times the base mass of all of S.
inline double eval_true(const TrueUtility& u, Schedule x) {
  double total = u.base_mass(x.bits());
  for (const auto& c : u.centers) {
    const int tau = x.overlap(c.complements);
    const int kappa = x.overlap(c.substitutes);
    if (tau >= 2) total += c.psi_at(tau) * u.base_mass(c.complements);
    if (kappa >= 2) total += c.xi_at(kappa) * u.base_mass(c.substitutes);
  }
  return total;
}

inline void validate(const GeneratorConfig& cfg, const Catalog& catalog) {
  const int n_popular = static_cast<int>(catalog.popular().size());
  if (cfg.n_centers < 0 || cfg.n_favorites < 0) {
    throw ValidationError("generator counts must be nonnegative");
  }
  if (!cfg.additive_mode && cfg.n_centers > cfg.n_favorites) {
    throw ValidationError("n_centers must not exceed n_favorites");
  }
  if (cfg.n_favorites > n_popular) {
    throw ValidationError("n_favorites must not exceed the number of popular courses");
  }
  if (cfg.r_s < 1 || cfg.r_c < 1) throw ValidationError("radii must be positive");
  if (cfg.l_np < 0 || cfg.l_np > cfg.l_p || cfg.u_np > cfg.u_p || cfg.l_p > cfg.u_p ||
      cfg.l_np > cfg.u_np) {
    throw ValidationError("value ranges must satisfy 0 <= l_np <= l_p, u_np <= u_p");
  }
  if (cfg.step_prob < 0 || cfg.step_prob > 1) {
    throw ValidationError("step_prob must be in [0, 1]");
  }
  if (cfg.psi_step_max < 0 || cfg.xi_step_max < 0) {
    throw ValidationError("synergy step ranges must be nonnegative");
  }
}

/// One TrueUtility per student; student i draws from its own seeded stream
/// so instances are reproducible and independent of n.
inline std::vector<TrueUtility> generate_instance(const GeneratorConfig& cfg,
                                                  const Catalog& catalog, int n,
                                                  const Permissibility& perm) {
  validate(cfg, catalog);
  const auto popular = catalog.popular();
  std::vector<TrueUtility> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg.seed, stream::kStudent, static_cast<std::uint64_t>(i)));
    TrueUtility u;
    u.perm = perm;
    std::vector<int> favorites;
    for (int idx : rng.sample(static_cast<int>(popular.size()), cfg.n_favorites)) {
      favorites.push_back(popular[static_cast<std::size_t>(idx)]);
    }
    u.base.assign(static_cast<std::size_t>(catalog.m), 0.0);
    for (int j = 0; j < catalog.m; ++j) {
      const bool fav = std::find(favorites.begin(), favorites.end(), j) != favorites.end();
      u.base[static_cast<std::size_t>(j)] =
          fav ? rng.uniform(cfg.l_p, cfg.u_p) : rng.uniform(cfg.l_np, cfg.u_np);
    }
    if (!cfg.additive_mode) {
      for (int idx : rng.sample(static_cast<int>(favorites.size()), cfg.n_centers)) {
        SynergyCenter sc =
            synergy_sets(catalog, favorites[static_cast<std::size_t>(idx)], cfg.r_s, cfg.r_c);
        const int nc = std::popcount(sc.complements);
        const int ns = std::popcount(sc.substitutes);
        sc.psi.assign(static_cast<std::size_t>(nc) + 1, 0.0);
        sc.xi.assign(static_cast<std::size_t>(ns) + 1, 0.0);
        for (int t = 2; t <= nc; ++t) {
          const double step = rng.bernoulli(cfg.step_prob) ? rng.uniform(0.0, cfg.psi_step_max) : 0.0;
          sc.psi[static_cast<std::size_t>(t)] = sc.psi[static_cast<std::size_t>(t - 1)] + step;
        }
        for (int t = 2; t <= ns; ++t) {
          const double step = rng.bernoulli(cfg.step_prob) ? rng.uniform(0.0, cfg.xi_step_max) : 0.0;
          sc.xi[static_cast<std::size_t>(t)] = sc.xi[static_cast<std::size_t>(t - 1)] - step;
        }
        u.centers.push_back(std::move(sc));
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

/// Best permissible, affordable schedule under the true utility, skipping
/// `exclude`. Falls back to the empty schedule.
inline Schedule argmax_true(const TrueUtility& u, const PriceVector& p, double budget,
                            const std::vector<Schedule>& exclude = {}) {
  auto space = schedule_space(u.perm, u.m());
  auto best = argmax_scan(
      *space, [&](Schedule x) { return eval_true(u, x); }, p, budget,
      [&](Schedule x) { return std::find(exclude.begin(), exclude.end(), x) != exclude.end(); });
  return best.value_or(Schedule{});
}

inline void to_json(nlohmann::json& j, const SynergyCenter& c) {
  j = nlohmann::json{{"c", c.center},
                     {"S", Schedule(c.substitutes)},
                     {"C", Schedule(c.complements)},
                     {"psi", c.psi},
                     {"xi", c.xi}};
}

inline void from_json(const nlohmann::json& j, SynergyCenter& c) {
  j.at("c").get_to(c.center);
  c.substitutes = j.at("S").get<Schedule>().bits();
  c.complements = j.at("C").get<Schedule>().bits();
  j.at("psi").get_to(c.psi);
  j.at("xi").get_to(c.xi);
}

inline void to_json(nlohmann::json& j, const TrueUtility& u) {
  j = nlohmann::json{{"base", u.base}, {"centers", u.centers}, {"perm", u.perm}};
}

inline void from_json(const nlohmann::json& j, TrueUtility& u) {
  j.at("base").get_to(u.base);
  j.at("centers").get_to(u.centers);
  j.at("perm").get_to(u.perm);
}

inline void to_json(nlohmann::json& j, const GeneratorConfig& g) {
  j = nlohmann::json{{"n_favorites", g.n_favorites}, {"n_centers", g.n_centers},
                     {"r_s", g.r_s},                 {"r_c", g.r_c},
                     {"l_p", g.l_p},                 {"u_p", g.u_p},
                     {"l_np", g.l_np},               {"u_np", g.u_np},
                     {"psi_step_max", g.psi_step_max},
                     {"xi_step_max", g.xi_step_max}, {"step_prob", g.step_prob},
                     {"additive_mode", g.additive_mode},
                     {"seed", g.seed}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& g) {
  g = GeneratorConfig{};
  g.n_favorites = j.value("n_favorites", g.n_favorites);
  g.n_centers = j.value("n_centers", g.n_centers);
  g.r_s = j.value("r_s", g.r_s);
  g.r_c = j.value("r_c", g.r_c);
  g.l_p = j.value("l_p", g.l_p);
  g.u_p = j.value("u_p", g.u_p);
  g.l_np = j.value("l_np", g.l_np);
  g.u_np = j.value("u_np", g.u_np);
  g.psi_step_max = j.value("psi_step_max", g.psi_step_max);
  g.xi_step_max = j.value("xi_step_max", g.xi_step_max);
  g.step_prob = j.value("step_prob", g.step_prob);
  g.additive_mode = j.value("additive_mode", g.additive_mode);
  g.seed = j.value("seed", g.seed);
}

}  // namespace mlcm
