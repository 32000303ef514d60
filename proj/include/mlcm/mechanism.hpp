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

// Instances and the mechanisms compared on them: Course Match on reports,
// on true preferences and on mistake-free reports; MLCM with its five
// phases; MLCM with models projected back into reports; and RSD.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlcm/catalog.hpp"
#include "mlcm/elicitation.hpp"
#include "mlcm/market.hpp"
#include "mlcm/prefgen.hpp"
#include "mlcm/reporting.hpp"
#include "mlcm/rng.hpp"
#include "mlcm/valuation.hpp"
#include "mlcm/valuemodel.hpp"

namespace mlcm {

struct InstanceConfig {
  CatalogConfig catalog;
  GeneratorConfig generator;
  MistakeProfile mistakes = MistakeProfile::popular9();
  double beta = 0.04;
};

/// Everything a batch of mechanisms shares: catalog, true preferences,
/// noisy and mistake-free reports, and budgets.
struct Instance {
  Catalog catalog;
  Permissibility perm;
  std::vector<TrueUtility> truth;
  std::vector<GuiReport> reports;
  std::vector<GuiReport> exact_reports;
  std::vector<double> budgets;
  MistakeProfile mistakes;

  int n() const { return static_cast<int>(truth.size()); }
  int m() const { return catalog.m; }
  int k() const { return perm.max_courses; }
};

/// Deterministic in (cfg, seed): the catalog, generator, report and budget
/// streams are all derived from `seed`.
inline Instance make_instance(const InstanceConfig& cfg, std::uint64_t seed) {
  validate(cfg.mistakes);
  Instance inst;
  inst.catalog = make_catalog(cfg.catalog, seed);
  inst.perm.max_courses = cfg.catalog.max_courses;
  inst.perm.slot_conflicts = inst.catalog.slot_masks();
  GeneratorConfig g = cfg.generator;
  g.seed = seed;
  inst.truth = generate_instance(g, inst.catalog, cfg.catalog.n_students, inst.perm);
  inst.mistakes = cfg.mistakes;
  const MistakeProfile scaled = cfg.mistakes.scaled();
  for (int i = 0; i < inst.n(); ++i) {
    const auto s = derive_seed(seed, stream::kReport, static_cast<std::uint64_t>(i));
    inst.reports.push_back(report(inst.truth[static_cast<std::size_t>(i)], scaled, s));
    inst.exact_reports.push_back(report(inst.truth[static_cast<std::size_t>(i)], MistakeProfile::none(), s));
  }
  inst.budgets = draw_budgets(inst.n(), cfg.beta, seed);
  return inst;
}

inline void to_json(nlohmann::json& j, const Instance& inst) {
  j = nlohmann::json{{"catalog", inst.catalog},   {"perm", inst.perm},
                     {"truth", inst.truth},       {"reports", inst.reports},
                     {"exact_reports", inst.exact_reports}, {"budgets", inst.budgets},
                     {"mistakes", inst.mistakes}};
}

inline void from_json(const nlohmann::json& j, Instance& inst) {
  j.at("catalog").get_to(inst.catalog);
  j.at("perm").get_to(inst.perm);
  j.at("truth").get_to(inst.truth);
  j.at("budgets").get_to(inst.budgets);
  j.at("mistakes").get_to(inst.mistakes);
  inst.reports.clear();
  inst.exact_reports.clear();
  for (const auto& r : j.at("reports")) inst.reports.push_back(gui_report_from_json(r, inst.catalog.m));
  for (const auto& r : j.at("exact_reports")) {
    inst.exact_reports.push_back(gui_report_from_json(r, inst.catalog.m));
  }
  const auto n = inst.truth.size();
  if (inst.reports.size() != n || inst.exact_reports.size() != n || inst.budgets.size() != n) {
    throw ValidationError("instance arrays disagree on the number of students");
  }
}

enum class MechanismKind { kCm, kCmStar, kCmNoMistakes, kMlcm, kMlcmProjected, kRsd };

inline std::string to_string(MechanismKind k) {
  switch (k) {
    case MechanismKind::kCm: return "CM";
    case MechanismKind::kCmStar: return "CM_STAR";
    case MechanismKind::kCmNoMistakes: return "CM_NO_MISTAKES";
    case MechanismKind::kMlcm: return "MLCM";
    case MechanismKind::kMlcmProjected: return "MLCM_PROJECTED";
    case MechanismKind::kRsd: return "RSD";
  }
  return "?";
}

/// Case-insensitive; '-' and '_' are interchangeable and "cmnm" is short
/// for CM_NO_MISTAKES.
inline MechanismKind parse_mechanism(const std::string& s) {
  auto canonical = [](std::string x) {
    for (auto& c : x) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return x;
  };
  const std::string key = canonical(s);
  if (key == "CMNM") return MechanismKind::kCmNoMistakes;
  for (auto k : {MechanismKind::kCm, MechanismKind::kCmStar, MechanismKind::kCmNoMistakes,
                 MechanismKind::kMlcm, MechanismKind::kMlcmProjected, MechanismKind::kRsd}) {
    if (key == to_string(k)) return k;
  }
  throw ValidationError("unknown mechanism: " + s);
}

/// Either additive Gaussian noise N(0, sigma) or multiplicative uniform
/// noise p_j * U(1 - l, 1 + l).
struct PriceNoise {
  enum class Kind { kGaussian, kUniform } kind = Kind::kGaussian;
  double sigma = 0.0;
  double l = 0.0;
};

/// Perturbed prices, clamped to [0, min budget].
inline PriceVector perturb_prices(const PriceVector& p, const PriceNoise& noise, double min_budget,
                                  std::uint64_t seed) {
  if (noise.sigma < 0 || noise.l < 0) throw ValidationError("price noise must be nonnegative");
  Rng rng(derive_seed(seed, stream::kPrices));
  PriceVector out = p;
  for (auto& v : out) {
    if (noise.kind == PriceNoise::Kind::kGaussian) {
      v += noise.sigma > 0 ? rng.normal(0.0, noise.sigma) : 0.0;
    } else {
      v *= 1.0 + rng.uniform(-noise.l, noise.l);
    }
    v = std::clamp(v, 0.0, min_budget);
  }
  return out;
}

/// Where MLCM's Phase-3 prices come from.
struct PriceSource {
  enum class Kind { kFresh, kExternal, kPerturbed } kind = Kind::kFresh;
  PriceVector prices;  // kExternal and kPerturbed
  PriceNoise noise;    // kPerturbed
};

struct MechanismConfig {
  MechanismKind kind = MechanismKind::kCm;
  int n_queries = 10;
  QueryAlgorithm algorithm = QueryAlgorithm::kObis;
  /// Per-student opt-in for MLCM; empty means everybody opts in.
  std::vector<bool> opt_in;
  PriceSource price_source;
  TrainConfig train;
  int n_t2 = 100;
  int n_t3 = 100;
  ProjectionConfig projection;
  CourseMatchConfig course_match;
  /// Students whose model is already known (for example a live session);
  /// they skip Phases 2 and 4. Empty, or one entry per student.
  std::vector<std::optional<MonotoneValueModel>> fixed_models;
  std::uint64_t seed = 0;
};

inline void validate(const MechanismConfig& cfg, int n) {
  if (cfg.n_queries < 0) throw ValidationError("n_queries must be nonnegative");
  if (!cfg.opt_in.empty() && static_cast<int>(cfg.opt_in.size()) != n) {
    throw ValidationError("opt_in must have one entry per student");
  }
  if (!cfg.fixed_models.empty() && static_cast<int>(cfg.fixed_models.size()) != n) {
    throw ValidationError("fixed_models must have one entry per student");
  }
  validate(cfg.train);
}

struct RunResult {
  MechanismKind kind = MechanismKind::kCm;
  Allocation allocation;
  PriceVector prices;
  std::vector<double> utilities;
  /// Clearing error of the Phase-3 prices (MLCM) and of the final Stage 1.
  std::optional<double> phase3_alpha;
  std::optional<double> stage1_alpha;
  double stage1_target = 0.0;
  std::vector<nlohmann::json> elicitation_logs;

  double average() const {
    double s = 0.0;
    for (double u : utilities) s += u;
    return utilities.empty() ? 0.0 : s / static_cast<double>(utilities.size());
  }
  double minimum() const {
    return utilities.empty() ? 0.0 : *std::min_element(utilities.begin(), utilities.end());
  }
};

inline void to_json(nlohmann::json& j, const RunResult& r) {
  j = nlohmann::json{{"mechanism", to_string(r.kind)},
                     {"allocation", r.allocation},
                     {"prices", r.prices},
                     {"utilities", r.utilities},
                     {"average", r.average()},
                     {"minimum", r.minimum()},
                     {"stage1_target", r.stage1_target},
                     {"elicitation_logs", r.elicitation_logs}};
  j["phase3_alpha"] = r.phase3_alpha ? nlohmann::json(*r.phase3_alpha) : nlohmann::json();
  j["stage1_alpha"] = r.stage1_alpha ? nlohmann::json(*r.stage1_alpha) : nlohmann::json();
}

/// Owned value tables plus the Economy view over them.
struct TabulatedEconomy {
  std::vector<ValueTable> tables;
  Economy economy;
};

inline TabulatedEconomy tabulate_economy(const Instance& inst, std::vector<ValueTable> tables) {
  TabulatedEconomy out;
  out.tables = std::move(tables);
  out.economy.catalog = &inst.catalog;
  out.economy.budgets = inst.budgets;
  out.economy.k = inst.k();
  for (const auto& t : out.tables) out.economy.valuers.push_back(&t);
  return out;
}

inline ValueTable gui_table(const Instance& inst, const GuiReport& r) {
  return ValueTable(schedule_space(inst.perm, inst.m()), [&](Schedule x) { return eval_gui(r, x); });
}

inline ValueTable true_table(const Instance& inst, const TrueUtility& u) {
  return ValueTable(schedule_space(inst.perm, inst.m()), [&](Schedule x) { return eval_true(u, x); });
}

inline ValueTable model_table(const Instance& inst, const MonotoneValueModel& model) {
  return ValueTable(schedule_space(inst.perm, inst.m()), [&](Schedule x) { return model(x); });
}

inline std::vector<double> true_utilities(const Instance& inst, const Allocation& a) {
  std::vector<double> u(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) u[i] = eval_true(inst.truth[i], a[i]);
  return u;
}

/// Per-student seed shared by every mechanism that trains or queries
/// student i.
inline std::uint64_t student_seed(std::uint64_t seed, int i) {
  return derive_seed(seed, stream::kSession, static_cast<std::uint64_t>(i));
}

inline bool opted_in(const MechanismConfig& cfg, int i) {
  return cfg.opt_in.empty() || cfg.opt_in[static_cast<std::size_t>(i)];
}

inline const std::optional<MonotoneValueModel>& fixed_model(const MechanismConfig& cfg, int i) {
  static const std::optional<MonotoneValueModel> none;
  return cfg.fixed_models.empty() ? none : cfg.fixed_models[static_cast<std::size_t>(i)];
}

/// Phases 2 and 4 for the opted-in students at the given prices: models
/// built from reports, then refined by n_queries simulated comparisons.
struct ElicitedModels {
  std::vector<std::optional<MonotoneValueModel>> models;
  std::vector<nlohmann::json> logs;
};

inline std::vector<std::optional<MonotoneValueModel>> initial_models(const Instance& inst,
                                                                     const MechanismConfig& cfg,
                                                                     std::vector<CardinalDataset>* cards) {
  std::vector<std::optional<MonotoneValueModel>> models(static_cast<std::size_t>(inst.n()));
  if (cards) cards->assign(static_cast<std::size_t>(inst.n()), {});
  for (int i = 0; i < inst.n(); ++i) {
    if (!opted_in(cfg, i)) continue;
    if (fixed_model(cfg, i)) {
      models[static_cast<std::size_t>(i)] = fixed_model(cfg, i);
      continue;
    }
    auto [model, card] = initial_model(inst.reports[static_cast<std::size_t>(i)], inst.perm,
                                       cfg.train, student_seed(cfg.seed, i), cfg.n_t2, cfg.n_t3);
    models[static_cast<std::size_t>(i)] = std::move(model);
    if (cards) (*cards)[static_cast<std::size_t>(i)] = std::move(card);
  }
  return models;
}

inline ElicitedModels elicit(const Instance& inst, const MechanismConfig& cfg,
                             std::vector<std::optional<MonotoneValueModel>> models,
                             std::vector<CardinalDataset> cards, const PriceVector& prices) {
  ElicitedModels out;
  out.logs.assign(static_cast<std::size_t>(inst.n()), nlohmann::json::array());
  for (int i = 0; i < inst.n(); ++i) {
    const auto si = static_cast<std::size_t>(i);
    if (!models[si] || cfg.n_queries == 0 || fixed_model(cfg, i)) continue;
    SessionConfig sc{cfg.algorithm, cfg.train, student_seed(cfg.seed, i)};
    ElicitationSession session(sc, std::move(*models[si]), std::move(cards[si]), prices,
                               inst.budgets[si], inst.perm);
    simulate_student(inst.truth[si], inst.mistakes.p_m, session, cfg.n_queries,
                     derive_seed(student_seed(cfg.seed, i), stream::kProbe));
    models[si] = session.model();
    out.logs[si] = session.log();
  }
  out.models = std::move(models);
  return out;
}

/// Value tables for Phase 3 and Phase 5: models for students that have
/// one, GUI reports for everybody else.
inline std::vector<ValueTable> mixed_tables(const Instance& inst,
                                            const std::vector<std::optional<MonotoneValueModel>>& models) {
  std::vector<ValueTable> tables;
  tables.reserve(static_cast<std::size_t>(inst.n()));
  for (int i = 0; i < inst.n(); ++i) {
    const auto si = static_cast<std::size_t>(i);
    tables.push_back(models[si] ? model_table(inst, *models[si]) : gui_table(inst, inst.reports[si]));
  }
  return tables;
}

inline RunResult finish_course_match(const Instance& inst, const MechanismConfig& cfg,
                                     std::vector<ValueTable> tables, RunResult r) {
  auto econ = tabulate_economy(inst, std::move(tables));
  auto cm = course_match(econ.economy, cfg.course_match);
  r.allocation = cm.allocation;
  r.prices = cm.prices;
  r.stage1_alpha = cm.stage1_report.alpha;
  r.stage1_target = cm.stage1_report.target;
  r.utilities = true_utilities(inst, r.allocation);
  return r;
}

/// Stage-1 prices of plain CM (reports only) on this instance.
inline PriceVector cm_stage1_prices(const Instance& inst, const MechanismConfig& cfg) {
  std::vector<ValueTable> tables;
  for (const auto& rep : inst.reports) tables.push_back(gui_table(inst, rep));
  auto econ = tabulate_economy(inst, std::move(tables));
  return stage1_search(econ.economy, cfg.course_match.stage1).prices;
}

/// Phase-3 prices for MLCM given the Phase-2 models. An external or
/// perturbed source with no prices given falls back to CM's Stage-1 prices
/// on the same instance (a stand-in for last year's prices).
inline PriceVector phase3_prices(const Instance& inst, const MechanismConfig& cfg,
                                 const std::vector<std::optional<MonotoneValueModel>>& models,
                                 std::optional<double>* alpha) {
  auto given = [&] {
    if (!cfg.price_source.prices.empty()) {
      if (static_cast<int>(cfg.price_source.prices.size()) != inst.m()) {
        throw ValidationError("external price vector does not match the catalog");
      }
      return cfg.price_source.prices;
    }
    return cm_stage1_prices(inst, cfg);
  };
  switch (cfg.price_source.kind) {
    case PriceSource::Kind::kExternal:
      return given();
    case PriceSource::Kind::kPerturbed:
      return perturb_prices(given(), cfg.price_source.noise,
                            *std::min_element(inst.budgets.begin(), inst.budgets.end()), cfg.seed);
    case PriceSource::Kind::kFresh:
      break;
  }
  auto econ = tabulate_economy(inst, mixed_tables(inst, models));
  auto s1 = stage1_search(econ.economy, cfg.course_match.stage1);
  if (alpha) *alpha = s1.report.alpha;
  return s1.prices;
}

/// Runs one mechanism on one instance. Utilities always come from the
/// true preferences.
inline RunResult run_mechanism(const Instance& inst, const MechanismConfig& cfg) {
  validate(cfg, inst.n());
  const auto n = static_cast<std::size_t>(inst.n());
  RunResult r;
  r.kind = cfg.kind;
  std::vector<ValueTable> tables;
  switch (cfg.kind) {
    case MechanismKind::kCm:
      for (const auto& rep : inst.reports) tables.push_back(gui_table(inst, rep));
      return finish_course_match(inst, cfg, std::move(tables), std::move(r));
    case MechanismKind::kCmNoMistakes:
      for (const auto& rep : inst.exact_reports) tables.push_back(gui_table(inst, rep));
      return finish_course_match(inst, cfg, std::move(tables), std::move(r));
    case MechanismKind::kCmStar:
      for (const auto& u : inst.truth) tables.push_back(true_table(inst, u));
      return finish_course_match(inst, cfg, std::move(tables), std::move(r));
    case MechanismKind::kRsd: {
      for (const auto& rep : inst.reports) tables.push_back(gui_table(inst, rep));
      std::vector<const ValueTable*> ptrs;
      for (const auto& t : tables) ptrs.push_back(&t);
      r.allocation = rsd(inst.catalog, ptrs, derive_seed(cfg.seed, stream::kRsd));
      r.prices.assign(static_cast<std::size_t>(inst.m()), 0.0);
      r.utilities = true_utilities(inst, r.allocation);
      return r;
    }
    case MechanismKind::kMlcm:
    case MechanismKind::kMlcmProjected:
      break;
  }
  std::vector<CardinalDataset> cards;
  auto models = initial_models(inst, cfg, &cards);
  std::optional<double> alpha3;
  const PriceVector p3 = phase3_prices(inst, cfg, models, &alpha3);
  r.phase3_alpha = alpha3;
  auto elicited = elicit(inst, cfg, std::move(models), std::move(cards), p3);
  r.elicitation_logs = std::move(elicited.logs);
  if (cfg.kind == MechanismKind::kMlcm) {
    return finish_course_match(inst, cfg, mixed_tables(inst, elicited.models), std::move(r));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (elicited.models[i]) {
      const GuiReport projected = project_to_gui(
          *elicited.models[i], derive_seed(student_seed(cfg.seed, static_cast<int>(i)), stream::kProjection),
          cfg.projection);
      tables.push_back(gui_table(inst, projected));
    } else {
      tables.push_back(gui_table(inst, inst.reports[i]));
    }
  }
  return finish_course_match(inst, cfg, std::move(tables), std::move(r));
}

}  // namespace mlcm
