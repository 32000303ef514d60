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

// Batch experiments: mechanism comparisons normalized by CM* welfare,
// mistake-scale sweeps, the opt-in study and the query-algorithm study.
// Every cell of a batch runs on the same instances.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlcm/elicitation.hpp"
#include "mlcm/mechanism.hpp"
#include "mlcm/reporting.hpp"

namespace mlcm {

/// One mechanism column of an experiment.
struct MechanismSpec {
  std::string label;
  MechanismConfig config;
};

struct ExperimentSpec {
  InstanceConfig instance;
  std::vector<MechanismSpec> mechanisms;
  int n_instances = 50;
  std::uint64_t seed = 0;
  /// Pre-built instances (for example loaded from disk); when nonempty they
  /// replace the generated ones and n_instances is ignored.
  std::vector<Instance> instances;
};

inline void validate(const ExperimentSpec& spec) {
  if (spec.instances.empty() && spec.n_instances < 1) throw ValidationError("n_instances must be at least 1");
  if (spec.mechanisms.empty()) throw ValidationError("at least one mechanism is required");
}

/// Seed of instance `index` in a batch; shared by every cell.
inline std::uint64_t instance_seed(std::uint64_t base, int index) {
  return base + static_cast<std::uint64_t>(index);
}

/// Mechanism config with the per-instance seeds filled in.
inline MechanismConfig seeded(MechanismConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.course_match.stage1.seed = seed;
  cfg.course_match.stage3_seed = seed;
  return cfg;
}

struct RawRow {
  int instance = 0;
  std::string label;
  double average = 0.0;  // true utility, not normalized
  double minimum = 0.0;
  double stage1_alpha = 0.0;
  double seconds = 0.0;
  std::string error;  // nonempty when the run failed
};

struct MetricsRow {
  std::string label;
  int n_runs = 0;
  int n_failed = 0;
  double avg_mean = 0.0;  // percent of the CM* batch mean
  double avg_ci = 0.0;
  double min_mean = 0.0;
  double min_ci = 0.0;
  double seconds_mean = 0.0;
};

struct ExperimentResult {
  double normalizer = 0.0;  // batch mean of CM* average utility
  std::vector<MetricsRow> metrics;
  std::vector<RawRow> raw;
};

/// Mean and half-width of a normal-approximation 95% CI.
inline std::pair<double, double> mean_ci(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(xs.size()))};
}

inline constexpr const char* kCmStarLabel = "CM*";

/// Runs every mechanism on every instance. A CM* column is added when the
/// spec has none, because it is the normalizer. Failed runs are recorded
/// and skipped.
inline ExperimentResult run_experiment(ExperimentSpec spec) {
  validate(spec);
  bool has_star = false;
  for (const auto& m : spec.mechanisms) has_star = has_star || m.config.kind == MechanismKind::kCmStar;
  if (!has_star) {
    MechanismConfig star;
    star.kind = MechanismKind::kCmStar;
    spec.mechanisms.insert(spec.mechanisms.begin(), MechanismSpec{kCmStarLabel, star});
  }
  ExperimentResult out;
  const int n_instances = spec.instances.empty() ? spec.n_instances : static_cast<int>(spec.instances.size());
  for (int idx = 0; idx < n_instances; ++idx) {
    const std::uint64_t s = instance_seed(spec.seed, idx);
    const Instance inst = spec.instances.empty() ? make_instance(spec.instance, s)
                                                 : spec.instances[static_cast<std::size_t>(idx)];
    for (const auto& m : spec.mechanisms) {
      RawRow row;
      row.instance = idx;
      row.label = m.label;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const RunResult r = run_mechanism(inst, seeded(m.config, s));
        row.average = r.average();
        row.minimum = r.minimum();
        row.stage1_alpha = r.stage1_alpha.value_or(0.0);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.raw.push_back(std::move(row));
    }
  }
  std::vector<double> star_avgs;
  for (const auto& r : out.raw) {
    for (const auto& m : spec.mechanisms) {
      if (m.label == r.label && m.config.kind == MechanismKind::kCmStar && r.error.empty()) {
        star_avgs.push_back(r.average);
      }
    }
  }
  out.normalizer = mean_ci(star_avgs).first;
  if (!(out.normalizer > 0.0)) throw ValidationError("CM* produced no positive welfare to normalize by");
  for (const auto& m : spec.mechanisms) {
    MetricsRow row;
    row.label = m.label;
    std::vector<double> avgs, mins, secs;
    for (const auto& r : out.raw) {
      if (r.label != m.label) continue;
      if (!r.error.empty()) {
        ++row.n_failed;
        continue;
      }
      avgs.push_back(100.0 * r.average / out.normalizer);
      mins.push_back(100.0 * r.minimum / out.normalizer);
      secs.push_back(r.seconds);
    }
    row.n_runs = static_cast<int>(avgs.size());
    std::tie(row.avg_mean, row.avg_ci) = mean_ci(avgs);
    std::tie(row.min_mean, row.min_ci) = mean_ci(mins);
    row.seconds_mean = mean_ci(secs).first;
    out.metrics.push_back(row);
  }
  return out;
}

/// Fixed-precision formatting so reruns are byte-identical.
inline std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// Quotes a CSV field when needed.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Metrics CSV. Timings are excluded so the file is reproducible; see
/// timing_csv.
inline std::string metrics_csv(const ExperimentResult& r, const std::string& extra_header = "",
                               const std::string& extra_value = "") {
  std::ostringstream os;
  if (!extra_header.empty()) os << extra_header << ',';
  os << "mechanism,n_runs,n_failed,avg_norm,avg_ci95,min_norm,min_ci95,normalizer,ci_method\n";
  for (const auto& m : r.metrics) {
    if (!extra_header.empty()) os << extra_value << ',';
    os << csv_field(m.label) << ',' << m.n_runs << ',' << m.n_failed << ',' << fmt(m.avg_mean, 4)
       << ',' << fmt(m.avg_ci, 4) << ',' << fmt(m.min_mean, 4) << ',' << fmt(m.min_ci, 4) << ','
       << fmt(r.normalizer, 4) << ",normal\n";
  }
  return os.str();
}

inline std::string raw_csv(const ExperimentResult& r, const std::string& extra_header = "",
                           const std::string& extra_value = "") {
  std::ostringstream os;
  if (!extra_header.empty()) os << extra_header << ',';
  os << "instance,mechanism,average,minimum,avg_norm,min_norm,stage1_alpha,error\n";
  for (const auto& row : r.raw) {
    if (!extra_header.empty()) os << extra_value << ',';
    os << row.instance << ',' << csv_field(row.label) << ',' << fmt(row.average) << ','
       << fmt(row.minimum) << ',' << fmt(100.0 * row.average / r.normalizer, 4) << ','
       << fmt(100.0 * row.minimum / r.normalizer, 4) << ',' << fmt(row.stage1_alpha) << ','
       << csv_field(row.error) << '\n';
  }
  return os.str();
}

inline std::string timing_csv(const ExperimentResult& r) {
  std::ostringstream os;
  os << "mechanism,seconds_mean\n";
  for (const auto& m : r.metrics) os << csv_field(m.label) << ',' << fmt(m.seconds_mean, 3) << '\n';
  return os.str();
}

/// The same experiment at several mistake scales gamma.
struct SweepResult {
  std::vector<double> gammas;
  std::vector<ExperimentResult> cells;

  std::string metrics_csv() const {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::string block = mlcm::metrics_csv(cells[c], "gamma", fmt(gammas[c], 3));
      if (c > 0) block = block.substr(block.find('\n') + 1);
      out += block;
    }
    return out;
  }
  std::string raw_csv() const {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::string block = mlcm::raw_csv(cells[c], "gamma", fmt(gammas[c], 3));
      if (c > 0) block = block.substr(block.find('\n') + 1);
      out += block;
    }
    return out;
  }
};

inline SweepResult gamma_sweep(const ExperimentSpec& spec, const std::vector<double>& gammas) {
  SweepResult out;
  for (double g : gammas) {
    ExperimentSpec cell = spec;
    cell.instance.mistakes.gamma = g;
    out.gammas.push_back(g);
    out.cells.push_back(run_experiment(cell));
  }
  return out;
}

enum class OptInMode { kNobodyElse, kEverybodyElse };

inline OptInMode parse_opt_in_mode(const std::string& s) {
  if (s == "nobody-else" || s == "NOBODY_ELSE") return OptInMode::kNobodyElse;
  if (s == "everybody-else" || s == "EVERYBODY_ELSE") return OptInMode::kEverybodyElse;
  throw ValidationError("unknown opt-in mode: " + s);
}

struct OptInRow {
  int instance = 0;
  int student = 0;
  double u_cm = 0.0;
  double u_mlcm = 0.0;
  /// +1 MLCM preferred, -1 CM preferred, 0 indifferent.
  int preferred = 0;
  double gain = 0.0;  // relative, percent
};

struct OptInSummary {
  double share_mlcm = 0.0;  // percent
  double share_cm = 0.0;
  double share_indifferent = 0.0;
  double expected_gain = 0.0;  // percent
  double gain_if_mlcm = 0.0;
  double gain_if_cm = 0.0;
};

struct OptInResult {
  std::vector<OptInRow> rows;
  OptInSummary summary;
};

inline OptInSummary summarize(const std::vector<OptInRow>& rows) {
  OptInSummary s;
  if (rows.empty()) return s;
  int n_ml = 0, n_cm = 0, n_in = 0;
  double g_all = 0.0, g_ml = 0.0, g_cm = 0.0;
  for (const auto& r : rows) {
    g_all += r.gain;
    if (r.preferred > 0) {
      ++n_ml;
      g_ml += r.gain;
    } else if (r.preferred < 0) {
      ++n_cm;
      g_cm += r.gain;
    } else {
      ++n_in;
    }
  }
  const double n = static_cast<double>(rows.size());
  s.share_mlcm = 100.0 * n_ml / n;
  s.share_cm = 100.0 * n_cm / n;
  s.share_indifferent = 100.0 * n_in / n;
  s.expected_gain = g_all / n;
  s.gain_if_mlcm = n_ml ? g_ml / n_ml : 0.0;
  s.gain_if_cm = n_cm ? g_cm / n_cm : 0.0;
  return s;
}

/// Would a student gain from opting into the ML feature? The student is a
/// price taker at the prices that arise when the others' choice is fixed:
/// CM prices when nobody else opts in, MLCM prices (everyone in) otherwise.
/// The CM schedule is the report's demand at those prices; the MLCM
/// schedule is the demand of the student's model after n_queries
/// comparisons asked at the same prices. With no queries the ML feature
/// learns nothing and the student stays with the report.
inline OptInResult opt_in_study(const ExperimentSpec& spec, const MechanismConfig& mlcm, OptInMode mode) {
  validate(spec);
  OptInResult out;
  for (int idx = 0; idx < spec.n_instances; ++idx) {
    const std::uint64_t s = instance_seed(spec.seed, idx);
    const Instance inst = make_instance(spec.instance, s);
    MechanismConfig cfg = seeded(mlcm, s);
    cfg.kind = MechanismKind::kMlcm;
    cfg.opt_in.clear();
    PriceVector prices;
    if (mode == OptInMode::kNobodyElse) {
      MechanismConfig cm = cfg;
      cm.kind = MechanismKind::kCm;
      prices = run_mechanism(inst, cm).prices;
    } else {
      prices = run_mechanism(inst, cfg).prices;
    }
    std::vector<CardinalDataset> cards;
    auto models = initial_models(inst, cfg, &cards);
    auto elicited = elicit(inst, cfg, std::move(models), std::move(cards), prices);
    for (int i = 0; i < inst.n(); ++i) {
      const auto si = static_cast<std::size_t>(i);
      const ValueTable gui = gui_table(inst, inst.reports[si]);
      const Schedule x_cm = gui.demand(prices, inst.budgets[si]);
      Schedule x_ml = x_cm;
      if (cfg.n_queries > 0 && elicited.models[si]) {
        x_ml = argmax_model(*elicited.models[si], prices, inst.budgets[si], inst.perm);
      }
      OptInRow row;
      row.instance = idx;
      row.student = i;
      row.u_cm = eval_true(inst.truth[si], x_cm);
      row.u_mlcm = eval_true(inst.truth[si], x_ml);
      row.preferred = row.u_mlcm > row.u_cm ? 1 : (row.u_mlcm < row.u_cm ? -1 : 0);
      row.gain = row.u_cm > 0.0 ? 100.0 * (row.u_mlcm - row.u_cm) / row.u_cm : 0.0;
      out.rows.push_back(row);
    }
  }
  out.summary = summarize(out.rows);
  return out;
}

inline std::string opt_in_rows_csv(const OptInResult& r) {
  std::ostringstream os;
  os << "instance,student,u_cm,u_mlcm,preferred,gain_pct\n";
  for (const auto& row : r.rows) {
    os << row.instance << ',' << row.student << ',' << fmt(row.u_cm) << ',' << fmt(row.u_mlcm) << ','
       << (row.preferred > 0 ? "MLCM" : row.preferred < 0 ? "CM" : "indifferent") << ','
       << fmt(row.gain, 4) << '\n';
  }
  return os.str();
}

inline std::string opt_in_summary_csv(const OptInSummary& s) {
  std::ostringstream os;
  os << "pref_mlcm_pct,pref_cm_pct,indifferent_pct,expected_gain_pct,gain_if_mlcm_pct,gain_if_cm_pct\n";
  os << fmt(s.share_mlcm, 3) << ',' << fmt(s.share_cm, 3) << ',' << fmt(s.share_indifferent, 3) << ','
     << fmt(s.expected_gain, 3) << ',' << fmt(s.gain_if_mlcm, 3) << ',' << fmt(s.gain_if_cm, 3) << '\n';
  return os.str();
}

/// Per query index: mean ordinal dataset size and the fraction of answers
/// that agreed with the model's prediction at query time.
struct QueryCurve {
  QueryAlgorithm algorithm = QueryAlgorithm::kObis;
  std::vector<double> ordinal_size;
  std::vector<double> agreement;
  std::vector<int> n_students;
};

/// Simulates every student of every instance with each algorithm, asking
/// at the Phase-3 prices of MLCM on that instance.
inline std::vector<QueryCurve> query_algorithm_study(const ExperimentSpec& spec,
                                                     const MechanismConfig& base, int n_queries,
                                                     const std::vector<QueryAlgorithm>& algorithms) {
  validate(spec);
  std::vector<QueryCurve> curves;
  for (auto a : algorithms) {
    QueryCurve c;
    c.algorithm = a;
    c.ordinal_size.assign(static_cast<std::size_t>(n_queries), 0.0);
    c.agreement.assign(static_cast<std::size_t>(n_queries), 0.0);
    c.n_students.assign(static_cast<std::size_t>(n_queries), 0);
    curves.push_back(std::move(c));
  }
  for (int idx = 0; idx < spec.n_instances; ++idx) {
    const std::uint64_t s = instance_seed(spec.seed, idx);
    const Instance inst = make_instance(spec.instance, s);
    MechanismConfig cfg = seeded(base, s);
    cfg.kind = MechanismKind::kMlcm;
    cfg.opt_in.clear();
    std::vector<CardinalDataset> cards;
    const auto models = initial_models(inst, cfg, &cards);
    const PriceVector prices = phase3_prices(inst, cfg, models, nullptr);
    for (auto& curve : curves) {
      for (int i = 0; i < inst.n(); ++i) {
        const auto si = static_cast<std::size_t>(i);
        SessionConfig sc{curve.algorithm, cfg.train, student_seed(cfg.seed, i)};
        ElicitationSession session(sc, *models[si], cards[si], prices, inst.budgets[si], inst.perm);
        const auto trace = simulate_student(inst.truth[si], inst.mistakes.p_m, session, n_queries,
                                            derive_seed(student_seed(cfg.seed, i), stream::kProbe));
        for (std::size_t t = 0; t < trace.ordinal_size.size(); ++t) {
          curve.ordinal_size[t] += trace.ordinal_size[t];
          curve.agreement[t] += trace.agreed[t] ? 1.0 : 0.0;
          curve.n_students[t] += 1;
        }
      }
    }
  }
  for (auto& c : curves) {
    for (std::size_t t = 0; t < c.ordinal_size.size(); ++t) {
      if (c.n_students[t] == 0) continue;
      c.ordinal_size[t] /= c.n_students[t];
      c.agreement[t] /= c.n_students[t];
    }
  }
  return curves;
}

inline std::string query_curves_csv(const std::vector<QueryCurve>& curves) {
  std::ostringstream os;
  os << "algorithm,query,n_students,mean_ordinal_size,agreement\n";
  for (const auto& c : curves) {
    for (std::size_t t = 0; t < c.ordinal_size.size(); ++t) {
      os << to_string(c.algorithm) << ',' << (t + 1) << ',' << c.n_students[t] << ','
         << fmt(c.ordinal_size[t], 4) << ',' << fmt(c.agreement[t], 4) << '\n';
    }
  }
  return os.str();
}

}  // namespace mlcm
