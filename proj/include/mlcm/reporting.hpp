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

// The GUI reporting language (base values plus pairwise adjustments), the
// four-parameter mistake model and the calibration metrics.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mlcm/catalog.hpp"
#include "mlcm/prefgen.hpp"
#include "mlcm/rng.hpp"

namespace mlcm {

inline constexpr double kMaxBaseValue = 100.0;
inline constexpr double kMaxAdjustment = 200.0;
/// Smallest value a student can enter for a course; 0 means "not reported".
inline constexpr double kMinReportedBase = 1.0;

struct Adjustment {
  int a = 0;  // a < b
  int b = 0;
  double value = 0.0;

  std::uint32_t mask() const { return (1U << a) | (1U << b); }
  bool operator==(const Adjustment&) const = default;
};

struct GuiReport {
  std::vector<double> base;
  std::vector<Adjustment> adjustments;  // sorted by (a, b)

  int m() const { return static_cast<int>(base.size()); }
  int n_reported() const {
    return static_cast<int>(std::count_if(base.begin(), base.end(),
                                          [](double v) { return v > 0.0; }));
  }
  bool reported(int j) const { return base[static_cast<std::size_t>(j)] > 0.0; }
  /// Adjustment value for {a, b}, or 0 when none was reported.
  double adjustment(int a, int b) const {
    if (a > b) std::swap(a, b);
    for (const auto& adj : adjustments) {
      if (adj.a == a && adj.b == b) return adj.value;
    }
    return 0.0;
  }

  bool operator==(const GuiReport&) const = default;
};

/// Schedule value under a GUI report: reported bases plus every adjustment
/// whose two courses are both taken.
inline double eval_gui(const GuiReport& r, Schedule x) {
  double total = 0.0;
  for (std::uint32_t b = x.bits(); b != 0; b &= b - 1) {
    total += r.base[static_cast<std::size_t>(std::countr_zero(b))];
  }
  for (const auto& adj : r.adjustments) {
    const std::uint32_t mask = adj.mask();
    if ((x.bits() & mask) == mask) total += adj.value;
  }
  return total;
}

/// Pairwise interaction of the true utility: u({a,b}) - u({a}) - u({b}) for
/// every pair where it is nonzero.
inline std::vector<Adjustment> true_adjustments(const TrueUtility& u) {
  std::map<std::pair<int, int>, double> acc;
  auto add_pairs = [&](std::uint32_t set, double amount) {
    if (amount == 0.0) return;
    const auto members = Schedule(set).courses();
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t k = i + 1; k < members.size(); ++k) {
        acc[{members[i], members[k]}] += amount;
      }
    }
  };
  for (const auto& c : u.centers) {
    add_pairs(c.complements, c.psi_at(2) * u.base_mass(c.complements));
    add_pairs(c.substitutes, c.xi_at(2) * u.base_mass(c.substitutes));
  }
  std::vector<Adjustment> out;
  for (const auto& [key, value] : acc) {
    if (value != 0.0) out.push_back({key.first, key.second, value});
  }
  return out;
}

struct MistakeProfile {
  double f_b = 0.0;
  double f_a = 0.0;
  double sigma_b = 0.0;
  double sigma_a = 0.0;
  double gamma = 1.0;
  /// Probability that a comparison answer is flipped.
  double p_m = 0.0;

  static MistakeProfile none() { return {}; }
  static MistakeProfile popular9() { return {0.5, 0.48, 23.0, 0.2, 1.0, 0.0}; }
  static MistakeProfile popular6() { return {0.5, 0.4825, 17.0, 0.2, 1.0, 0.0}; }

  MistakeProfile scaled() const {
    return {std::clamp(f_b * gamma, 0.0, 1.0),
            std::clamp(f_a * gamma, 0.0, 1.0),
            sigma_b * gamma,
            sigma_a * gamma,
            1.0,
            p_m};
  }
};

inline void validate(const MistakeProfile& mp) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(mp.f_b) || !prob(mp.f_a) || !prob(mp.p_m)) {
    throw ValidationError("mistake probabilities must be in [0, 1]");
  }
  if (mp.sigma_b < 0.0 || mp.sigma_a < 0.0 || mp.gamma < 0.0) {
    throw ValidationError("mistake noise levels and gamma must be nonnegative");
  }
}

/// Simulated GUI report. The student forgets f_b of their positively valued
/// courses (lowest true value first; the fractional part is rounded
/// stochastically), adds Gaussian noise to the rest, then forgets each
/// remaining adjustment w.p. f_a and scales the survivors by 1 + U[-s, s].
inline GuiReport report(const TrueUtility& u, const MistakeProfile& profile,
                        std::uint64_t seed) {
  validate(profile);
  const MistakeProfile mp = profile.scaled();
  Rng rng(seed);
  const int m = u.m();
  GuiReport r;
  r.base.assign(static_cast<std::size_t>(m), 0.0);

  std::vector<int> positive;
  for (int j = 0; j < m; ++j) {
    if (u.base[static_cast<std::size_t>(j)] > 0.0) positive.push_back(j);
  }
  std::stable_sort(positive.begin(), positive.end(), [&](int a, int b) {
    return u.base[static_cast<std::size_t>(a)] < u.base[static_cast<std::size_t>(b)];
  });
  const double expected = mp.f_b * static_cast<double>(positive.size());
  int forget = static_cast<int>(std::floor(expected));
  if (rng.bernoulli(expected - forget)) ++forget;
  forget = std::min(forget, static_cast<int>(positive.size()));

  std::vector<int> kept(positive.begin() + forget, positive.end());
  std::sort(kept.begin(), kept.end());
  for (int j : kept) {
    const double noise = mp.sigma_b > 0.0 ? rng.normal(0.0, mp.sigma_b) : 0.0;
    r.base[static_cast<std::size_t>(j)] =
        std::clamp(u.base[static_cast<std::size_t>(j)] + noise, kMinReportedBase, kMaxBaseValue);
  }

  for (const auto& adj : true_adjustments(u)) {
    if (!r.reported(adj.a) || !r.reported(adj.b)) continue;
    if (rng.bernoulli(mp.f_a)) continue;
    const double eps = mp.sigma_a > 0.0 ? rng.uniform(-mp.sigma_a, mp.sigma_a) : 0.0;
    r.adjustments.push_back(
        {adj.a, adj.b, std::clamp(adj.value * (1.0 + eps), -kMaxAdjustment, kMaxAdjustment)});
  }
  return r;
}

/// Summary statistics matching the calibration table: reported bases,
/// adjustment counts, comparison accuracy and median disagreement gap.
struct CalibrationReport {
  int n_students = 0;
  double reported_mean = 0.0;
  double reported_ci = 0.0;
  double low_mean = 0.0;   // reported base in (0, 50)
  double high_mean = 0.0;  // reported base in [50, 100]
  double adj_mean = 0.0;
  double adj_ci = 0.0;
  double adj_median = 0.0;
  int adj_min = 0;
  int adj_max = 0;
  double accuracy = 0.0;  // percent
  double accuracy_ci = 0.0;
  double disagreement_median = 0.0;  // percent, negative
  int n_probes = 0;
  int n_disagreements = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline double ci95(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Uniform random permissible schedule with exactly `size` courses
/// (rejection sampling; falls back to the largest size found).
inline Schedule random_schedule(Rng& rng, const Permissibility& perm, int m, int size) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Schedule x;
    for (int idx : rng.sample(m, std::min(size, m))) x = x.with(idx);
    if (is_permissible(x, perm)) return x;
  }
  throw ValidationError("could not sample a permissible schedule of size " +
                        std::to_string(size));
}

/// Probe comparison between two schedules as seen through a report.
/// `truth_prefers_a` is the student's true answer. Returns the relative
/// gap in percent (negative when the report disagrees) or nullopt when the
/// report agrees.
inline std::optional<double> disagreement_gap(double gui_a, double gui_b, bool truth_prefers_a) {
  const double preferred = truth_prefers_a ? gui_a : gui_b;
  const double other = truth_prefers_a ? gui_b : gui_a;
  if (preferred > other) return std::nullopt;
  const double scale = std::max(std::abs(gui_a), std::abs(gui_b));
  return scale > 0.0 ? 100.0 * (preferred - other) / scale : 0.0;
}

/// Comparison probes used to measure report accuracy. Each probe pits a
/// "received" schedule, drawn uniformly from the top `top_fraction` of the
/// student's k-course schedules by true utility, against a uniformly drawn
/// k-course schedule.
struct ProbeConfig {
  int n_pairs = 25;
  double top_fraction = 0.592;
};

/// Utility threshold above which a k-course schedule counts as "top".
inline double top_threshold(const TrueUtility& u, int k, double top_fraction) {
  std::vector<double> values;
  for (Schedule x : schedule_space(u.perm, u.m())->schedules) {
    if (x.size() == k) values.push_back(eval_true(u, x));
  }
  if (values.empty()) throw ValidationError("no permissible schedule of probe size");
  const auto n_top = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(values.size()))), 1,
      values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n_top - 1),
                   values.end(), std::greater<>());
  return values[n_top - 1];
}

/// Runs the mistake model over all students and probes each report.
/// Student i uses report seed derive_seed(seed, kReport, i) and probe
/// stream derive_seed(seed, kProbe, i).
inline CalibrationReport calibration_metrics(const std::vector<TrueUtility>& students,
                                             const MistakeProfile& mp, const ProbeConfig& probes,
                                             std::uint64_t seed) {
  if (!(probes.top_fraction > 0.0 && probes.top_fraction <= 1.0)) {
    throw ValidationError("probe top_fraction must be in (0, 1]");
  }
  CalibrationReport out;
  out.n_students = static_cast<int>(students.size());
  std::vector<double> reported, low, high, adj, correct, gaps;
  for (std::size_t i = 0; i < students.size(); ++i) {
    const TrueUtility& u = students[i];
    const GuiReport r = report(u, mp, derive_seed(seed, stream::kReport, i));
    int n_low = 0, n_high = 0;
    for (double v : r.base) {
      if (v <= 0.0) continue;
      (v < 50.0 ? n_low : n_high)++;
    }
    reported.push_back(n_low + n_high);
    low.push_back(n_low);
    high.push_back(n_high);
    adj.push_back(static_cast<double>(r.adjustments.size()));

    if (probes.n_pairs <= 0) continue;
    Rng probe(derive_seed(seed, stream::kProbe, i));
    const int k = std::min(u.perm.max_courses, u.m());
    const double threshold = top_threshold(u, k, probes.top_fraction);
    for (int t = 0; t < probes.n_pairs; ++t) {
      Schedule a = random_schedule(probe, u.perm, u.m(), k);
      while (eval_true(u, a) < threshold) a = random_schedule(probe, u.perm, u.m(), k);
      Schedule b = a;
      while (b == a) b = random_schedule(probe, u.perm, u.m(), k);
      const double ta = eval_true(u, a), tb = eval_true(u, b);
      if (ta == tb) continue;
      auto gap = disagreement_gap(eval_gui(r, a), eval_gui(r, b), ta > tb);
      correct.push_back(gap ? 0.0 : 1.0);
      if (gap) gaps.push_back(*gap);
    }
  }
  out.reported_mean = mean_of(reported);
  out.reported_ci = ci95(reported);
  out.low_mean = mean_of(low);
  out.high_mean = mean_of(high);
  out.adj_mean = mean_of(adj);
  out.adj_ci = ci95(adj);
  out.adj_median = median(adj);
  if (!adj.empty()) {
    out.adj_min = static_cast<int>(*std::min_element(adj.begin(), adj.end()));
    out.adj_max = static_cast<int>(*std::max_element(adj.begin(), adj.end()));
  }
  out.accuracy = correct.empty() ? std::nan("") : 100.0 * mean_of(correct);
  out.accuracy_ci = 100.0 * ci95(correct);
  out.disagreement_median = median(gaps);
  out.n_probes = static_cast<int>(correct.size());
  out.n_disagreements = static_cast<int>(gaps.size());
  return out;
}

inline std::string calibration_csv_header() {
  return "n_students,reported_mean,reported_ci,low_mean,high_mean,adj_mean,adj_ci,"
         "adj_median,adj_min,adj_max,accuracy,accuracy_ci,disagreement_median";
}

inline std::string to_csv_row(const CalibrationReport& c) {
  std::ostringstream os;
  os.precision(6);
  os << c.n_students << ',' << c.reported_mean << ',' << c.reported_ci << ',' << c.low_mean
     << ',' << c.high_mean << ',' << c.adj_mean << ',' << c.adj_ci << ',' << c.adj_median << ','
     << c.adj_min << ',' << c.adj_max << ',' << c.accuracy << ',' << c.accuracy_ci << ','
     << c.disagreement_median;
  return os.str();
}

inline void to_json(nlohmann::json& j, const GuiReport& r) {
  j = nlohmann::json{{"base", nlohmann::json::object()}, {"adj", nlohmann::json::array()}};
  for (int c = 0; c < r.m(); ++c) {
    if (r.reported(c)) j["base"][std::to_string(c)] = r.base[static_cast<std::size_t>(c)];
  }
  for (const auto& a : r.adjustments) j["adj"].push_back({a.a, a.b, a.value});
}

/// Needs the catalog size since unreported courses are omitted.
inline GuiReport gui_report_from_json(const nlohmann::json& j, int m) {
  GuiReport r;
  r.base.assign(static_cast<std::size_t>(m), 0.0);
  for (const auto& [key, value] : j.at("base").items()) {
    std::size_t used = 0;
    int c = -1;
    try {
      c = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || c < 0 || c >= m) {
      throw ValidationError("base value key out of range: " + key);
    }
    const double v = value.get<double>();
    if (!(v >= 0.0 && v <= kMaxBaseValue)) {
      throw ValidationError("base value must be in [0, 100]");
    }
    r.base[static_cast<std::size_t>(c)] = v;
  }
  if (j.contains("adj")) {
    for (const auto& e : j.at("adj")) {
      if (!e.is_array() || e.size() != 3) throw ValidationError("adjustment must be [j, j', value]");
      int a = e[0].get<int>();
      int b = e[1].get<int>();
      const double v = e[2].get<double>();
      if (a == b || a < 0 || b < 0 || a >= m || b >= m) {
        throw ValidationError("adjustment must name two distinct courses");
      }
      if (!(v >= -kMaxAdjustment && v <= kMaxAdjustment)) {
        throw ValidationError("adjustment must be in [-200, 200]");
      }
      if (a > b) std::swap(a, b);
      auto dup = std::find_if(r.adjustments.begin(), r.adjustments.end(),
                              [&](const Adjustment& x) { return x.a == a && x.b == b; });
      if (dup != r.adjustments.end()) throw ValidationError("duplicate adjustment");
      r.adjustments.push_back({a, b, v});
    }
  }
  std::sort(r.adjustments.begin(), r.adjustments.end(), [](const auto& x, const auto& y) {
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  return r;
}

inline void to_json(nlohmann::json& j, const MistakeProfile& mp) {
  j = nlohmann::json{{"f_b", mp.f_b},         {"f_a", mp.f_a},     {"sigma_b", mp.sigma_b},
                     {"sigma_a", mp.sigma_a}, {"gamma", mp.gamma}, {"p_m", mp.p_m}};
}

inline void from_json(const nlohmann::json& j, MistakeProfile& mp) {
  mp = MistakeProfile{};
  mp.f_b = j.value("f_b", 0.0);
  mp.f_a = j.value("f_a", 0.0);
  mp.sigma_b = j.value("sigma_b", 0.0);
  mp.sigma_a = j.value("sigma_a", 0.0);
  mp.gamma = j.value("gamma", 1.0);
  mp.p_m = j.value("p_m", 0.0);
  validate(mp);
}

}  // namespace mlcm
