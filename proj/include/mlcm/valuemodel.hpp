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

// Monotone value network (one hidden layer of bounded ReLUs with
// nonnegative weights), its cardinal/ordinal training data and the mixed
// two-phase trainer.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mlcm/catalog.hpp"
#include "mlcm/reporting.hpp"
#include "mlcm/rng.hpp"
#include "mlcm/valuation.hpp"

namespace mlcm {

enum class ModelKind { kMvnn, kLinear };

/// Parameters live in one flat vector so the optimizer can treat them
/// uniformly. MVNN layout: W (hidden x m, row-major), b (hidden), w (hidden).
/// Linear layout: one coefficient per course.
///
/// Outputs are in normalized units; operator() multiplies by `scale`.
class MonotoneValueModel {
 public:
  MonotoneValueModel() = default;

  static MonotoneValueModel mvnn(int m, int hidden, std::uint64_t seed) {
    if (m < 1 || hidden < 1) throw ValidationError("model dimensions must be positive");
    MonotoneValueModel model;
    model.kind_ = ModelKind::kMvnn;
    model.m_ = m;
    model.hidden_ = hidden;
    model.params_.assign(static_cast<std::size_t>(hidden * m + 2 * hidden), 0.0);
    Rng rng(seed);
    const double in_bound = 1.0 / std::sqrt(static_cast<double>(m));
    const double out_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (int i = 0; i < hidden * m; ++i) model.params_[static_cast<std::size_t>(i)] = rng.uniform(0.0, in_bound);
    for (int h = 0; h < hidden; ++h) {
      model.params_[static_cast<std::size_t>(model.w_offset() + h)] = rng.uniform(0.0, out_bound);
    }
    return model;
  }

  static MonotoneValueModel linear(int m, std::vector<double> coefficients = {}) {
    MonotoneValueModel model;
    model.kind_ = ModelKind::kLinear;
    model.m_ = m;
    if (coefficients.empty()) coefficients.assign(static_cast<std::size_t>(m), 0.0);
    if (static_cast<int>(coefficients.size()) != m) {
      throw ValidationError("linear model needs one coefficient per course");
    }
    model.params_ = std::move(coefficients);
    return model;
  }

  ModelKind kind() const { return kind_; }
  int m() const { return m_; }
  int hidden() const { return hidden_; }
  double cutoff() const { return cutoff_; }
  double scale() const { return scale_; }
  void set_scale(double s) { scale_ = s; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& params() { return params_; }

  /// Normalized output.
  double raw(Schedule x) const {
    if (kind_ == ModelKind::kLinear) {
      double total = 0.0;
      for (std::uint32_t bits = x.bits(); bits != 0; bits &= bits - 1) {
        total += params_[static_cast<std::size_t>(std::countr_zero(bits))];
      }
      return total;
    }
    double total = 0.0;
    for (int h = 0; h < hidden_; ++h) {
      total += params_[static_cast<std::size_t>(w_offset() + h)] * activation(pre(h, x));
    }
    return total;
  }

  double operator()(Schedule x) const { return scale_ * raw(x); }

  /// g += coef * d raw(x) / d params.
  void accumulate_grad(Schedule x, double coef, std::vector<double>& g) const {
    if (kind_ == ModelKind::kLinear) {
      for (std::uint32_t bits = x.bits(); bits != 0; bits &= bits - 1) {
        g[static_cast<std::size_t>(std::countr_zero(bits))] += coef;
      }
      return;
    }
    for (int h = 0; h < hidden_; ++h) {
      const double z = pre(h, x);
      const double w = params_[static_cast<std::size_t>(w_offset() + h)];
      g[static_cast<std::size_t>(w_offset() + h)] += coef * activation(z);
      if (z <= 0.0 || z >= cutoff_) continue;  // flat region
      const double dz = coef * w;
      g[static_cast<std::size_t>(b_offset() + h)] += dz;
      for (std::uint32_t bits = x.bits(); bits != 0; bits &= bits - 1) {
        g[static_cast<std::size_t>(h * m_ + std::countr_zero(bits))] += dz;
      }
    }
  }

  /// Restores the structural constraints: nonnegative weights and
  /// nonpositive hidden biases (hence M(empty) = 0 and monotonicity).
  void project() {
    if (kind_ == ModelKind::kLinear) return;
    for (int i = 0; i < hidden_ * m_; ++i) {
      params_[static_cast<std::size_t>(i)] = std::max(0.0, params_[static_cast<std::size_t>(i)]);
    }
    for (int h = 0; h < hidden_; ++h) {
      auto& b = params_[static_cast<std::size_t>(b_offset() + h)];
      b = std::min(0.0, b);
      auto& w = params_[static_cast<std::size_t>(w_offset() + h)];
      w = std::max(0.0, w);
    }
  }

  bool operator==(const MonotoneValueModel&) const = default;

  friend void to_json(nlohmann::json& j, const MonotoneValueModel& model);
  friend void from_json(const nlohmann::json& j, MonotoneValueModel& model);

 private:
  int b_offset() const { return hidden_ * m_; }
  int w_offset() const { return hidden_ * m_ + hidden_; }

  double pre(int h, Schedule x) const {
    double z = params_[static_cast<std::size_t>(b_offset() + h)];
    const double* row = params_.data() + static_cast<std::ptrdiff_t>(h) * m_;
    for (std::uint32_t bits = x.bits(); bits != 0; bits &= bits - 1) {
      z += row[std::countr_zero(bits)];
    }
    return z;
  }

  double activation(double z) const { return std::min(cutoff_, std::max(0.0, z)); }

  ModelKind kind_ = ModelKind::kMvnn;
  int m_ = 0;
  int hidden_ = 0;
  double cutoff_ = 1.0;
  double scale_ = 1.0;
  std::vector<double> params_;
};

struct CardinalSample {
  Schedule x;
  double y = 0.0;
};
using CardinalDataset = std::vector<CardinalSample>;

/// (preferred, dispreferred) pairs.
using OrdinalDataset = std::vector<std::pair<Schedule, Schedule>>;

struct TrainConfig {
  int t_reg = 100;
  double eta_reg = 1e-2;
  double lambda_reg = 1e-3;
  int t_class = 10;
  double eta_class = 1e-2;
  double lambda_class = 0.0;
  int hidden = 20;
  int layers = 1;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.t_reg < 0 || cfg.t_class < 0) throw ValidationError("epochs must be nonnegative");
  if (cfg.eta_reg <= 0 || cfg.eta_class <= 0) throw ValidationError("learning rates must be positive");
  if (cfg.lambda_reg < 0 || cfg.lambda_class < 0) throw ValidationError("L2 weights must be nonnegative");
  if (cfg.hidden < 1) throw ValidationError("hidden width must be positive");
  if (cfg.layers != 1) throw CapabilityError("only single-hidden-layer networks are supported");
}

/// Value assumed for a course the student did not report: the mean of the
/// prior conditioned on being below every reported base, i.e. h/2 with h
/// the lowest nonzero reported base (100 when nothing was reported).
inline double imputed_base(const GuiReport& r) {
  double h = kMaxBaseValue;
  for (double v : r.base) {
    if (v > 0.0) h = std::min(h, v);
  }
  return h / 2.0;
}

/// Cardinal training data from a GUI report:
///   T1  every reported singleton and every reported pair that carries an
///       adjustment;
///   T2  up to n_t2 distinct k-course bundles of reported courses;
///   T3  up to n_t3 distinct k-course bundles with at least one unreported
///       course, valued with imputed bases.
/// Bundles are permissible; k shrinks when too few courses are available.
inline CardinalDataset build_cardinal(const GuiReport& r, const Permissibility& perm, int n_t2,
                                      int n_t3, std::uint64_t seed) {
  const int m = r.m();
  CardinalDataset out;
  std::vector<int> reported, unreported;
  for (int j = 0; j < m; ++j) (r.reported(j) ? reported : unreported).push_back(j);
  if (reported.empty() && n_t3 <= 0) {
    throw ValidationError("empty report and no imputed bundles requested");
  }
  for (int j : reported) {
    const Schedule x = Schedule().with(j);
    if (is_permissible(x, perm)) out.push_back({x, eval_gui(r, x)});
  }
  for (const auto& adj : r.adjustments) {
    const Schedule x = Schedule(adj.mask());
    if (is_permissible(x, perm)) out.push_back({x, eval_gui(r, x)});
  }

  Rng rng(seed);
  std::set<std::uint32_t> seen;
  for (const auto& s : out) seen.insert(s.x.bits());
  auto draw = [&](const std::vector<int>& pool, int size, auto&& extra_ok) {
    // Rejection sampling with a bounded number of attempts; callers accept
    // fewer bundles than requested on small pools.
    for (int attempt = 0; attempt < 200; ++attempt) {
      Schedule x;
      for (int idx : rng.sample(static_cast<int>(pool.size()), size)) {
        x = x.with(pool[static_cast<std::size_t>(idx)]);
      }
      if (!is_permissible(x, perm) || !extra_ok(x) || seen.count(x.bits())) continue;
      seen.insert(x.bits());
      return std::optional<Schedule>(x);
    }
    return std::optional<Schedule>();
  };

  const int k2 = std::min<int>(perm.max_courses, static_cast<int>(reported.size()));
  if (k2 > 0) {
    for (int t = 0; t < n_t2; ++t) {
      auto x = draw(reported, k2, [](Schedule) { return true; });
      if (!x) break;
      out.push_back({*x, eval_gui(r, *x)});
    }
  }

  if (!unreported.empty()) {
    GuiReport imputed = r;
    const double fill = imputed_base(r);
    for (int j : unreported) imputed.base[static_cast<std::size_t>(j)] = fill;
    std::uint32_t unreported_mask = 0;
    for (int j : unreported) unreported_mask |= 1U << j;
    std::vector<int> all(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) all[static_cast<std::size_t>(j)] = j;
    const int k3 = std::min(perm.max_courses, m);
    for (int t = 0; t < n_t3; ++t) {
      auto x = draw(all, k3, [&](Schedule s) { return (s.bits() & unreported_mask) != 0; });
      if (!x) break;
      out.push_back({*x, eval_gui(imputed, *x)});
    }
  }
  return out;
}

/// Cardinal loss on normalized targets: mean |f(x) - y/scale| + lambda |theta|^2.
/// When `grad` is given it receives the (sub)gradient.
inline double cardinal_loss(const MonotoneValueModel& model, const CardinalDataset& data,
                            double lambda, std::vector<double>* grad) {
  const auto& theta = model.params();
  if (grad) grad->assign(theta.size(), 0.0);
  double loss = 0.0;
  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  for (const auto& s : data) {
    const double err = model.raw(s.x) - s.y / model.scale();
    loss += std::abs(err) / n;
    if (grad && err != 0.0) model.accumulate_grad(s.x, (err > 0 ? 1.0 : -1.0) / n, *grad);
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    loss += lambda * theta[i] * theta[i];
    if (grad) (*grad)[i] += 2.0 * lambda * theta[i];
  }
  return loss;
}

inline double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Ordinal loss: mean binary cross-entropy of sigma(M(a) - M(b)) against
/// label 1 for every (a preferred to b) pair, plus lambda |theta|^2. The
/// difference is taken in utility units, so pairs already ordered by a
/// clear margin stop pulling on the parameters.
inline double ordinal_loss(const MonotoneValueModel& model, const OrdinalDataset& data,
                           double lambda, std::vector<double>* grad) {
  const auto& theta = model.params();
  if (grad) grad->assign(theta.size(), 0.0);
  double loss = 0.0;
  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  for (const auto& [a, b] : data) {
    const double d = model(a) - model(b);
    loss += softplus(-d) / n;
    if (grad) {
      const double dd = model.scale() * (sigmoid(d) - 1.0) / n;
      model.accumulate_grad(a, dd, *grad);
      model.accumulate_grad(b, -dd, *grad);
    }
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    loss += lambda * theta[i] * theta[i];
    if (grad) (*grad)[i] += 2.0 * lambda * theta[i];
  }
  return loss;
}

/// Full-batch ADAM with projection after each step.
class Adam {
 public:
  explicit Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& theta, const std::vector<double>& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g[i] * g[i];
      theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

/// Loss trace of one train() call, for diagnostics and tests.
struct TrainTrace {
  std::vector<double> reg_loss;
  std::vector<double> class_loss;
};

/// Two-phase training, warm-started from the current parameters: t_reg
/// epochs on the cardinal loss, then t_class epochs on the ordinal loss,
/// each phase with a fresh optimizer. Targets are normalized by the largest
/// absolute cardinal target.
inline TrainTrace train(MonotoneValueModel& model, const CardinalDataset& card,
                        const OrdinalDataset& ord, const TrainConfig& cfg) {
  if (card.empty()) throw ValidationError("cardinal dataset must be nonempty");
  validate(cfg);
  double scale = 0.0;
  for (const auto& s : card) scale = std::max(scale, std::abs(s.y));
  model.set_scale(scale > 0.0 ? scale : 1.0);

  TrainTrace trace;
  std::vector<double> g;
  {
    Adam opt(model.params().size(), cfg.eta_reg);
    for (int e = 0; e < cfg.t_reg; ++e) {
      trace.reg_loss.push_back(cardinal_loss(model, card, cfg.lambda_reg, &g));
      opt.step(model.params(), g);
      model.project();
    }
  }
  if (!ord.empty()) {
    Adam opt(model.params().size(), cfg.eta_class);
    for (int e = 0; e < cfg.t_class; ++e) {
      trace.class_loss.push_back(ordinal_loss(model, ord, cfg.lambda_class, &g));
      opt.step(model.params(), g);
      model.project();
    }
  }
  return trace;
}

/// Model values for every schedule of a space, in space order.
inline std::vector<double> tabulate(const MonotoneValueModel& model, const ScheduleSpace& space) {
  std::vector<double> out(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) out[i] = model(space.schedules[i]);
  return out;
}

/// Best affordable, permissible schedule not in `exclude` (empty schedule
/// when everything is excluded).
inline Schedule argmax_model(const MonotoneValueModel& model, const PriceVector& p, double budget,
                             const Permissibility& perm,
                             const std::vector<Schedule>& exclude = {}) {
  auto space = schedule_space(perm, model.m());
  auto best = argmax_scan(
      *space, [&](Schedule x) { return model(x); }, p, budget,
      [&](Schedule x) { return std::find(exclude.begin(), exclude.end(), x) != exclude.end(); });
  return best.value_or(Schedule{});
}

struct ProjectionConfig {
  int k_samples = 1000;
  int max_iters = 5000;
  double tolerance = 1e-7;
};

/// Projects a learned value function back into the GUI language: fits
/// base values and pairwise adjustments to the model's values on uniformly
/// random bundles by box-constrained least squares (accelerated projected
/// gradient on the normal equations).
inline GuiReport project_to_gui(const MonotoneValueModel& model, std::uint64_t seed,
                                const ProjectionConfig& cfg = {}) {
  const int m = model.m();
  const int n_feat = m + m * (m - 1) / 2;
  if (cfg.k_samples < n_feat) {
    throw ValidationError("projection needs at least m + C(m,2) samples");
  }
  // Pair feature index for (a, b), a < b.
  std::vector<int> pair_index(static_cast<std::size_t>(m * m), -1);
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) {
      pair_index[static_cast<std::size_t>(a * m + b)] = m + static_cast<int>(pairs.size());
      pairs.emplace_back(a, b);
    }
  }
  Rng rng(seed);
  const std::size_t nf = static_cast<std::size_t>(n_feat);
  std::vector<double> gram(nf * nf, 0.0), rhs(nf, 0.0);
  std::vector<int> active;
  for (int s = 0; s < cfg.k_samples; ++s) {
    Schedule x;
    for (int j = 0; j < m; ++j) {
      if (rng.bernoulli(0.5)) x = x.with(j);
    }
    const double y = model(x);
    active.clear();
    const auto courses = x.courses();
    for (int a : courses) active.push_back(a);
    for (std::size_t i = 0; i < courses.size(); ++i) {
      for (std::size_t k = i + 1; k < courses.size(); ++k) {
        active.push_back(pair_index[static_cast<std::size_t>(courses[i] * m + courses[k])]);
      }
    }
    for (int f : active) {
      rhs[static_cast<std::size_t>(f)] += y;
      for (int g2 : active) gram[static_cast<std::size_t>(f) * nf + static_cast<std::size_t>(g2)] += 1.0;
    }
  }
  const double inv_n = 1.0 / cfg.k_samples;
  for (auto& v : gram) v *= inv_n;
  for (auto& v : rhs) v *= inv_n;

  std::vector<double> lo(nf), hi(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const bool base = f < static_cast<std::size_t>(m);
    lo[f] = base ? 0.0 : -kMaxAdjustment;
    hi[f] = base ? kMaxBaseValue : kMaxAdjustment;
  }

  // Lipschitz constant of the gradient: largest eigenvalue of the Gram
  // matrix, by power iteration.
  std::vector<double> v(nf, 1.0), w(nf);
  double lipschitz = 1.0;
  for (int it = 0; it < 200; ++it) {
    double norm = 0.0;
    for (std::size_t i = 0; i < nf; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < nf; ++k) acc += gram[i * nf + k] * v[k];
      w[i] = acc;
      norm += acc * acc;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    for (std::size_t i = 0; i < nf; ++i) v[i] = w[i] / norm;
    lipschitz = norm;
  }
  const double step = 1.0 / lipschitz;

  std::vector<double> theta(nf, 0.0), prev(nf, 0.0), z(nf, 0.0), grad(nf);
  double t = 1.0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    for (std::size_t i = 0; i < nf; ++i) {
      double acc = -rhs[i];
      const double* row = gram.data() + i * nf;
      for (std::size_t k = 0; k < nf; ++k) acc += row[k] * z[k];
      grad[i] = acc;
    }
    prev = theta;
    double change = 0.0;
    for (std::size_t i = 0; i < nf; ++i) {
      theta[i] = std::clamp(z[i] - step * grad[i], lo[i], hi[i]);
      change = std::max(change, std::abs(theta[i] - prev[i]));
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (std::size_t i = 0; i < nf; ++i) z[i] = theta[i] + ((t - 1.0) / t_next) * (theta[i] - prev[i]);
    t = t_next;
    if (change < cfg.tolerance) break;
  }

  GuiReport r;
  r.base.assign(theta.begin(), theta.begin() + m);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const double value = theta[static_cast<std::size_t>(m) + p];
    if (value != 0.0) r.adjustments.push_back({pairs[p].first, pairs[p].second, value});
  }
  return r;
}

inline void to_json(nlohmann::json& j, const MonotoneValueModel& model) {
  j = nlohmann::json{{"kind", model.kind_ == ModelKind::kLinear ? "linear" : "mvnn"},
                     {"m", model.m_},
                     {"hidden", model.hidden_},
                     {"t", model.cutoff_},
                     {"scale", model.scale_}};
  if (model.kind_ == ModelKind::kLinear) {
    j["coefficients"] = model.params_;
    return;
  }
  const auto begin = model.params_.begin();
  j["W"] = std::vector<double>(begin, begin + model.b_offset());
  j["b"] = std::vector<double>(begin + model.b_offset(), begin + model.w_offset());
  j["w"] = std::vector<double>(begin + model.w_offset(), model.params_.end());
}

inline void from_json(const nlohmann::json& j, MonotoneValueModel& model) {
  const std::string kind = j.at("kind").get<std::string>();
  model.m_ = j.at("m").get<int>();
  model.hidden_ = j.value("hidden", 0);
  model.cutoff_ = j.value("t", 1.0);
  model.scale_ = j.value("scale", 1.0);
  model.params_.clear();
  if (kind == "linear") {
    model.kind_ = ModelKind::kLinear;
    model.params_ = j.at("coefficients").get<std::vector<double>>();
    if (static_cast<int>(model.params_.size()) != model.m_) {
      throw ValidationError("linear checkpoint has wrong coefficient count");
    }
    return;
  }
  if (kind != "mvnn") throw ValidationError("unknown model kind: " + kind);
  model.kind_ = ModelKind::kMvnn;
  auto W = j.at("W").get<std::vector<double>>();
  auto b = j.at("b").get<std::vector<double>>();
  auto w = j.at("w").get<std::vector<double>>();
  if (static_cast<int>(W.size()) != model.m_ * model.hidden_ ||
      static_cast<int>(b.size()) != model.hidden_ || static_cast<int>(w.size()) != model.hidden_) {
    throw ValidationError("checkpoint dimensions do not match");
  }
  model.params_ = std::move(W);
  model.params_.insert(model.params_.end(), b.begin(), b.end());
  model.params_.insert(model.params_.end(), w.begin(), w.end());
}

/// Checkpoint text. nlohmann/json prints the shortest decimal form that
/// parses back to the same double, so the round trip is bit-exact.
inline std::string checkpoint_text(const MonotoneValueModel& model) {
  return nlohmann::json(model).dump();
}

}  // namespace mlcm
