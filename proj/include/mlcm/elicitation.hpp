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

// Comparison-query elicitation: online binary insertion sort (OBIS) and
// the naive and random baselines, plus a simulated student.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mlcm/catalog.hpp"
#include "mlcm/prefgen.hpp"
#include "mlcm/reporting.hpp"
#include "mlcm/rng.hpp"
#include "mlcm/valuation.hpp"
#include "mlcm/valuemodel.hpp"

namespace mlcm {

/// Out-of-order or duplicate interaction with a session.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class QueryAlgorithm { kObis, kNaive, kRandom };

inline std::string to_string(QueryAlgorithm a) {
  switch (a) {
    case QueryAlgorithm::kObis: return "obis";
    case QueryAlgorithm::kNaive: return "naive";
    case QueryAlgorithm::kRandom: return "random";
  }
  return "?";
}

inline QueryAlgorithm parse_query_algorithm(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "obis") return QueryAlgorithm::kObis;
  if (s == "naive") return QueryAlgorithm::kNaive;
  if (s == "random") return QueryAlgorithm::kRandom;
  throw ValidationError("unknown query algorithm: " + s);
}

struct ComparisonQuery {
  int id = 0;
  Schedule left;
  Schedule right;
};

/// Unordered pair key.
inline std::uint64_t pair_key(Schedule a, Schedule b) {
  const std::uint32_t lo = std::min(a.bits(), b.bits());
  const std::uint32_t hi = std::max(a.bits(), b.bits());
  return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

/// Binary insertion sort driven by externally answered comparisons.
/// `sorted` is best first. The search bounds are recomputed from the
/// answered comparisons on every call, so no incremental (L, R) state
/// exists to drift out of sync.
class BinaryInsertionSorter {
 public:
  const std::vector<Schedule>& sorted() const { return sorted_; }
  const std::optional<Schedule>& pending() const { return pending_; }
  bool contains(Schedule x) const {
    return std::find(sorted_.begin(), sorted_.end(), x) != sorted_.end();
  }

  void seed(Schedule first) {
    if (!sorted_.empty()) throw ProtocolError("sorter already seeded");
    sorted_.push_back(first);
  }

  void set_pending(Schedule x) {
    if (contains(x)) throw ProtocolError("pending schedule is already sorted");
    pending_ = x;
  }

  /// Records the winner of comparison {a, b}.
  void record(Schedule a, Schedule b, Schedule winner) {
    if (winner != a && winner != b) throw ProtocolError("winner must be one of the compared schedules");
    answers_[pair_key(a, b)] = winner;
  }

  std::optional<Schedule> answered(Schedule a, Schedule b) const {
    auto it = answers_.find(pair_key(a, b));
    if (it == answers_.end()) return std::nullopt;
    return it->second;
  }

  struct Search {
    int lo = 0;
    int hi = -1;
    /// Next element of `sorted` to compare against, if the position is not
    /// yet determined.
    std::optional<int> mid;
  };

  /// Binary search for the pending element's slot using known answers.
  Search search() const {
    if (!pending_) throw ProtocolError("no pending schedule");
    Search s;
    s.lo = 0;
    s.hi = static_cast<int>(sorted_.size()) - 1;
    while (s.lo <= s.hi) {
      const int mid = (s.lo + s.hi) / 2;  // floor: ties go to the better half
      auto w = answered(*pending_, sorted_[static_cast<std::size_t>(mid)]);
      if (!w) {
        s.mid = mid;
        return s;
      }
      if (*w == *pending_) {
        s.hi = mid - 1;
      } else {
        s.lo = mid + 1;
      }
    }
    return s;
  }

  /// Inserts the pending element if its slot is determined.
  bool try_insert() {
    if (!pending_) return false;
    const Search s = search();
    if (s.mid) return false;
    sorted_.insert(sorted_.begin() + s.lo, *pending_);
    pending_.reset();
    return true;
  }

  /// All orderings implied by the sorted list.
  OrdinalDataset ordinal() const {
    OrdinalDataset out;
    for (std::size_t i = 0; i < sorted_.size(); ++i) {
      for (std::size_t k = i + 1; k < sorted_.size(); ++k) out.emplace_back(sorted_[i], sorted_[k]);
    }
    return out;
  }

 private:
  std::vector<Schedule> sorted_;
  std::optional<Schedule> pending_;
  std::map<std::uint64_t, Schedule> answers_;
};

struct SessionConfig {
  QueryAlgorithm algorithm = QueryAlgorithm::kObis;
  TrainConfig train;
  std::uint64_t seed = 0;
};

/// One student's elicitation state. The model passed in is the Phase-2
/// model (already trained on `card`); every answer that changes the ordinal
/// dataset triggers a warm-started retrain.
class ElicitationSession {
 public:
  ElicitationSession(SessionConfig cfg, MonotoneValueModel model, CardinalDataset card,
                     PriceVector prices, double budget, Permissibility perm)
      : cfg_(cfg),
        model_(std::move(model)),
        card_(std::move(card)),
        prices_(std::move(prices)),
        budget_(budget),
        perm_(std::move(perm)),
        rng_(derive_seed(cfg.seed, stream::kSession)) {
    if (static_cast<int>(prices_.size()) != model_.m()) {
      throw ValidationError("price vector does not match the model's course count");
    }
  }

  QueryAlgorithm algorithm() const { return cfg_.algorithm; }
  const MonotoneValueModel& model() const { return model_; }
  const PriceVector& prices() const { return prices_; }
  double budget() const { return budget_; }
  const Permissibility& perm() const { return perm_; }
  const CardinalDataset& cardinal() const { return card_; }
  const std::optional<ComparisonQuery>& outstanding() const { return outstanding_; }
  int n_answered() const { return n_answered_; }
  bool done() const { return done_; }
  const nlohmann::json& log() const { return log_; }

  /// OBIS: the sorted list. NAIVE: the queried schedules, champion first.
  /// RANDOM: empty.
  std::vector<Schedule> sorted() const {
    if (cfg_.algorithm == QueryAlgorithm::kObis) return sorter_.sorted();
    if (cfg_.algorithm == QueryAlgorithm::kNaive) return naive_queried_;
    return {};
  }

  OrdinalDataset ordinal() const {
    if (cfg_.algorithm == QueryAlgorithm::kObis) return sorter_.ordinal();
    return ordinal_;
  }

  /// Size of the ordinal dataset implied by the answers so far.
  int inferred_pairs() const { return static_cast<int>(ordinal().size()); }

  /// The next comparison, or nullopt when nothing affordable is left to ask.
  std::optional<ComparisonQuery> next_query() {
    if (outstanding_) throw ProtocolError("a query is already outstanding");
    if (done_) return std::nullopt;
    std::optional<std::pair<Schedule, Schedule>> pair;
    switch (cfg_.algorithm) {
      case QueryAlgorithm::kObis: pair = next_obis(); break;
      case QueryAlgorithm::kNaive: pair = next_naive(); break;
      case QueryAlgorithm::kRandom: pair = next_random(); break;
    }
    if (!pair) {
      done_ = true;
      return std::nullopt;
    }
    outstanding_ = ComparisonQuery{next_id_++, pair->first, pair->second};
    log_.push_back({{"type", "query"},
                    {"id", outstanding_->id},
                    {"left", outstanding_->left},
                    {"right", outstanding_->right}});
    return outstanding_;
  }

  void submit_answer(int query_id, Schedule winner) {
    if (!outstanding_) throw ProtocolError("no outstanding query");
    if (outstanding_->id != query_id) {
      throw ProtocolError("answer for query " + std::to_string(query_id) +
                          " but outstanding query is " + std::to_string(outstanding_->id));
    }
    const ComparisonQuery q = *outstanding_;
    if (winner != q.left && winner != q.right) {
      throw ProtocolError("winner must be one of the two compared schedules");
    }
    const Schedule loser = winner == q.left ? q.right : q.left;
    outstanding_.reset();
    ++n_answered_;
    log_.push_back({{"type", "answer"}, {"id", q.id}, {"winner", winner}});
    switch (cfg_.algorithm) {
      case QueryAlgorithm::kObis: answer_obis(q, winner); break;
      case QueryAlgorithm::kNaive: answer_naive(winner, loser); break;
      case QueryAlgorithm::kRandom:
        ordinal_.emplace_back(winner, loser);
        retrain();
        break;
    }
  }

  /// Model's preferred schedule at the session prices.
  Schedule predicted_best() const { return argmax_model(model_, prices_, budget_, perm_); }

 private:
  void retrain() { train(model_, card_, ordinal(), cfg_.train); }

  /// Highest-valued affordable nonempty schedule outside `excluded`.
  std::optional<Schedule> best_excluding(const std::unordered_set<std::uint32_t>& excluded) const {
    auto space = schedule_space(perm_, model_.m());
    auto best = argmax_scan(
        *space, [&](Schedule x) { return model_(x); }, prices_, budget_,
        [&](Schedule x) { return x.empty() || excluded.count(x.bits()) > 0; });
    return best;
  }

  std::optional<std::pair<Schedule, Schedule>> next_obis() {
    if (sorter_.sorted().empty()) {
      auto top1 = best_excluding({});
      if (!top1) return std::nullopt;
      auto top2 = best_excluding({top1->bits()});
      if (!top2) return std::nullopt;
      sorter_.seed(*top1);
      sorter_.set_pending(*top2);
    }
    if (!sorter_.pending()) return std::nullopt;
    const auto s = sorter_.search();
    // submit_answer inserts as soon as the slot is known, so a pending
    // element always has an open comparison here.
    const Schedule other = sorter_.sorted()[static_cast<std::size_t>(*s.mid)];
    return std::make_pair(*sorter_.pending(), other);
  }

  void answer_obis(const ComparisonQuery& q, Schedule winner) {
    sorter_.record(q.left, q.right, winner);
    if (!sorter_.try_insert()) return;
    retrain();
    std::unordered_set<std::uint32_t> excluded;
    for (Schedule x : sorter_.sorted()) excluded.insert(x.bits());
    if (auto next = best_excluding(excluded)) sorter_.set_pending(*next);
  }

  std::optional<std::pair<Schedule, Schedule>> next_naive() {
    if (naive_queried_.empty()) {
      auto top1 = best_excluding({});
      if (!top1) return std::nullopt;
      naive_queried_.push_back(*top1);
    }
    std::unordered_set<std::uint32_t> excluded;
    for (Schedule x : naive_queried_) excluded.insert(x.bits());
    auto challenger = best_excluding(excluded);
    if (!challenger) return std::nullopt;
    return std::make_pair(*challenger, naive_queried_.front());
  }

  void answer_naive(Schedule winner, Schedule loser) {
    const Schedule champion = naive_queried_.front();
    std::vector<std::pair<Schedule, Schedule>> fresh;
    if (winner != champion) {
      // The new schedule beats the champion and hence everything queried.
      for (Schedule x : naive_queried_) fresh.emplace_back(winner, x);
      naive_queried_.insert(naive_queried_.begin(), winner);
    } else {
      fresh.emplace_back(winner, loser);
      naive_queried_.push_back(loser);
    }
    for (const auto& p : fresh) {
      if (std::find(ordinal_.begin(), ordinal_.end(), p) == ordinal_.end()) ordinal_.push_back(p);
    }
    retrain();
  }

  std::optional<std::pair<Schedule, Schedule>> next_random() {
    if (!random_pool_) {
      random_pool_.emplace();
      for (Schedule x : schedule_space(perm_, model_.m())->schedules) {
        if (!x.empty() && affordable(x, prices_, budget_)) random_pool_->push_back(x);
      }
    }
    const std::size_t n = random_pool_->size();
    if (n < 2) return std::nullopt;
    const std::size_t total_pairs = n * (n - 1) / 2;
    if (random_asked_.size() >= total_pairs) return std::nullopt;
    for (;;) {
      const std::size_t i = rng_.index(n);
      std::size_t k = rng_.index(n - 1);
      if (k >= i) ++k;
      const Schedule a = (*random_pool_)[i], b = (*random_pool_)[k];
      if (random_asked_.insert(pair_key(a, b)).second) return std::make_pair(a, b);
    }
  }

  SessionConfig cfg_;
  MonotoneValueModel model_;
  CardinalDataset card_;
  PriceVector prices_;
  double budget_ = 1.0;
  Permissibility perm_;
  Rng rng_;

  BinaryInsertionSorter sorter_;
  std::vector<Schedule> naive_queried_;
  OrdinalDataset ordinal_;
  std::optional<std::vector<Schedule>> random_pool_;
  std::unordered_set<std::uint64_t> random_asked_;

  std::optional<ComparisonQuery> outstanding_;
  int next_id_ = 1;
  int n_answered_ = 0;
  bool done_ = false;
  nlohmann::json log_ = nlohmann::json::array();
};

/// Simulated student's answer: true preference; true ties go to the
/// schedule with the higher predicted value, then to the lexicographically
/// smaller one. With probability p_m the answer is flipped.
inline Schedule simulated_answer(const TrueUtility& u, const MonotoneValueModel& model,
                                 const ComparisonQuery& q, double p_m, Rng& rng) {
  const double ul = eval_true(u, q.left), ur = eval_true(u, q.right);
  Schedule pick;
  if (ul != ur) {
    pick = ul > ur ? q.left : q.right;
  } else {
    const double ml = model(q.left), mr = model(q.right);
    if (ml != mr) {
      pick = ml > mr ? q.left : q.right;
    } else {
      pick = lex_less(q.left, q.right) ? q.left : q.right;
    }
  }
  if (p_m > 0.0 && rng.bernoulli(p_m)) pick = pick == q.left ? q.right : q.left;
  return pick;
}

/// Model's prediction for a query, with the same tie rule as the answer.
inline Schedule predicted_winner(const MonotoneValueModel& model, const ComparisonQuery& q) {
  const double ml = model(q.left), mr = model(q.right);
  if (ml != mr) return ml > mr ? q.left : q.right;
  return lex_less(q.left, q.right) ? q.left : q.right;
}

struct SimulationTrace {
  /// Ordinal dataset size after each answer.
  std::vector<int> ordinal_size;
  /// Whether each answer agreed with the model's prediction at query time.
  std::vector<bool> agreed;
};

/// Lets a simulated student answer up to n_queries queries. Answer flips
/// draw from `answer_seed`.
inline SimulationTrace simulate_student(const TrueUtility& u, double p_m,
                                        ElicitationSession& session, int n_queries,
                                        std::uint64_t answer_seed) {
  SimulationTrace trace;
  Rng rng(answer_seed);
  for (int t = 0; t < n_queries; ++t) {
    auto q = session.next_query();
    if (!q) break;
    const Schedule predicted = predicted_winner(session.model(), *q);
    const Schedule winner = simulated_answer(u, session.model(), *q, p_m, rng);
    trace.agreed.push_back(predicted == winner);
    session.submit_answer(q->id, winner);
    trace.ordinal_size.push_back(session.inferred_pairs());
  }
  return trace;
}

/// Phase 2 for one student: cardinal dataset from the report, then a freshly
/// initialized MVNN trained on it.
inline std::pair<MonotoneValueModel, CardinalDataset> initial_model(const GuiReport& r,
                                                                    const Permissibility& perm,
                                                                    const TrainConfig& cfg,
                                                                    std::uint64_t seed,
                                                                    int n_t2 = 100,
                                                                    int n_t3 = 100) {
  CardinalDataset card = build_cardinal(r, perm, n_t2, n_t3, derive_seed(seed, stream::kCardinal));
  MonotoneValueModel model =
      MonotoneValueModel::mvnn(r.m(), cfg.hidden, derive_seed(seed, stream::kModelInit));
  train(model, card, {}, cfg);
  return {std::move(model), std::move(card)};
}

inline void to_json(nlohmann::json& j, const ComparisonQuery& q) {
  j = nlohmann::json{{"id", q.id}, {"left", q.left}, {"right", q.right}};
}

}  // namespace mlcm
