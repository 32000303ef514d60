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

// HTTP facade over elicitation sessions. Each session is persisted as an
// append-only JSON-lines event log and can be rebuilt by replaying it.
// Routing lives in Service::handle so it can be exercised without a socket;
// serve() binds it to cpp-httplib.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "mlcm/elicitation.hpp"
#include "mlcm/mechanism.hpp"
#include "mlcm/reporting.hpp"
#include "mlcm/valuemodel.hpp"

namespace mlcm {

/// Raised when a replayed log does not reproduce the recorded session.
class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServiceConfig {
  /// The simulated cohort; live sessions take over its student slots in
  /// creation order.
  Instance cohort;
  /// Prices shown to live students; empty means CM's Stage-1 prices on the
  /// cohort's reports.
  PriceVector prices;
  MechanismConfig mechanism;
  QueryAlgorithm algorithm = QueryAlgorithm::kObis;
  int max_queries = 10;
  /// Directory for the per-session logs; empty disables persistence.
  std::string data_dir;
  std::uint64_t seed = 0;
};

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

enum class SessionStatus { kReporting, kEliciting, kDone };

inline std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kReporting: return "REPORTING";
    case SessionStatus::kEliciting: return "ELICITING";
    case SessionStatus::kDone: return "DONE";
  }
  return "?";
}

inline std::string course_name(int j) { return "Course " + std::to_string(j + 1); }

inline nlohmann::json schedule_names(Schedule x) {
  nlohmann::json names = nlohmann::json::array();
  for (int j : x.courses()) names.push_back(course_name(j));
  return names;
}

class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.cohort.n() < 1) throw ValidationError("the cohort needs at least one student");
    if (cfg_.prices.empty()) cfg_.prices = cm_stage1_prices(cfg_.cohort, seeded_mechanism());
    if (static_cast<int>(cfg_.prices.size()) != cfg_.cohort.m()) {
      throw ValidationError("price vector does not match the catalog");
    }
    if (!cfg_.data_dir.empty()) std::filesystem::create_directories(cfg_.data_dir);
  }

  const ServiceConfig& config() const { return cfg_; }

  /// Routes one request. Never throws for client errors.
  HttpResult handle(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex kSession(R"(^/sessions/([A-Za-z0-9_-]+)/(report|next-query|answer|summary)$)");
    try {
      if (method == "POST" && path == "/sessions") return create(parse_body(body, true));
      if (method == "POST" && path == "/allocate") return allocate(parse_body(body, true));
      std::smatch m;
      if (std::regex_match(path, m, kSession)) {
        const std::string id = m[1], op = m[2];
        auto session = find(id);
        if (!session) return error(404, "unknown session " + id);
        std::unique_lock<std::mutex> lock(session->mu, std::try_to_lock);
        if (!lock.owns_lock()) return error(409, "session " + id + " is busy");
        if (method == "PUT" && op == "report") return submit_report(*session, parse_body(body, false));
        if (method == "GET" && op == "next-query") return next_query(*session);
        if (method == "POST" && op == "answer") return answer(*session, parse_body(body, false));
        if (method == "GET" && op == "summary") return summary(*session);
      }
      return error(404, "no route for " + method + " " + path);
    } catch (const ProtocolError& e) {
      return error(409, e.what());
    } catch (const ValidationError& e) {
      return error(422, e.what());
    } catch (const nlohmann::json::exception& e) {
      return error(422, std::string("malformed body: ") + e.what());
    }
  }

  /// Rebuilds every session found in the data directory by replaying its
  /// log; throws ReplayError when a log does not reproduce itself.
  void load() {
    if (cfg_.data_dir.empty()) return;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(cfg_.data_dir)) {
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      std::vector<nlohmann::json> events;
      for (std::string line; std::getline(in, line);) {
        if (!line.empty()) events.push_back(nlohmann::json::parse(line));
      }
      replay(events);
    }
  }

  /// Replays one session's events into a fresh session (not persisted
  /// again) and returns its id.
  std::string replay(const std::vector<nlohmann::json>& events) {
    if (events.empty() || events.front().at("type") != "create") {
      throw ReplayError("a session log must start with a create event");
    }
    std::shared_ptr<Session> s;
    for (const auto& ev : events) {
      const std::string type = ev.at("type");
      if (type == "create") {
        s = make_session(ev.at("id"), ev.at("slot"), ev.at("budget"));
      } else if (type == "report") {
        apply_report(*s, gui_report_from_json(ev.at("report"), cfg_.cohort.m()));
      } else if (type == "query") {
        auto q = s->session->next_query();
        if (!q || q->id != ev.at("id").get<int>() || nlohmann::json(q->left) != ev.at("left") ||
            nlohmann::json(q->right) != ev.at("right")) {
          throw ReplayError("replayed query differs from the log in session " + s->id);
        }
      } else if (type == "answer") {
        s->session->submit_answer(ev.at("query_id"), ev.at("winner").get<Schedule>());
      } else if (type == "checkpoint") {
        if (nlohmann::json(s->session->model()) != ev.at("model")) {
          throw ReplayError("replayed model differs from the checkpoint in session " + s->id);
        }
      } else {
        throw ReplayError("unknown event type " + type);
      }
    }
    s->events = events;
    std::lock_guard<std::mutex> lock(mu_);
    sessions_[s->id] = s;
    next_number_ = std::max(next_number_, number_of(s->id) + 1);
    return s->id;
  }

  /// The event log of a session, as persisted.
  std::vector<nlohmann::json> events(const std::string& id) {
    auto s = find(id);
    if (!s) throw ValidationError("unknown session " + id);
    std::lock_guard<std::mutex> lock(s->mu);
    return s->events;
  }

 private:
  struct Session {
    std::string id;
    int slot = 0;
    double budget = 1.0;
    int max_queries = 0;
    std::optional<GuiReport> report;
    std::optional<ElicitationSession> session;
    std::vector<nlohmann::json> events;
    std::mutex mu;

    SessionStatus status() const {
      if (!session) return SessionStatus::kReporting;
      const bool capped = session->n_answered() >= max_queries && !session->outstanding();
      return session->done() || capped ? SessionStatus::kDone : SessionStatus::kEliciting;
    }
  };

  static nlohmann::json parse_body(const std::string& body, bool optional) {
    if (body.empty() || body.find_first_not_of(" \t\r\n") == std::string::npos) {
      if (optional) return nlohmann::json::object();
      throw ValidationError("request body is required");
    }
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw ValidationError("request body is not valid JSON");
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  }

  static HttpResult error(int status, const std::string& msg) {
    return {status, nlohmann::json{{"error", msg}}};
  }

  static int number_of(const std::string& id) {
    try {
      return std::stoi(id.substr(1));
    } catch (const std::exception&) {
      return 0;
    }
  }

  MechanismConfig seeded_mechanism() const {
    MechanismConfig m = cfg_.mechanism;
    m.seed = cfg_.seed;
    m.course_match.stage1.seed = cfg_.seed;
    m.course_match.stage3_seed = cfg_.seed;
    return m;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::shared_ptr<Session> make_session(const std::string& id, int slot, double budget) {
    if (slot < 0 || slot >= cfg_.cohort.n()) throw ValidationError("slot out of range");
    if (budget <= 0) throw ValidationError("budget must be positive");
    auto s = std::make_shared<Session>();
    s->id = id;
    s->slot = slot;
    s->budget = budget;
    s->max_queries = cfg_.max_queries;
    return s;
  }

  void append(Session& s, nlohmann::json ev) {
    if (!cfg_.data_dir.empty()) {
      std::ofstream out(std::filesystem::path(cfg_.data_dir) / (s.id + ".jsonl"), std::ios::app);
      out << ev.dump() << '\n';
      out.flush();
      if (!out) throw std::runtime_error("cannot append to the log of session " + s.id);
    }
    s.events.push_back(std::move(ev));
  }

  void apply_report(Session& s, GuiReport r) {
    if (s.report) throw ProtocolError("a report was already submitted");
    const std::uint64_t seed = student_seed(cfg_.seed, s.slot);
    auto [model, card] = initial_model(r, cfg_.cohort.perm, cfg_.mechanism.train, seed,
                                       cfg_.mechanism.n_t2, cfg_.mechanism.n_t3);
    SessionConfig sc{cfg_.algorithm, cfg_.mechanism.train, seed};
    s.session.emplace(sc, std::move(model), std::move(card), cfg_.prices, s.budget, cfg_.cohort.perm);
    s.report = std::move(r);
  }

  nlohmann::json session_view(const Session& s) const {
    return nlohmann::json{{"id", s.id}, {"slot", s.slot}, {"budget", s.budget},
                          {"status", to_string(s.status())}};
  }

  HttpResult create(const nlohmann::json& body) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard<std::mutex> lock(mu_);
      const int number = next_number_++;
      char buf[16];
      std::snprintf(buf, sizeof buf, "s%04d", number);
      const int slot = (number - 1) % cfg_.cohort.n();
      const double budget = body.value("budget", cfg_.cohort.budgets[static_cast<std::size_t>(slot)]);
      s = make_session(buf, slot, budget);
      sessions_[s->id] = s;
    }
    std::lock_guard<std::mutex> lock(s->mu);
    append(*s, {{"type", "create"}, {"id", s->id}, {"slot", s->slot}, {"budget", s->budget}});
    nlohmann::json courses = nlohmann::json::array();
    for (const auto& c : cfg_.cohort.catalog.courses) {
      courses.push_back({{"id", c.id}, {"name", course_name(c.id)}, {"capacity", c.capacity},
                         {"price", cfg_.prices[static_cast<std::size_t>(c.id)]}});
    }
    auto view = session_view(*s);
    view["courses"] = courses;
    view["max_courses"] = cfg_.cohort.perm.max_courses;
    view["max_queries"] = cfg_.max_queries;
    return {201, view};
  }

  HttpResult submit_report(Session& s, const nlohmann::json& body) {
    GuiReport r = gui_report_from_json(body, cfg_.cohort.m());
    if (s.report) return error(409, "a report was already submitted");
    const nlohmann::json logged = r;
    apply_report(s, std::move(r));
    append(s, {{"type", "report"}, {"report", logged}});
    append(s, {{"type", "checkpoint"}, {"model", s.session->model()}});
    auto view = session_view(s);
    view["predicted_best"] = s.session->predicted_best();
    return {200, view};
  }

  HttpResult next_query(Session& s) {
    if (!s.session) return error(409, "submit a report first");
    auto view = session_view(s);
    std::optional<ComparisonQuery> q = s.session->outstanding();
    if (!q && s.session->n_answered() < cfg_.max_queries) {
      q = s.session->next_query();
      if (q) append(s, {{"type", "query"}, {"id", q->id}, {"left", q->left}, {"right", q->right}});
    }
    if (!q) {
      view["done"] = true;
      return {200, view};
    }
    view["done"] = false;
    view["query"] = {{"id", q->id},
                     {"left", q->left},
                     {"right", q->right},
                     {"left_names", schedule_names(q->left)},
                     {"right_names", schedule_names(q->right)}};
    return {200, view};
  }

  HttpResult answer(Session& s, const nlohmann::json& body) {
    if (!s.session) return error(409, "submit a report first");
    const auto& out = s.session->outstanding();
    if (!out) return error(409, "no query is outstanding");
    const int query_id = body.at("query_id").get<int>();
    if (query_id != out->id) {
      return error(409, "answer for query " + std::to_string(query_id) + " but query " +
                            std::to_string(out->id) + " is outstanding");
    }
    const auto& w = body.at("winner");
    Schedule winner;
    if (w.is_string()) {
      if (w == "left") {
        winner = out->left;
      } else if (w == "right") {
        winner = out->right;
      } else {
        throw ValidationError("winner must be \"left\", \"right\" or a course list");
      }
    } else {
      winner = w.get<Schedule>();
      if (winner != out->left && winner != out->right) {
        throw ValidationError("winner is neither of the compared schedules");
      }
    }
    s.session->submit_answer(query_id, winner);
    append(s, {{"type", "answer"}, {"query_id", query_id}, {"winner", winner}});
    append(s, {{"type", "checkpoint"}, {"model", s.session->model()}});
    auto view = session_view(s);
    view["n_answered"] = s.session->n_answered();
    view["inferred_pairs"] = s.session->inferred_pairs();
    return {200, view};
  }

  HttpResult summary(Session& s) {
    if (!s.session) return error(409, "submit a report first");
    const auto& model = s.session->model();
    const ValueTable table = model_table(cfg_.cohort, model);
    nlohmann::json top = nlohmann::json::array();
    for (std::size_t t = 0; t < table.sorted().size() && top.size() < 5; ++t) {
      const Schedule x = table.sorted()[t];
      if (x.empty() || !affordable(x, cfg_.prices, s.budget)) continue;
      top.push_back({{"schedule", x},
                     {"names", schedule_names(x)},
                     {"predicted_utility", table.sorted_values()[t]},
                     {"cost", cost(x, cfg_.prices)}});
    }
    auto view = session_view(s);
    view["n_answered"] = s.session->n_answered();
    view["inferred_pairs"] = s.session->inferred_pairs();
    view["top"] = top;
    return {200, view};
  }

  /// Runs a mechanism over the cohort with every live session that has a
  /// report occupying its slot: the live report replaces the simulated one,
  /// and under MLCM the live model is used as is.
  HttpResult allocate(const nlohmann::json& body) {
    MechanismConfig m = seeded_mechanism();
    if (body.contains("mechanism")) m.kind = parse_mechanism(body.at("mechanism").get<std::string>());
    if (body.contains("n_queries")) m.n_queries = body.at("n_queries").get<int>();
    if (body.contains("algorithm")) m.algorithm = parse_query_algorithm(body.at("algorithm").get<std::string>());
    Instance inst = cfg_.cohort;
    m.fixed_models.assign(static_cast<std::size_t>(inst.n()), std::nullopt);
    nlohmann::json live = nlohmann::json::array();
    std::vector<std::pair<std::string, int>> slots;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (auto& [id, s] : sessions_) {
        std::lock_guard<std::mutex> slock(s->mu);
        if (!s->report) continue;
        const auto slot = static_cast<std::size_t>(s->slot);
        inst.reports[slot] = *s->report;
        inst.budgets[slot] = s->budget;
        m.fixed_models[slot] = s->session->model();
        slots.emplace_back(id, s->slot);
      }
    }
    const RunResult r = run_mechanism(inst, m);
    for (const auto& [id, slot] : slots) {
      const Schedule x = r.allocation[static_cast<std::size_t>(slot)];
      live.push_back({{"session", id}, {"slot", slot}, {"schedule", x}, {"names", schedule_names(x)}});
    }
    nlohmann::json out = r;
    out.erase("elicitation_logs");
    out["live"] = live;
    return {200, out};
  }

  ServiceConfig cfg_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  int next_number_ = 1;
};

/// Binds the service to an httplib server (all methods, all paths).
inline void bind(httplib::Server& server, Service& service) {
  auto forward = [&service](const char* method) {
    return [&service, method](const httplib::Request& req, httplib::Response& res) {
      const HttpResult r = service.handle(method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
  };
  server.Get(".*", forward("GET"));
  server.Post(".*", forward("POST"));
  server.Put(".*", forward("PUT"));
}

}  // namespace mlcm
