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

// Command-line front end: instance generation, calibration, mechanism runs,
// sweeps, studies, fairness audits and the HTTP service. Every command is
// deterministic in --seed; outputs go to --out.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "mlcm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string out = "out";
  int n_instances = 50;
  mlcm::InstanceConfig instance;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--seed", o.seed, "base seed");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--instances", o.n_instances, "number of instances")->check(CLI::PositiveNumber);
  app->add_option("--courses", o.instance.catalog.m, "courses per instance")->check(CLI::Range(1, 32));
  app->add_option("--students", o.instance.catalog.n_students, "students per instance")
      ->check(CLI::PositiveNumber);
  app->add_option("--max-courses", o.instance.catalog.max_courses, "schedule size limit")
      ->check(CLI::PositiveNumber);
  app->add_option("--supply-ratio", o.instance.catalog.supply_ratio, "seats over demand");
  app->add_option("--popular", o.instance.catalog.n_popular, "number of popular courses");
  app->add_option("--gamma", o.instance.mistakes.gamma, "mistake scale");
}

json instance_config_json(const CommonOptions& o) {
  const auto& c = o.instance.catalog;
  const auto& g = o.instance.generator;
  return json{{"seed", o.seed},
              {"instances", o.n_instances},
              {"catalog",
               {{"courses", c.m},
                {"students", c.n_students},
                {"max_courses", c.max_courses},
                {"supply_ratio", c.supply_ratio},
                {"popular", c.n_popular}}},
              {"generator",
               {{"favorites", g.n_favorites},
                {"centers", g.n_centers},
                {"l_p", g.l_p},
                {"u_p", g.u_p},
                {"l_np", g.l_np},
                {"u_np", g.u_np},
                {"psi_step_max", g.psi_step_max},
                {"xi_step_max", g.xi_step_max},
                {"step_prob", g.step_prob}}},
              {"mistakes", o.instance.mistakes},
              {"beta", o.instance.beta}};
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mlcm::ValidationError("cannot open " + path);
  return json::parse(in);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct MechanismOptions {
  std::string mechanisms = "cm";
  int n_queries = 10;
  std::string algorithm = "obis";
  bool timing = false;
};

void add_mechanism(CLI::App* app, MechanismOptions& o) {
  app->add_option("--mechanism", o.mechanisms, "comma-separated: cm, cm-star, cmnm, mlcm, mlcm-projected, rsd");
  app->add_option("--queries", o.n_queries, "comparison queries per student")->check(CLI::NonNegativeNumber);
  app->add_option("--algo", o.algorithm, "query algorithm: obis, naive, random");
  app->add_flag("--timing", o.timing, "also write wall-clock timings (timing.csv), which vary between reruns");
}

mlcm::MechanismConfig mechanism_config(const std::string& kind, const MechanismOptions& o) {
  mlcm::MechanismConfig c;
  c.kind = mlcm::parse_mechanism(kind);
  c.n_queries = o.n_queries;
  c.algorithm = mlcm::parse_query_algorithm(o.algorithm);
  return c;
}

std::string mechanism_label(const mlcm::MechanismConfig& c) {
  using mlcm::MechanismKind;
  if (c.kind == MechanismKind::kMlcm || c.kind == MechanismKind::kMlcmProjected) {
    return mlcm::to_string(c.kind) + "(" + std::to_string(c.n_queries) + " " + mlcm::to_string(c.algorithm) + ")";
  }
  return mlcm::to_string(c.kind);
}

mlcm::ExperimentSpec experiment_spec(const CommonOptions& common, const MechanismOptions& mech) {
  mlcm::ExperimentSpec spec;
  spec.instance = common.instance;
  spec.n_instances = common.n_instances;
  spec.seed = common.seed;
  for (const auto& kind : split_list(mech.mechanisms)) {
    auto cfg = mechanism_config(kind, mech);
    spec.mechanisms.push_back({mechanism_label(cfg), cfg});
  }
  return spec;
}

json mechanism_json(const MechanismOptions& m) {
  return json{{"mechanisms", split_list(m.mechanisms)}, {"queries", m.n_queries}, {"algorithm", m.algorithm}};
}

void write_experiment(const fs::path& out, const mlcm::ExperimentResult& r, const json& config, bool timing) {
  write_file(out / "metrics.csv", mlcm::metrics_csv(r));
  write_file(out / "raw.csv", mlcm::raw_csv(r));
  if (timing) write_file(out / "timing.csv", mlcm::timing_csv(r));
  write_file(out / "config.json", config.dump(2) + "\n");
}

int cmd_gen(const CommonOptions& o) {
  for (int idx = 0; idx < o.n_instances; ++idx) {
    const auto inst = mlcm::make_instance(o.instance, mlcm::instance_seed(o.seed, idx));
    char name[32];
    std::snprintf(name, sizeof name, "instance_%03d.json", idx);
    write_file(fs::path(o.out) / name, json(inst).dump() + "\n");
  }
  write_file(fs::path(o.out) / "config.json", json{{"command", "gen"}, {"instance", instance_config_json(o)}}.dump(2) + "\n");
  std::cout << "wrote " << o.n_instances << " instances to " << o.out << "\n";
  return 0;
}

int cmd_calibrate(const CommonOptions& o, const mlcm::ProbeConfig& probe) {
  std::vector<mlcm::TrueUtility> students;
  for (int idx = 0; idx < o.n_instances; ++idx) {
    auto inst = mlcm::make_instance(o.instance, mlcm::instance_seed(o.seed, idx));
    students.insert(students.end(), inst.truth.begin(), inst.truth.end());
  }
  const auto c = mlcm::calibration_metrics(students, o.instance.mistakes, probe, o.seed);
  write_file(fs::path(o.out) / "calibration.csv", mlcm::calibration_csv_header() + mlcm::to_csv_row(c));
  json cfg{{"command", "calibrate"},
           {"instance", instance_config_json(o)},
           {"probe", {{"pairs", probe.n_pairs}, {"top_fraction", probe.top_fraction}}}};
  write_file(fs::path(o.out) / "config.json", cfg.dump(2) + "\n");
  std::cout << mlcm::calibration_csv_header() << mlcm::to_csv_row(c);
  return 0;
}

int cmd_run(const CommonOptions& o, const MechanismOptions& m, const std::vector<std::string>& instance_files) {
  auto spec = experiment_spec(o, m);
  for (const auto& f : instance_files) spec.instances.push_back(read_json(f).get<mlcm::Instance>());
  const auto r = mlcm::run_experiment(spec);
  json cfg{{"command", "run"},
           {"instance", instance_config_json(o)},
           {"instance_files", instance_files},
           {"mechanism", mechanism_json(m)}};
  write_experiment(o.out, r, cfg, m.timing);
  std::cout << mlcm::metrics_csv(r);
  return 0;
}

int cmd_sweep(const CommonOptions& o, const MechanismOptions& m, const std::vector<double>& gammas) {
  const auto r = mlcm::gamma_sweep(experiment_spec(o, m), gammas);
  write_file(fs::path(o.out) / "metrics.csv", r.metrics_csv());
  write_file(fs::path(o.out) / "raw.csv", r.raw_csv());
  json cfg{{"command", "sweep"}, {"instance", instance_config_json(o)}, {"mechanism", mechanism_json(m)},
           {"gammas", gammas}};
  write_file(fs::path(o.out) / "config.json", cfg.dump(2) + "\n");
  std::cout << r.metrics_csv();
  return 0;
}

int cmd_optin(const CommonOptions& o, const MechanismOptions& m, const std::string& mode) {
  auto spec = experiment_spec(o, m);
  auto mlcm_cfg = mechanism_config("mlcm", m);
  const auto r = mlcm::opt_in_study(spec, mlcm_cfg, mlcm::parse_opt_in_mode(mode));
  write_file(fs::path(o.out) / "optin_summary.csv", mlcm::opt_in_summary_csv(r.summary));
  write_file(fs::path(o.out) / "optin_rows.csv", mlcm::opt_in_rows_csv(r));
  json cfg{{"command", "optin"}, {"instance", instance_config_json(o)}, {"mechanism", mechanism_json(m)},
           {"mode", mode}};
  write_file(fs::path(o.out) / "config.json", cfg.dump(2) + "\n");
  std::cout << mlcm::opt_in_summary_csv(r.summary);
  return 0;
}

int cmd_qstudy(const CommonOptions& o, const MechanismOptions& m, const std::string& algos) {
  std::vector<mlcm::QueryAlgorithm> list;
  for (const auto& a : split_list(algos)) list.push_back(mlcm::parse_query_algorithm(a));
  auto spec = experiment_spec(o, m);
  const auto curves = mlcm::query_algorithm_study(spec, mechanism_config("mlcm", m), m.n_queries, list);
  write_file(fs::path(o.out) / "query_curves.csv", mlcm::query_curves_csv(curves));
  json cfg{{"command", "qstudy"}, {"instance", instance_config_json(o)}, {"mechanism", mechanism_json(m)},
           {"algorithms", split_list(algos)}};
  write_file(fs::path(o.out) / "config.json", cfg.dump(2) + "\n");
  std::cout << mlcm::query_curves_csv(curves);
  return 0;
}

int cmd_audit(const CommonOptions& o, const MechanismOptions& m, const std::string& instance_file, double eps) {
  const mlcm::Instance inst = instance_file.empty() ? mlcm::make_instance(o.instance, o.seed)
                                                    : read_json(instance_file).get<mlcm::Instance>();
  const auto kinds = split_list(m.mechanisms);
  if (kinds.size() != 1) throw mlcm::ValidationError("audit takes exactly one mechanism");
  const auto r = mlcm::run_mechanism(inst, mlcm::seeded(mechanism_config(kinds.front(), m), o.seed));
  std::vector<mlcm::UtilityFn> u;
  for (const auto& t : inst.truth) u.push_back([&t](mlcm::Schedule x) { return mlcm::eval_true(t, x); });
  const auto report = mlcm::audit_fairness(r.allocation, u, inst.catalog, inst.perm, eps);
  json out{{"mechanism", mechanism_label(mechanism_config(kinds.front(), m))},
           {"allocation", r.allocation},
           {"audit", report}};
  write_file(fs::path(o.out) / "audit.json", out.dump(2) + "\n");
  json cfg{{"command", "audit"}, {"instance", instance_config_json(o)}, {"instance_file", instance_file},
           {"mechanism", mechanism_json(m)}, {"eps", eps}};
  write_file(fs::path(o.out) / "config.json", cfg.dump(2) + "\n");
  std::cout << json(report).dump(2) << "\n";
  return 0;
}

int cmd_serve(const CommonOptions& o, const MechanismOptions& m, const std::string& host, int port,
              const std::string& data_dir, int max_queries) {
  mlcm::ServiceConfig cfg;
  cfg.cohort = mlcm::make_instance(o.instance, o.seed);
  cfg.mechanism = mechanism_config("mlcm", m);
  cfg.algorithm = mlcm::parse_query_algorithm(m.algorithm);
  cfg.max_queries = max_queries;
  cfg.data_dir = data_dir;
  cfg.seed = o.seed;
  mlcm::Service service(std::move(cfg));
  service.load();
  httplib::Server server;
  mlcm::bind(server, service);
  std::cout << "listening on " << host << ":" << port << "\n" << std::flush;
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Course allocation with machine-learning-powered preference elicitation"};
  app.require_subcommand(1);

  CommonOptions common;
  MechanismOptions mech;
  mlcm::ProbeConfig probe;
  std::vector<std::string> instance_files;
  std::string instance_file;
  std::vector<double> gammas{0.0, 0.5, 1.0, 1.5, 2.0};
  std::string opt_in_mode = "nobody-else";
  std::string algos = "obis,naive,random";
  double eps = 0.0;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "sessions";
  int max_queries = 10;

  auto* gen = app.add_subcommand("gen", "generate instances as JSON");
  add_common(gen, common);

  auto* calibrate = app.add_subcommand("calibrate", "report-calibration metrics of the generator");
  add_common(calibrate, common);
  calibrate->add_option("--pairs", probe.n_pairs, "probe pairs per student")->check(CLI::PositiveNumber);
  calibrate->add_option("--top-fraction", probe.top_fraction, "top-schedule threshold fraction");

  auto* run = app.add_subcommand("run", "run mechanisms on generated or given instances");
  add_common(run, common);
  add_mechanism(run, mech);
  run->add_option("--instance", instance_files, "instance JSON file (repeatable)")->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "run mechanisms across mistake scales");
  add_common(sweep, common);
  add_mechanism(sweep, mech);
  sweep->add_option("--gammas", gammas, "mistake scales")->delimiter(',');

  auto* optin = app.add_subcommand("optin", "opt-in incentive study");
  add_common(optin, common);
  add_mechanism(optin, mech);
  optin->add_option("--mode", opt_in_mode, "nobody-else or everybody-else");

  auto* qstudy = app.add_subcommand("qstudy", "compare query algorithms");
  add_common(qstudy, common);
  add_mechanism(qstudy, mech);
  qstudy->add_option("--algos", algos, "comma-separated query algorithms");

  auto* audit = app.add_subcommand("audit", "fairness audit of one mechanism's allocation");
  add_common(audit, common);
  add_mechanism(audit, mech);
  audit->add_option("--instance", instance_file, "instance JSON file")->check(CLI::ExistingFile);
  audit->add_option("--eps", eps, "tolerance")->check(CLI::NonNegativeNumber);

  auto* serve = app.add_subcommand("serve", "HTTP service for live elicitation sessions");
  add_common(serve, common);
  add_mechanism(serve, mech);
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port")->check(CLI::Range(1, 65535));
  serve->add_option("--data-dir", data_dir, "session log directory");
  serve->add_option("--max-queries", max_queries, "queries per session")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(common);
    if (*calibrate) return cmd_calibrate(common, probe);
    if (*run) return cmd_run(common, mech, instance_files);
    if (*sweep) return cmd_sweep(common, mech, gammas);
    if (*optin) return cmd_optin(common, mech, opt_in_mode);
    if (*qstudy) return cmd_qstudy(common, mech, algos);
    if (*audit) return cmd_audit(common, mech, instance_file, eps);
    if (*serve) return cmd_serve(common, mech, host, port, data_dir, max_queries);
  } catch (const mlcm::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const mlcm::CapabilityError& e) {
    std::cerr << "not supported: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
