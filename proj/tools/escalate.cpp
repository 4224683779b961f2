#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "escalate/config.hpp"
#include "escalate/criteria.hpp"
#include "escalate/error.hpp"
#include "escalate/models.hpp"
#include "escalate/service.hpp"
#include "escalate/sim.hpp"
#include "escalate/trial.hpp"
#include "escalate/version.hpp"

using nlohmann::json;
namespace es = escalate;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct SimulateArgs {
  std::string config;
  long reps = 0;
  long long seed = -1;
  int threads = -1;
  std::string csv, json, manifest;
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw es::EngineError("cannot write " + path);
  out << content;
  if (!out.flush()) throw es::EngineError("write failed on " + path);
}

int cmd_simulate(const SimulateArgs& args) {
  auto config = es::parse_config_file(args.config);
  if (args.reps > 0) config.reps = args.reps;
  if (args.seed >= 0) config.seed = static_cast<std::uint64_t>(args.seed);
  if (args.threads >= 0) config.threads = static_cast<unsigned>(args.threads);
  if (!args.csv.empty()) config.output.csv = args.csv;
  if (!args.json.empty()) config.output.json = args.json;
  if (!args.manifest.empty()) config.output.manifest = args.manifest;
  for (const auto& w : config.warnings) std::cerr << "warning: " << w << "\n";

  const auto start = std::chrono::steady_clock::now();
  const auto report = es::run_study(config.designs, config.scenarios, config.reps, config.seed, config.threads);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::ostringstream csv;
  es::write_csv(report, csv);
  if (config.output.csv.empty() && config.output.json.empty()) std::cout << csv.str();
  if (!config.output.csv.empty()) write_file(config.output.csv, csv.str());
  if (!config.output.json.empty()) {
    write_file(config.output.json, es::report_to_json(report, config).dump(2) + "\n");
  }
  if (!config.output.manifest.empty()) {
    const unsigned threads =
        config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    json manifest{{"tool", "escalate"},
                  {"version", es::kVersion},
                  {"compiler", __VERSION__},
                  {"config", args.config},
                  {"seed", config.seed},
                  {"reps", config.reps},
                  {"threads", threads},
                  {"wall_time_seconds", wall},
                  {"outputs", {{"csv", config.output.csv}, {"json", config.output.json}}},
                  {"warnings", config.warnings}};
    write_file(config.output.manifest, manifest.dump(2) + "\n");
  }
  std::cerr << "simulated " << report.cells.size() << " cells x " << report.reps << " reps in " << wall << " s\n";
  return kOk;
}

int cmd_calibrate(double gamma, double theta, bool as_json) {
  const double a = es::calibrate_asymmetry(gamma, theta);
  if (as_json) {
    std::cout << json{{"gamma", gamma}, {"theta", theta}, {"a", a}}.dump() << "\n";
  } else {
    std::printf("%.12g\n", a);
  }
  return kOk;
}

int cmd_calibrate_skeleton(int m, int prior_mtd, double gamma, double delta, bool as_json) {
  if (m < 1) throw es::ValidationError("m", "must be at least 1");
  if (prior_mtd < 1 || prior_mtd > m) throw es::ValidationError("prior-mtd", "must lie in 1..m");
  const auto sk = es::calibrate_skeleton(static_cast<std::size_t>(m), static_cast<std::size_t>(prior_mtd - 1),
                                         gamma, delta);
  if (as_json) {
    std::cout << json{{"values", sk.values}, {"prior_mtd", prior_mtd}, {"gamma", gamma}, {"delta", delta}}.dump()
              << "\n";
  } else {
    for (std::size_t i = 0; i < sk.size(); ++i) std::printf(i ? " %.10g" : "%.10g", sk.values[i]);
    std::printf("\n");
  }
  return kOk;
}

void print_assessment(const es::DesignEngine& engine, const es::TrialState& state) {
  const auto rec = es::recommend(state, engine);
  std::printf("%-6s %-14s %-14s\n", "dose", "post_mean", to_string(engine.design().criterion.kind));
  for (const auto& d : rec.doses) {
    std::printf("%-6zu %-14.6f %-14.6f%s\n", d.dose + 1, d.posterior_mean, d.criterion,
                (!es::is_complete(state, engine) && d.dose == rec.dose) ? "  <- next" : "");
  }
}

// Reads cohorts from stdin. Each line is either outcomes for the recommended
// dose ("0 0 1"), "@<dose> <outcomes>" to override, or "stop [reason]".
int cmd_conduct(const std::string& design_path, bool as_json) {
  std::ifstream in(design_path);
  if (!in) throw es::EngineError("cannot open " + design_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw es::ValidationError("design", e.what());
  }
  const es::DesignEngine engine(es::design_from_json(doc, ""));
  auto state = es::start_trial(engine);
  std::vector<json> events{{{"seq", 0}, {"type", "created"}, {"design", es::design_to_json(engine.design())}}};

  auto show = [&] {
    if (!as_json) {
      print_assessment(engine, state);
      if (!es::is_complete(state, engine)) {
        std::printf("next cohort: dose %zu, %d patient(s)\n", es::next_dose(state, engine) + 1,
                    std::min(engine.design().cohort_size, engine.design().max_patients - state.patients_treated));
      }
    }
  };
  show();
  std::string line;
  while (!es::is_complete(state, engine) && std::getline(std::cin, line)) {
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first) || first[0] == '#') continue;
    if (first == "stop") {
      std::string reason;
      std::getline(ls, reason);
      if (!reason.empty() && reason[0] == ' ') reason.erase(0, 1);
      state = es::terminate_trial(std::move(state), reason);
      events.push_back({{"seq", events.size()}, {"type", "terminated"}, {"reason", reason}});
      break;
    }
    std::size_t dose = es::next_dose(state, engine);
    bool override_dose = false;
    std::vector<int> outcomes;
    try {
      if (first[0] == '@') {
        dose = static_cast<std::size_t>(std::stoul(first.substr(1))) - 1;
        override_dose = true;
      } else {
        outcomes.push_back(std::stoi(first));
      }
      std::string tok;
      while (ls >> tok) outcomes.push_back(std::stoi(tok));
      state = es::record_cohort(state, engine, dose, outcomes, override_dose);
    } catch (const std::logic_error& e) {
      std::cerr << "rejected: " << e.what() << "\n";
      continue;
    }
    events.push_back({{"seq", events.size()},
                      {"type", "cohort"},
                      {"dose", dose + 1},
                      {"outcomes", outcomes},
                      {"override", override_dose}});
    show();
  }
  if (as_json) {
    std::cout << es::state_view("local", engine, state, events).dump(2) << "\n";
  } else if (state.patients_treated > 0) {
    std::printf("selected MTD: dose %zu\n", es::select_mtd(state, engine) + 1);
  }
  return kOk;
}

int cmd_serve(const std::string& host, int port, const std::string& data_dir) {
  es::TrialService service(data_dir);
  for (const auto& w : service.recovery_warnings()) std::cerr << "warning: " << w << "\n";
  es::HttpFrontend http(service);
  const int bound = http.bind(host, port);
  if (bound < 0) throw es::EngineError("cannot bind " + host + ":" + std::to_string(port));
  std::cerr << "escalate " << es::kVersion << " listening on " << host << ":" << bound << " (data: " << data_dir
            << ", " << service.ids().size() << " session(s) recovered)\n";
  return http.listen() ? kOk : kRuntime;
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian dose-escalation design engine"};
  app.set_version_flag("--version", std::string(es::kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo study from a JSON config");
  simulate->add_option("-c,--config", sim.config, "Study config (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--reps", sim.reps, "Override replications")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "Override master seed")->check(CLI::NonNegativeNumber);
  simulate->add_option("--threads", sim.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  simulate->add_option("--csv", sim.csv, "CSV report path");
  simulate->add_option("--json", sim.json, "JSON report path");
  simulate->add_option("--manifest", sim.manifest, "Run manifest path");

  double gamma = 0.25, theta = 0.0, delta = 0.05;
  int m = 0, prior_mtd = 0;
  bool as_json = false;
  auto* calibrate = app.add_subcommand("calibrate", "Asymmetry parameter from (gamma, theta)");
  calibrate->add_option("--gamma", gamma, "Target DLT probability")->required();
  calibrate->add_option("--theta", theta, "Half-width")->required();
  calibrate->add_flag("--json", as_json, "Machine-readable output");

  auto* skeleton = app.add_subcommand("calibrate-skeleton", "Indifference-interval skeleton");
  skeleton->add_option("--m", m, "Number of doses")->required();
  skeleton->add_option("--prior-mtd", prior_mtd, "Prior MTD (1-based)")->required();
  skeleton->add_option("--gamma", gamma, "Target DLT probability")->required();
  skeleton->add_option("--delta", delta, "Half-width of the indifference interval")->required();
  skeleton->add_flag("--json", as_json, "Machine-readable output");

  std::string design_path;
  auto* conduct = app.add_subcommand("conduct", "Interactive trial conduct on stdin");
  conduct->add_option("-d,--design", design_path, "Design (JSON)")->required()->check(CLI::ExistingFile);
  conduct->add_flag("--json", as_json, "Print the final state as JSON");

  std::string host = "127.0.0.1";
  int port = std::atoi(env_or("ESCALATE_PORT", "8080").c_str());
  std::string data_dir = env_or("ESCALATE_DATA_DIR", "escalate-data");
  auto* serve = app.add_subcommand("serve", "Start the HTTP trial-conduct service");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (default $ESCALATE_PORT or 8080)")->check(CLI::Range(0, 65535));
  serve->add_option("--data-dir", data_dir, "Event log directory (default $ESCALATE_DATA_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*calibrate) return cmd_calibrate(gamma, theta, as_json);
    if (*skeleton) return cmd_calibrate_skeleton(m, prior_mtd, gamma, delta, as_json);
    if (*conduct) return cmd_conduct(design_path, as_json);
    if (*serve) return cmd_serve(host, port, data_dir);
  } catch (const es::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const es::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
