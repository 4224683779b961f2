#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "escalate/config.hpp"
#include "escalate/service.hpp"
#include "escalate/sim.hpp"

using namespace escalate;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load(const std::string& file) {
  std::ifstream in(std::string(ESCALATE_DATA) + "/designs/" + file);
  return json::parse(in);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("escalate_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

json cohort(int dose, std::vector<int> outcomes, bool override_dose = false) {
  json j{{"dose", dose}, {"outcomes", outcomes}};
  if (override_dose) j["override"] = true;
  return j;
}

}  // namespace

TEST_CASE("create: start dose, distinct ids, validation, collisions") {
  TempDir dir("create");
  TrialService svc(dir.path);
  const auto a = svc.create({{"design", load("everolimus_cibp.json")}});
  REQUIRE(a.status == 201);
  CHECK(a.body["recommendation"]["dose"] == 1);
  CHECK(a.body["status"] == "open");
  CHECK(a.body["patients_treated"] == 0);
  const auto b = svc.create({{"design", load("everolimus_crm.json")}});
  CHECK(b.status == 201);
  CHECK(a.body["id"] != b.body["id"]);
  CHECK(fs::exists(dir.path / (a.body["id"].get<std::string>() + ".jsonl")));

  auto bad = load("everolimus_crm.json");
  bad["skeleton"]["values"] = {0.2, 0.4, 0.3};
  const auto r = svc.create({{"design", bad}});
  CHECK(r.status == 400);
  CHECK(r.body["error"]["code"] == "invalid_design");
  CHECK(r.body["error"]["field"].get<std::string>().rfind("design.skeleton", 0) == 0);

  CHECK(svc.create({{"design", load("everolimus_crm.json")}, {"id", "trial-1"}}).status == 201);
  CHECK(svc.create({{"design", load("everolimus_crm.json")}, {"id", "trial-1"}}).status == 409);
  CHECK(svc.create({{"design", load("everolimus_crm.json")}, {"id", "bad id!"}}).status == 400);
  CHECK(svc.create({{"design", load("everolimus_crm.json")}, {"extra", 1}}).status == 400);
  CHECK(svc.create(json::array()).status == 400);
  CHECK(svc.create(json::object()).status == 400);
}

TEST_CASE("cohort flow reproduces the Everolimus recommendations with per-dose rows") {
  TempDir dir("flow");
  TrialService svc(dir.path);
  const std::string crm = svc.create({{"design", load("everolimus_crm.json")}}).body["id"];
  const std::string cibp = svc.create({{"design", load("everolimus_cibp.json")}}).body["id"];
  for (const auto& id : {crm, cibp}) {
    const auto r1 = svc.post_cohort(id, cohort(1, {0, 0, 0}));
    REQUIRE(r1.status == 200);
    CHECK(r1.body["recommendation"]["dose"] == 2);
    CHECK(r1.body["recommendation"]["doses"].size() == 3);
    CHECK(r1.body["recommendation"]["criterion"].size() == 3);
    CHECK(r1.body["cohort"]["dose"] == 1);
    const auto r2 = svc.post_cohort(id, cohort(2, {1, 0, 0}));
    REQUIRE(r2.status == 200);
    CHECK(r2.body["recommendation"]["dose"] == (id == crm ? 2 : 1));
    CHECK(r2.body["patients_treated"] == 6);
    CHECK(r2.body["dlt_total"] == 1);
    CHECK(r2.body["highest_tried"] == 2);
  }
  const auto rec = svc.get_recommendation(crm);
  CHECK(rec.status == 200);
  CHECK(rec.body["criterion_kind"] == "sq-distance");
  CHECK(rec.body["doses"][1]["criterion"].get<double>() == doctest::Approx(0.000303).epsilon(1e-2));
}

TEST_CASE("cohort errors map to status codes") {
  TempDir dir("errors");
  TrialService svc(dir.path);
  auto design = load("everolimus_crm.json");
  design["max_patients"] = 6;
  const std::string id = svc.create({{"design", design}}).body["id"];
  CHECK(svc.post_cohort("nope", cohort(1, {0})).status == 404);
  CHECK(svc.get_state("nope").status == 404);
  CHECK(svc.get_recommendation("nope").status == 404);
  CHECK(svc.terminate("nope", nullptr).status == 404);
  CHECK(svc.post_cohort(id, json::array()).status == 400);
  CHECK(svc.post_cohort(id, {{"outcomes", {0}}}).status == 400);
  CHECK(svc.post_cohort(id, {{"dose", 1}, {"outcomes", {0, 2}}}).status == 400);
  CHECK(svc.post_cohort(id, {{"dose", 1}, {"outcomes", json::array()}}).status == 400);
  CHECK(svc.post_cohort(id, {{"dose", 1}, {"outcomes", {0}}, {"junk", 0}}).status == 400);
  const auto far = svc.post_cohort(id, cohort(2, {0}));
  CHECK(far.status == 422);
  CHECK(far.body["error"]["code"] == "inadmissible_dose");
  CHECK(svc.post_cohort(id, cohort(4, {0}, true)).status == 422);
  CHECK(svc.post_cohort(id, cohort(0, {0}, true)).status == 422);
  CHECK(svc.post_cohort(id, cohort(1, {0, 0, 0, 0, 0, 0, 0})).status == 409);

  const auto ok = svc.post_cohort(id, cohort(3, {0, 1}, true));
  REQUIRE(ok.status == 200);
  CHECK(ok.body["cohort"]["override"] == true);
  CHECK(ok.body["cohort"]["recommended"] == 1);
  CHECK(svc.post_cohort(id, cohort(ok.body["recommendation"]["dose"], {0, 0, 0, 0, 0})).status == 409);
  const auto rest = svc.post_cohort(id, cohort(ok.body["recommendation"]["dose"], {0, 0, 0, 0}));
  REQUIRE(rest.status == 200);
  CHECK(rest.body["status"] == "complete");
  CHECK(rest.body["recommendation"]["dose"].is_null());
  const auto done = svc.post_cohort(id, cohort(1, {0}));
  CHECK(done.status == 409);
  CHECK(done.body["error"]["code"] == "trial_complete");
}

TEST_CASE("terminate returns the MTD, is idempotent and blocks further cohorts") {
  TempDir dir("term");
  TrialService svc(dir.path);
  const std::string id = svc.create({{"design", load("everolimus_crm.json")}}).body["id"];
  CHECK(svc.terminate(id, nullptr).body["mtd"].is_null());
  const std::string id2 = svc.create({{"design", load("everolimus_crm.json")}}).body["id"];
  svc.post_cohort(id2, cohort(1, {0, 0, 0}));
  svc.post_cohort(id2, cohort(2, {1, 0, 0}));
  const auto t = svc.terminate(id2, {{"reason", "safety"}});
  REQUIRE(t.status == 200);
  CHECK(t.body["status"] == "terminated");
  CHECK(t.body["termination_reason"] == "safety");
  const auto means = t.body["posterior_means"].get<std::vector<double>>();
  std::size_t best = 0;
  for (std::size_t i = 1; i < means.size(); ++i) {
    if (std::abs(means[i] - 0.3) < std::abs(means[best] - 0.3)) best = i;
  }
  CHECK(t.body["mtd"] == best + 1);
  const auto again = svc.terminate(id2, {{"reason", "other"}});
  CHECK(again.status == 200);
  CHECK(again.body["termination_reason"] == "safety");
  CHECK(again.body["events"].size() == t.body["events"].size());
  CHECK(svc.post_cohort(id2, cohort(2, {0})).status == 409);
  CHECK(svc.terminate(id2, {{"why", "x"}}).status == 400);
}

TEST_CASE("event log replays to the in-memory state and survives restart") {
  TempDir dir("restart");
  json before_a, before_b;
  std::string a, b;
  {
    TrialService svc(dir.path);
    a = svc.create({{"design", load("everolimus_crm.json")}}).body["id"];
    b = svc.create({{"design", load("everolimus_cibp.json")}}).body["id"];
    svc.post_cohort(a, cohort(1, {0, 0, 0}));
    svc.post_cohort(a, cohort(2, {1, 0, 0}));
    svc.post_cohort(b, cohort(1, {0, 0, 0}));
    svc.terminate(b, {{"reason", "done"}});
    before_a = svc.get_state(a).body;
    before_b = svc.get_state(b).body;

    // Fold of the events equals the live state.
    const DesignEngine e(design_from_json(before_a["design"]));
    std::vector<json> events(before_a["events"].begin(), before_a["events"].end());
    CHECK(state_view(a, e, replay_events(e, events), events) == before_a);
  }
  TrialService again(dir.path);
  CHECK(again.recovery_warnings().empty());
  CHECK(again.ids().size() == 2);
  CHECK(again.get_state(a).body == before_a);
  CHECK(again.get_state(b).body == before_b);
  CHECK(again.post_cohort(a, cohort(2, {0, 0, 0})).status == 200);

  const auto lines = read_lines(dir.path / (a + ".jsonl"));
  REQUIRE(lines.size() == 4);
  for (std::size_t i = 0; i < lines.size(); ++i) CHECK(json::parse(lines[i])["seq"] == i);
  CHECK(json::parse(lines[0])["type"] == "created");
  CHECK(json::parse(lines[3])["dose"] == 2);
}

TEST_CASE("a torn final line is dropped with a warning; earlier corruption is reported") {
  TempDir dir("torn");
  std::string id, bad;
  json expected;
  {
    TrialService svc(dir.path);
    id = svc.create({{"design", load("everolimus_crm.json")}}).body["id"];
    svc.post_cohort(id, cohort(1, {0, 0, 0}));
    expected = svc.get_state(id).body;
    bad = svc.create({{"design", load("everolimus_crm.json")}}).body["id"];
  }
  { std::ofstream(dir.path / (id + ".jsonl"), std::ios::app) << R"({"seq":2,"type":"coh)"; }
  {
    std::ofstream out(dir.path / (bad + ".jsonl"), std::ios::trunc);
    out << "garbage\n{\"seq\":1}\n";
  }
  TrialService again(dir.path);
  CHECK(again.recovery_warnings().size() == 2);
  CHECK(again.get_state(id).body == expected);
  CHECK(again.get_state(bad).status == 404);
}

TEST_CASE("concurrent cohorts on one session: exactly one wins") {
  TempDir dir("race");
  TrialService svc(dir.path);
  auto design = load("everolimus_crm.json");
  design["max_patients"] = 3;
  for (int round = 0; round < 5; ++round) {
    const std::string id = svc.create({{"design", design}}).body["id"];
    std::atomic<int> ok{0}, conflict{0}, other{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&] {
        const auto r = svc.post_cohort(id, cohort(1, {0, 0, 1}));
        (r.status == 200 ? ok : r.status == 409 ? conflict : other)++;
      });
    }
    for (auto& t : threads) t.join();
    CHECK(ok == 1);
    CHECK(conflict == 7);
    CHECK(other == 0);
    CHECK(read_lines(dir.path / (id + ".jsonl")).size() == 2);
    CHECK(svc.get_state(id).body["patients_treated"] == 3);
  }
}

TEST_CASE("service reproduces simulated trial traces") {
  TempDir dir("parity");
  TrialService svc(dir.path);
  const auto cfg = parse_config_file(std::string(ESCALATE_DATA) + "/configs/smoke.json");
  for (const auto& design : cfg.designs) {
    auto d = design;
    d.cohort_size = 3;
    const DesignEngine e(d);
    for (int rep = 0; rep < 3; ++rep) {
      auto rng = substream(77, 0, rep);
      const auto trace = simulate_trial(cfg.scenarios[rep], e, rng);
      const std::string id = svc.create({{"design", design_to_json(d)}}).body["id"];
      for (const auto& c : trace.cohorts) {
        const auto r = svc.post_cohort(id, cohort(static_cast<int>(c.dose) + 1, c.outcomes));
        REQUIRE(r.status == 200);
        CHECK(r.body["cohort"]["recommended"] == c.recommended + 1);
      }
      const auto t = svc.terminate(id, nullptr);
      CHECK(t.body["mtd"] == trace.selected + 1);
    }
  }
}

TEST_CASE("HTTP frontend on an ephemeral port") {
  TempDir dir("http");
  TrialService svc(dir.path);
  HttpFrontend http(svc);
  const int port = http.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread server([&] { http.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  for (int i = 0; i < 100; ++i) {
    if (cli.Get("/v1/trials/none")) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }

  auto created = cli.Post("/v1/trials", json{{"design", load("everolimus_cibp.json")}}.dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  CHECK(created->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(created->get_header_value("Content-Type") == "application/json");
  const std::string id = json::parse(created->body)["id"];

  auto c1 = cli.Post("/v1/trials/" + id + "/cohorts", cohort(1, {0, 0, 0}).dump(), "application/json");
  REQUIRE(c1);
  CHECK(c1->status == 200);
  CHECK(json::parse(c1->body)["recommendation"]["dose"] == 2);
  auto c2 = cli.Post("/v1/trials/" + id + "/cohorts", cohort(2, {1, 0, 0}).dump(), "application/json");
  CHECK(json::parse(c2->body)["recommendation"]["dose"] == 1);

  auto rec = cli.Get("/v1/trials/" + id + "/recommendation");
  REQUIRE(rec);
  CHECK(rec->status == 200);
  CHECK(json::parse(rec->body)["dose"] == 1);
  auto state = cli.Get("/v1/trials/" + id);
  CHECK(json::parse(state->body) == svc.get_state(id).body);

  CHECK(cli.Post("/v1/trials/" + id + "/cohorts", "{oops", "application/json")->status == 400);
  CHECK(cli.Post("/v1/trials/" + id + "/cohorts", cohort(3, {0}).dump(), "application/json")->status == 422);
  CHECK(cli.Get("/v1/trials/unknown")->status == 404);
  CHECK(cli.Get("/v2/whatever")->status == 404);
  auto opt = cli.Options("/v1/trials");
  REQUIRE(opt);
  CHECK(opt->status == 204);
  CHECK(opt->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

  auto term = cli.Post("/v1/trials/" + id + "/terminate", "", "application/json");
  REQUIRE(term);
  CHECK(term->status == 200);
  CHECK(json::parse(term->body)["status"] == "terminated");
  CHECK(cli.Post("/v1/trials/" + id + "/terminate", "", "application/json")->status == 200);
  CHECK(cli.Post("/v1/trials/" + id + "/cohorts", cohort(1, {0}).dump(), "application/json")->status == 409);

  http.stop();
  server.join();
}
