#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kBin = ESCALATE_BIN;
const std::string kData = ESCALATE_DATA;

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args, const std::string& stdin_text = "") {
  std::string cmd = kBin + " " + args + " 2>/dev/null";
  fs::path input;
  if (!stdin_text.empty()) {
    input = fs::temp_directory_path() / ("escalate_stdin_" + std::to_string(std::random_device{}()));
    std::ofstream(input) << stdin_text;
    cmd += " < " + input.string();
  }
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::string out;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) out.append(buf, n);
  const int status = pclose(p);
  if (!input.empty()) fs::remove(input);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("escalate_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run("--version").code == 0);
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("simulate").code == 1);
  CHECK(run("simulate -c /nonexistent.json").code == 1);
  CHECK(run("calibrate --gamma 0.25 --theta 0.3").code == 1);
  CHECK(run("calibrate-skeleton --m 6 --prior-mtd 7 --gamma 0.25 --delta 0.05").code == 1);

  TempDir dir;
  std::ofstream(dir.path / "bad.json") << R"({"designs": [], "scenarios": []})";
  CHECK(run("simulate -c " + (dir.path / "bad.json").string()).code == 1);
  std::ofstream(dir.path / "broken.json") << "{";
  CHECK(run("simulate -c " + (dir.path / "broken.json").string()).code == 1);
  CHECK(run("simulate -c " + kData + "/configs/smoke.json --csv /nonexistent/dir/out.csv").code == 2);
}

TEST_CASE("calibrate commands") {
  const auto a = run("calibrate --gamma 0.25 --theta 1e-6");
  CHECK(a.code == 0);
  CHECK(std::abs(std::stod(a.out) - 0.5) < 1e-4);
  const auto j = run("calibrate --gamma 0.25 --theta 0.2 --json");
  CHECK(json::parse(j.out)["a"].get<double>() > 0.0);
  const auto s = run("calibrate-skeleton --m 6 --prior-mtd 2 --gamma 0.25 --delta 0.05 --json");
  REQUIRE(s.code == 0);
  const auto v = json::parse(s.out)["values"].get<std::vector<double>>();
  REQUIRE(v.size() == 6);
  CHECK(v[1] == 0.25);
  CHECK(v[0] == doctest::Approx(0.1567).epsilon(1e-3));
}

TEST_CASE("simulate smoke run is fast and byte-identical across reruns and thread counts") {
  TempDir dir;
  const std::string cfg = kData + "/configs/smoke.json";
  auto outputs = [&](const std::string& tag, int threads) {
    const auto csv = dir.path / (tag + ".csv"), js = dir.path / (tag + ".json"), man = dir.path / (tag + ".manifest.json");
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run("simulate -c " + cfg + " --threads " + std::to_string(threads) + " --csv " + csv.string() +
                       " --json " + js.string() + " --manifest " + man.string());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(r.code == 0);
    CHECK(secs < 5.0);
    CHECK(json::parse(slurp(man))["reps"] == 10);
    return std::make_pair(slurp(csv), slurp(js));
  };
  const auto a = outputs("a", 1);
  const auto b = outputs("b", 1);
  const auto c = outputs("c", 4);
  CHECK(!a.first.empty());
  CHECK(a == b);
  CHECK(a == c);
  CHECK(a.first.rfind("design,scenario,dose,", 0) == 0);
  const auto j = json::parse(a.second);
  CHECK(j["seed"] == 7);
  CHECK(j["results"].size() == 2 * 6);

  const auto stdout_csv = run("simulate -c " + cfg + " --threads 2");
  CHECK(stdout_csv.out == a.first);
  const auto reseeded = run("simulate -c " + cfg + " --seed 8");
  CHECK(reseeded.out != a.first);
}

TEST_CASE("conduct reads cohorts from stdin") {
  const std::string design = kData + "/designs/everolimus_cibp.json";
  const auto r = run("conduct -d " + design + " --json", "0 0 0\n1 0 0\n");
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["patients_treated"] == 6);
  CHECK(j["recommendation"]["dose"] == 1);
  CHECK(j["cohorts"][1]["dose"] == 2);

  const auto o = run("conduct -d " + design + " --json", "@2 0 0 0\nstop enough\n");
  const auto k = json::parse(o.out);
  CHECK(k["cohorts"][0]["override"] == true);
  CHECK(k["status"] == "terminated");
  CHECK(k["termination_reason"] == "enough");

  const auto text = run("conduct -d " + design, "0 0 0\n");
  CHECK(text.out.find("next cohort: dose 2") != std::string::npos);
  CHECK(run("conduct -d /nonexistent.json").code == 1);
}
