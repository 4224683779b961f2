#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "escalate/sim.hpp"
#include "escalate/trial.hpp"

namespace escalate {

struct OutputPaths {
  std::string csv;
  std::string json;
  std::string manifest;

  bool operator==(const OutputPaths&) const = default;
};

struct StudyConfig {
  std::vector<DesignSpec> designs;
  std::vector<ScenarioSpec> scenarios;
  long reps = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: hardware concurrency
  OutputPaths output;
  std::vector<std::string> warnings;  // not serialized

  bool operator==(const StudyConfig& o) const {
    return designs == o.designs && scenarios == o.scenarios && reps == o.reps && seed == o.seed &&
           threads == o.threads && output == o.output;
  }
};

// Design and scenario documents. Errors are ValidationError with a dotted
// field path rooted at `path`.
DesignSpec design_from_json(const nlohmann::json& j, const std::string& path = "");
nlohmann::json design_to_json(const DesignSpec& design);

ScenarioSpec scenario_from_json(const nlohmann::json& j, const std::string& path = "");
nlohmann::json scenario_to_json(const ScenarioSpec& scenario);

// Scenario file references ({"file": ...}) are resolved against base_dir.
StudyConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
StudyConfig parse_config_file(const std::filesystem::path& path);

// Resolved form: defaults explicit, scenario files inlined. Thread count and
// output paths are left out unless requested so reports do not depend on them.
nlohmann::json config_to_json(const StudyConfig& config, bool include_runtime = true);

nlohmann::json report_to_json(const StudyReport& report, const StudyConfig& config);

}  // namespace escalate
