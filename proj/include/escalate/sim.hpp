#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "escalate/trial.hpp"

namespace escalate {

struct ScenarioSpec {
  std::string name;
  std::vector<double> true_tox;
  std::size_t mtd_index = 0;  // 0-based

  // Non-decreasing, inside (0,1), mtd_index nearest gamma. Returns warnings
  // (ties for the nearest dose) rather than failing on them.
  std::vector<std::string> validate(double gamma) const;

  bool operator==(const ScenarioSpec&) const = default;
};

// Substream for replication `rep` of study cell `cell`.
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t cell, std::uint64_t rep);

// Uniform on [0,1) with 53 random bits.
double uniform01(std::mt19937_64& rng);

struct SimulatedTrial {
  std::size_t selected;
  int dlt_count;
  int patients;
  std::vector<CohortRecord> cohorts;  // allocation trace, with the alpha in force per cohort
};

SimulatedTrial simulate_trial(const ScenarioSpec& scenario, const DesignEngine& engine,
                              std::mt19937_64& rng);

struct StudyCell {
  std::size_t design;
  std::size_t scenario;
  std::vector<long> selections;  // per-dose counts
  long dlts = 0;
  long patients = 0;
  std::vector<double> selection_pct;
  double pcs = 0.0;
  double dlt_pct = 0.0;    // 100 * DLTs / patients treated
  double mean_dlts = 0.0;  // DLTs per trial
  double accuracy = 0.0;
};

struct DesignSummary {
  std::string design;
  double mean_accuracy = 0.0;
  std::optional<double> geometric_accuracy;  // only when every accuracy is > 0
  double mean_dlts = 0.0;
  double mean_dlt_pct = 0.0;
};

struct StudyReport {
  std::vector<std::string> designs;
  std::vector<std::string> scenarios;
  std::vector<StudyCell> cells;  // design-major
  std::vector<DesignSummary> summary;
  long reps = 0;
  std::uint64_t seed = 0;

  const StudyCell& cell(std::size_t design, std::size_t scenario) const {
    return cells[design * scenarios.size() + scenario];
  }
};

// 1 - m sum (p_i - gamma)^2 pi_i / sum (p_i - gamma)^2
double accuracy_index(const std::vector<double>& selection_probs, const std::vector<double>& true_tox,
                      double gamma);

// Arithmetic / geometric mean accuracy and mean DLTs per design.
std::vector<DesignSummary> summarize(const StudyReport& report);

// threads == 0 uses the hardware concurrency.
StudyReport run_study(const std::vector<DesignSpec>& designs, const std::vector<ScenarioSpec>& scenarios,
                      long reps, std::uint64_t seed, unsigned threads = 0);

// Flat table: design, scenario, dose, selection_pct, pcs, dlt_pct, accuracy, reps, seed.
void write_csv(const StudyReport& report, std::ostream& out);

std::string format_number(double v);

}  // namespace escalate
