#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "escalate/criteria.hpp"
#include "escalate/models.hpp"
#include "escalate/posterior.hpp"

namespace escalate {

// A complete dose-escalation design. Dose indices are 0-based here; the JSON
// and CLI layers present them 1-based.
struct DesignSpec {
  std::string name;
  ModelSpec model;
  Skeleton skeleton;
  TargetConfig target;
  CriterionSpec criterion;
  int cohort_size = 3;
  int max_patients = 30;
  bool no_skip = true;
  std::size_t start_dose = 0;
  GridOptions grid;

  std::size_t dose_count() const noexcept { return skeleton.size(); }
  void validate() const;

  bool operator==(const DesignSpec&) const = default;
};

struct DoseAssessment {
  std::size_t dose;
  double posterior_mean;
  double criterion;
};

// Everything about a design that does not change during a trial: the grid,
// standardized doses and per-node criterion values. Immutable; share freely
// across threads.
class DesignEngine {
 public:
  explicit DesignEngine(DesignSpec design);

  const DesignSpec& design() const noexcept { return design_; }
  std::span<const double> doses() const noexcept { return doses_; }
  const std::shared_ptr<const Grid>& grid() const noexcept { return grid_; }
  Posterior prior() const { return Posterior(grid_); }

  // Posterior mean and criterion value at every dose. `alpha` is the EWOC
  // feasibility bound and is ignored by other criteria.
  std::vector<DoseAssessment> assess(const Posterior& post, double alpha) const;

  std::vector<double> posterior_means(const Posterior& post) const;

 private:
  DesignSpec design_;
  std::vector<double> doses_;
  std::shared_ptr<const Grid> grid_;
  double gamma_;
  // Per dose, per node. For EWOC kinds `below_` holds (gamma - p)^+ and
  // `above_` holds (p - gamma)^+; otherwise `below_` holds the pointwise
  // criterion (cibp, Aitchison distance, loss table).
  std::vector<std::vector<double>> below_;
  std::vector<std::vector<double>> above_;
};

struct PatientRecord {
  std::size_t dose;
  bool dlt;

  bool operator==(const PatientRecord&) const = default;
};

struct CohortRecord {
  std::size_t dose;
  std::vector<int> outcomes;  // 0/1 per patient
  std::size_t recommended;    // what the design proposed for this cohort
  bool override_dose = false;
  double alpha = 0.0;         // EWOC bound in force at allocation

  bool operator==(const CohortRecord&) const = default;
};

struct TrialState {
  std::vector<PatientRecord> history;
  std::vector<CohortRecord> cohorts;
  Posterior posterior;
  int patients_treated = 0;
  int dlt_total = 0;
  std::optional<std::size_t> highest_tried;
  bool terminated_externally = false;
  std::string termination_reason;
};

struct Recommendation {
  std::size_t dose;
  double alpha;
  std::vector<DoseAssessment> doses;
};

TrialState start_trial(const DesignEngine& engine);

bool is_complete(const TrialState& state, const DesignEngine& engine);

// Highest dose index the next cohort may receive.
std::size_t max_admissible(const TrialState& state, const DesignEngine& engine);

// Criterion values at every dose and the admissible minimizer (lowest index on
// ties). The first cohort always goes to the start dose.
Recommendation recommend(const TrialState& state, const DesignEngine& engine);

std::size_t next_dose(const TrialState& state, const DesignEngine& engine);

// Appends a cohort. A dose other than the current recommendation needs
// override_dose = true; the override is kept in the cohort record.
TrialState record_cohort(const TrialState& state, const DesignEngine& engine, std::size_t dose,
                         std::span<const int> outcomes, bool override_dose = false);

// Same, reusing a recommendation already computed for `state`.
TrialState record_cohort(const TrialState& state, const DesignEngine& engine, const Recommendation& rec,
                         std::size_t dose, std::span<const int> outcomes, bool override_dose = false);

TrialState terminate_trial(TrialState state, std::string reason);

// Squared distance of posterior means to the target over all doses.
std::size_t select_mtd(const TrialState& state, const DesignEngine& engine);

}  // namespace escalate
