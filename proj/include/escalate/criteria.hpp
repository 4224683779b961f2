#pragma once

#include <optional>
#include <string>
#include <vector>

namespace escalate {

// Target toxicity and the CIBP asymmetry. When theta is present, a is derived
// from it via calibrate_asymmetry (or must agree with it when both are given).
struct TargetConfig {
  double gamma = 0.25;
  std::optional<double> a;
  std::optional<double> theta;

  // a, or the calibrated value from theta. Throws if neither is set.
  double asymmetry() const;
  void validate() const;

  bool operator==(const TargetConfig&) const = default;
};

// (p - gamma)^2
double sq_distance(double p, double gamma);

// |logit(p) - logit(gamma)|; p and gamma strictly inside (0,1).
double aitchison_distance(double p, double gamma);

// Convex infinite-bounds penalization: (p - gamma)^2 / (p^a (1-p)^(2-a)).
// a = 1 is the symmetric unit-interval distance. Throws DomainError at p in {0,1}.
double cibp(double p, double gamma, double a);

// Asymmetry a in (0,2) that makes cibp(gamma - theta) == cibp(gamma + theta).
// Requires 0 < theta < gamma < 0.5.
double calibrate_asymmetry(double gamma, double theta);

// alpha (gamma - p)^+ + (1 - alpha) (p - gamma)^+
double ewoc_loss_point(double p, double gamma, double alpha);

// Patient-indexed feasibility bound: `start` up to patient `hold_through`,
// then +step per patient, capped.
struct TrSchedule {
  double start = 0.25;
  double step = 0.05;
  double cap = 0.50;
  int hold_through = 9;

  bool operator==(const TrSchedule&) const = default;
};
double tr_alpha(int patient_index, const TrSchedule& schedule = {});

// Toxicity-dependent feasibility bound for the next patient given n treated
// patients with dlt_total DLTs:
//   min(cap, alpha_min + (cap - alpha_min) (n - 1 - dlt_total) / S), floored at alpha_min.
struct TdfbSchedule {
  double alpha_min = 0.25;
  double s = 38.0 / 3.0;
  double cap = 0.50;

  bool operator==(const TdfbSchedule&) const = default;
};
double tdfb_alpha(const TdfbSchedule& schedule, int n, int dlt_total);

// Piecewise-constant loss over a partition of [0,1]. Interval i covers
// [cuts[i], cuts[i+1]); the last one is closed at 1.
class LossTable {
 public:
  struct Interval {
    double lower;
    double upper;
    double loss;
    bool operator==(const Interval&) const = default;
  };

  LossTable() = default;

  // Rejects gaps, overlaps, partitions not covering [0,1], negative or
  // non-finite losses.
  static LossTable from_intervals(std::vector<Interval> intervals);

  // Intervals (0,.26) (.26,.41) (.41,.66) (.66,1) with losses 1 0 1 2.
  static LossTable blrm_default();

  double operator()(double p) const;
  const std::vector<Interval>& intervals() const noexcept { return intervals_; }
  bool empty() const noexcept { return intervals_.empty(); }

  bool operator==(const LossTable&) const = default;

 private:
  std::vector<Interval> intervals_;
};

double blrm_loss_point(double p, const LossTable& table);

enum class CriterionKind { SqDistance, Cibp, Aitchison, EwocFixed, EwocTr, EwocTdfb, BlrmLoss };

struct CriterionSpec {
  CriterionKind kind = CriterionKind::SqDistance;
  double alpha = 0.25;  // EwocFixed
  TrSchedule tr;
  TdfbSchedule tdfb;
  LossTable loss = LossTable::blrm_default();

  bool is_ewoc() const noexcept {
    return kind == CriterionKind::EwocFixed || kind == CriterionKind::EwocTr ||
           kind == CriterionKind::EwocTdfb;
  }

  // Feasibility bound for the next allocation; only meaningful for EWOC kinds.
  double alpha_for(int patients_treated, int dlt_total) const;

  void validate() const;

  bool operator==(const CriterionSpec&) const = default;
};

const char* to_string(CriterionKind kind);
std::optional<CriterionKind> criterion_kind_from_string(const std::string& name);

}  // namespace escalate
