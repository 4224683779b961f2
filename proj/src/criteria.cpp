#include "escalate/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "escalate/error.hpp"

namespace escalate {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

void require_open_unit(double p, const char* name) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError(std::string(name) + " must lie strictly inside (0,1), got " +
                      std::to_string(p));
  }
}

}  // namespace

double TargetConfig::asymmetry() const {
  if (a) return *a;
  if (theta) return calibrate_asymmetry(gamma, *theta);
  throw ValidationError("target.a", "asymmetry parameter not set");
}

void TargetConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 0.5)) throw ValidationError("target.gamma", "must lie in (0, 0.5)");
  if (a && !(*a > 0.0 && *a < 2.0)) throw ValidationError("target.a", "must lie in (0, 2)");
  if (theta) {
    if (!(*theta > 0.0 && *theta < gamma)) {
      throw ValidationError("target.theta", "must lie in (0, gamma)");
    }
    if (a && std::abs(*a - calibrate_asymmetry(gamma, *theta)) > 1e-12) {
      throw ValidationError("target.a", "disagrees with the value calibrated from theta");
    }
  }
}

double sq_distance(double p, double gamma) { return (p - gamma) * (p - gamma); }

double aitchison_distance(double p, double gamma) {
  require_open_unit(p, "p");
  require_open_unit(gamma, "gamma");
  return std::abs(logit(p) - logit(gamma));
}

double cibp(double p, double gamma, double a) {
  require_open_unit(p, "p");
  const double num = (p - gamma) * (p - gamma);
  // Log-space denominator keeps p^a (1-p)^(2-a) from underflowing near the bounds.
  return num * std::exp(-a * std::log(p) - (2.0 - a) * std::log1p(-p));
}

double calibrate_asymmetry(double gamma, double theta) {
  if (!(gamma > 0.0 && gamma < 0.5)) throw ValidationError("gamma", "must lie in (0, 0.5)");
  if (!(theta > 0.0)) throw ValidationError("theta", "must be positive");
  if (!(theta < gamma)) throw ValidationError("theta", "must be smaller than gamma");
  const double ratio =
      std::log((gamma - theta) / (gamma + theta)) / std::log((1.0 - gamma - theta) / (1.0 - gamma + theta));
  return 2.0 / (1.0 + ratio);
}

double ewoc_loss_point(double p, double gamma, double alpha) {
  return alpha * std::max(0.0, gamma - p) + (1.0 - alpha) * std::max(0.0, p - gamma);
}

double tr_alpha(int patient_index, const TrSchedule& schedule) {
  if (patient_index <= schedule.hold_through) return schedule.start;
  return std::min(schedule.start + schedule.step * (patient_index - schedule.hold_through),
                  schedule.cap);
}

double tdfb_alpha(const TdfbSchedule& schedule, int n, int dlt_total) {
  const double no_dlt = static_cast<double>(n - 1 - dlt_total);
  const double raw = schedule.alpha_min + (schedule.cap - schedule.alpha_min) * no_dlt / schedule.s;
  return std::max(schedule.alpha_min, std::min(schedule.cap, raw));
}

LossTable LossTable::from_intervals(std::vector<Interval> intervals) {
  if (intervals.empty()) throw ValidationError("loss", "loss table must not be empty");
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto& iv = intervals[i];
    const std::string where = "loss[" + std::to_string(i) + "]";
    if (!(iv.lower < iv.upper)) throw ValidationError(where, "lower must be below upper");
    if (!std::isfinite(iv.loss) || iv.loss < 0.0) {
      throw ValidationError(where + ".loss", "must be finite and non-negative");
    }
    if (i == 0 && iv.lower != 0.0) throw ValidationError(where + ".lower", "must start at 0");
    if (i > 0) {
      const double prev = intervals[i - 1].upper;
      if (iv.lower > prev) throw ValidationError(where + ".lower", "gap between intervals");
      if (iv.lower < prev) throw ValidationError(where + ".lower", "intervals overlap");
    }
  }
  if (intervals.back().upper != 1.0) {
    throw ValidationError("loss[" + std::to_string(intervals.size() - 1) + "].upper",
                          "must end at 1");
  }
  LossTable t;
  t.intervals_ = std::move(intervals);
  return t;
}

LossTable LossTable::blrm_default() {
  return from_intervals({{0.00, 0.26, 1.0}, {0.26, 0.41, 0.0}, {0.41, 0.66, 1.0}, {0.66, 1.00, 2.0}});
}

double LossTable::operator()(double p) const {
  if (intervals_.empty()) throw ValidationError("loss", "loss table is empty");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("loss table lookup outside [0,1]");
  for (const auto& iv : intervals_) {
    if (p < iv.upper) return iv.loss;
  }
  return intervals_.back().loss;
}

double blrm_loss_point(double p, const LossTable& table) { return table(p); }

double CriterionSpec::alpha_for(int patients_treated, int dlt_total) const {
  switch (kind) {
    case CriterionKind::EwocFixed:
      return alpha;
    case CriterionKind::EwocTr:
      return tr_alpha(patients_treated + 1, tr);
    case CriterionKind::EwocTdfb:
      return tdfb_alpha(tdfb, patients_treated, dlt_total);
    default:
      return 0.0;
  }
}

void CriterionSpec::validate() const {
  switch (kind) {
    case CriterionKind::EwocFixed:
      if (!(alpha > 0.0 && alpha <= 0.5)) throw ValidationError("criterion.alpha", "must lie in (0, 0.5]");
      break;
    case CriterionKind::EwocTr:
      if (!(tr.start > 0.0 && tr.start <= 0.5)) throw ValidationError("criterion.start", "must lie in (0, 0.5]");
      if (!(tr.cap > 0.0 && tr.cap <= 0.5)) throw ValidationError("criterion.cap", "must lie in (0, 0.5]");
      if (!(tr.step >= 0.0)) throw ValidationError("criterion.step", "must be non-negative");
      if (tr.hold_through < 1) throw ValidationError("criterion.hold_through", "must be >= 1");
      break;
    case CriterionKind::EwocTdfb:
      if (!(tdfb.s > 0.0)) throw ValidationError("criterion.s", "must be positive");
      if (!(tdfb.alpha_min > 0.0 && tdfb.alpha_min <= tdfb.cap)) {
        throw ValidationError("criterion.alpha_min", "must lie in (0, cap]");
      }
      if (!(tdfb.cap <= 0.5)) throw ValidationError("criterion.cap", "must not exceed 0.5");
      break;
    case CriterionKind::BlrmLoss:
      if (loss.empty()) throw ValidationError("criterion.loss", "loss table required");
      break;
    default:
      break;
  }
}

const char* to_string(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::SqDistance: return "sq-distance";
    case CriterionKind::Cibp: return "cibp";
    case CriterionKind::Aitchison: return "aitchison";
    case CriterionKind::EwocFixed: return "ewoc-fixed";
    case CriterionKind::EwocTr: return "ewoc-tr";
    case CriterionKind::EwocTdfb: return "ewoc-tdfb";
    case CriterionKind::BlrmLoss: return "blrm-loss";
  }
  return "?";
}

std::optional<CriterionKind> criterion_kind_from_string(const std::string& name) {
  for (auto k : {CriterionKind::SqDistance, CriterionKind::Cibp, CriterionKind::Aitchison,
                 CriterionKind::EwocFixed, CriterionKind::EwocTr, CriterionKind::EwocTdfb,
                 CriterionKind::BlrmLoss}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

}  // namespace escalate
