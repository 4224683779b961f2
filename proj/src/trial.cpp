#include "escalate/trial.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "escalate/error.hpp"

namespace escalate {

namespace {

template <class F>
void prefixed(const std::string& prefix, F&& check) {
  try {
    check();
  } catch (const ValidationError& e) {
    throw ValidationError(prefix + e.path(), e.what());
  }
}

}  // namespace

void DesignSpec::validate() const {
  prefixed("model.", [&] { model.validate(); });
  prefixed("skeleton.", [&] { skeleton.validate(); });
  target.validate();
  criterion.validate();
  if (cohort_size < 1) throw ValidationError("cohort_size", "must be a positive integer");
  if (max_patients < 1) throw ValidationError("max_patients", "must be a positive integer");
  if (start_dose >= skeleton.size()) throw ValidationError("start_dose", "outside the dose range");
  if (criterion.kind == CriterionKind::Cibp && !target.a && !target.theta) {
    throw ValidationError("target.a", "cibp needs a or theta");
  }
  const auto d = standardized_doses(model, skeleton);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (model.kind == ModelKind::Power1 && !(d[i] > 0.0 && d[i] < 1.0)) {
      throw ValidationError("doses[" + std::to_string(i) + "]", "power model doses must lie in (0,1)");
    }
    if (i > 0 && !(d[i] > d[i - 1])) {
      throw ValidationError("doses[" + std::to_string(i) + "]", "doses must be strictly increasing");
    }
  }
}

DesignEngine::DesignEngine(DesignSpec design) : design_(std::move(design)) {
  design_.validate();
  doses_ = standardized_doses(design_.model, design_.skeleton);
  grid_ = build_grid(design_.model, doses_, design_.grid);
  gamma_ = design_.target.gamma;

  const auto kind = design_.criterion.kind;
  if (kind == CriterionKind::SqDistance) return;

  const double eps = design_.grid.clamp_eps;
  const double a = kind == CriterionKind::Cibp ? design_.target.asymmetry() : 1.0;
  for (double d : doses_) {
    const DoseColumn* col = grid_->find(d);
    std::vector<double> lo(col->prob.size()), hi;
    if (design_.criterion.is_ewoc()) hi.resize(col->prob.size());
    for (std::size_t k = 0; k < col->prob.size(); ++k) {
      const double p = std::clamp(col->prob[k], eps, 1.0 - eps);
      switch (kind) {
        case CriterionKind::Cibp:
          lo[k] = cibp(p, gamma_, a);
          break;
        case CriterionKind::Aitchison:
          lo[k] = aitchison_distance(p, gamma_);
          break;
        case CriterionKind::BlrmLoss:
          lo[k] = blrm_loss_point(p, design_.criterion.loss);
          break;
        default:
          lo[k] = std::max(0.0, gamma_ - p);
          hi[k] = std::max(0.0, p - gamma_);
          break;
      }
      if (!std::isfinite(lo[k])) throw EngineError("criterion is non-finite at a grid node");
    }
    below_.push_back(std::move(lo));
    above_.push_back(std::move(hi));
  }
}

std::vector<double> DesignEngine::posterior_means(const Posterior& post) const {
  std::vector<double> out;
  out.reserve(doses_.size());
  for (double d : doses_) out.push_back(post.mean_tox(*grid_->find(d)));
  return out;
}

std::vector<DoseAssessment> DesignEngine::assess(const Posterior& post, double alpha) const {
  const auto means = posterior_means(post);
  std::vector<DoseAssessment> out;
  out.reserve(doses_.size());
  for (std::size_t i = 0; i < doses_.size(); ++i) {
    double value;
    if (design_.criterion.kind == CriterionKind::SqDistance) {
      value = sq_distance(means[i], gamma_);
    } else if (design_.criterion.is_ewoc()) {
      value = alpha * post.dot(below_[i]) + (1.0 - alpha) * post.dot(above_[i]);
    } else {
      value = post.dot(below_[i]);
    }
    out.push_back({i, means[i], value});
  }
  return out;
}

TrialState start_trial(const DesignEngine& engine) {
  return TrialState{{}, {}, engine.prior(), 0, 0, std::nullopt, false, {}};
}

bool is_complete(const TrialState& state, const DesignEngine& engine) {
  return state.terminated_externally || state.patients_treated >= engine.design().max_patients;
}

std::size_t max_admissible(const TrialState& state, const DesignEngine& engine) {
  const std::size_t top = engine.design().dose_count() - 1;
  if (!engine.design().no_skip) return top;
  if (!state.highest_tried) return std::min(engine.design().start_dose, top);
  return std::min(*state.highest_tried + 1, top);
}

Recommendation recommend(const TrialState& state, const DesignEngine& engine) {
  const auto& crit = engine.design().criterion;
  const double alpha = crit.is_ewoc() ? crit.alpha_for(state.patients_treated, state.dlt_total) : 0.0;
  Recommendation rec{engine.design().start_dose, alpha, engine.assess(state.posterior, alpha)};
  if (state.cohorts.empty()) return rec;
  const std::size_t top = max_admissible(state, engine);
  std::size_t best = 0;
  for (std::size_t i = 1; i <= top; ++i) {
    if (rec.doses[i].criterion < rec.doses[best].criterion) best = i;
  }
  rec.dose = best;
  return rec;
}

std::size_t next_dose(const TrialState& state, const DesignEngine& engine) {
  if (is_complete(state, engine)) throw StateError("trial is complete");
  return recommend(state, engine).dose;
}

TrialState record_cohort(const TrialState& state, const DesignEngine& engine, std::size_t dose,
                         std::span<const int> outcomes, bool override_dose) {
  if (is_complete(state, engine)) throw StateError("trial is complete");
  return record_cohort(state, engine, recommend(state, engine), dose, outcomes, override_dose);
}

TrialState record_cohort(const TrialState& state, const DesignEngine& engine, const Recommendation& rec,
                         std::size_t dose, std::span<const int> outcomes, bool override_dose) {
  const auto& design = engine.design();
  if (is_complete(state, engine)) throw StateError("trial is complete");
  if (dose >= design.dose_count()) throw ValidationError("dose", "outside the dose range");
  if (outcomes.empty()) throw ValidationError("outcomes", "cohort must contain at least one patient");
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i] != 0 && outcomes[i] != 1) {
      throw ValidationError("outcomes[" + std::to_string(i) + "]", "must be 0 or 1");
    }
  }
  if (state.patients_treated + static_cast<long>(outcomes.size()) > design.max_patients) {
    throw StateError("cohort would exceed max_patients (" + std::to_string(design.max_patients) + ")");
  }

  if (dose != rec.dose && !override_dose) {
    throw AdmissibilityError("dose " + std::to_string(dose + 1) + " differs from the recommended dose " +
                             std::to_string(rec.dose + 1) + " and no override was given");
  }

  TrialState next = state;
  std::vector<Observation> batch;
  batch.reserve(outcomes.size());
  int dlts = 0;
  for (int y : outcomes) {
    next.history.push_back({dose, y == 1});
    batch.push_back({engine.doses()[dose], y == 1});
    dlts += y;
  }
  next.cohorts.push_back({dose, std::vector<int>(outcomes.begin(), outcomes.end()), rec.dose,
                          override_dose && dose != rec.dose, rec.alpha});
  next.posterior = state.posterior.update(batch);
  next.patients_treated += static_cast<int>(outcomes.size());
  next.dlt_total += dlts;
  next.highest_tried = next.highest_tried ? std::max(*next.highest_tried, dose) : dose;
  return next;
}

TrialState terminate_trial(TrialState state, std::string reason) {
  if (state.terminated_externally) return state;
  state.terminated_externally = true;
  state.termination_reason = std::move(reason);
  return state;
}

std::size_t select_mtd(const TrialState& state, const DesignEngine& engine) {
  if (state.patients_treated == 0) throw StateError("no data recorded");
  const auto means = engine.posterior_means(state.posterior);
  const double gamma = engine.design().target.gamma;
  std::size_t best = 0;
  for (std::size_t i = 1; i < means.size(); ++i) {
    if (sq_distance(means[i], gamma) < sq_distance(means[best], gamma)) best = i;
  }
  return best;
}

}  // namespace escalate
