#include "escalate/models.hpp"

#include <cmath>
#include <string>

#include "escalate/error.hpp"

namespace escalate {

namespace {

// log(1 - exp(x)) for x < 0 (Maechler's log1mexp).
double log1mexp(double x) {
  return x > -M_LN2 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void check_open_unit(double d, const char* what) {
  if (!(d > 0.0 && d < 1.0)) {
    throw DomainError(std::string(what) + " must lie in (0,1), got " + std::to_string(d));
  }
}

}  // namespace

void Skeleton::validate() const {
  if (values.empty()) throw ValidationError("values", "skeleton must not be empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0 && values[i] < 1.0)) {
      throw ValidationError("values[" + std::to_string(i) + "]", "must lie in (0,1)");
    }
    if (i > 0 && !(values[i] > values[i - 1])) {
      throw ValidationError("values[" + std::to_string(i) + "]",
                            "skeleton must be strictly increasing");
    }
  }
  if (prior_mtd >= values.size()) {
    throw ValidationError("prior_mtd", "prior MTD index out of range");
  }
}

void ModelSpec::validate() const {
  if (kind == ModelKind::Power1) {
    if (!(power_prior.variance > 0.0) || !std::isfinite(power_prior.variance)) {
      throw ValidationError("prior.variance", "must be strictly positive");
    }
    if (!std::isfinite(power_prior.mean)) throw ValidationError("prior.mean", "must be finite");
    if (scaling == DoseScaling::Logit) {
      throw ValidationError("dose_scaling", "logit scaling is only valid for logistic-2");
    }
  } else {
    const auto& c = logistic_prior.covariance;
    if (!(c[0][0] > 0.0) || !(c[1][1] > 0.0)) {
      throw ValidationError("prior.covariance", "variances must be strictly positive");
    }
    if (c[0][1] != c[1][0]) throw ValidationError("prior.covariance", "must be symmetric");
    if (!(c[0][0] * c[1][1] - c[0][1] * c[1][0] > 0.0)) {
      throw ValidationError("prior.covariance", "must be positive definite");
    }
    if (scaling == DoseScaling::PriorMean) {
      throw ValidationError("dose_scaling", "prior-mean scaling is only valid for power-1");
    }
  }
  if (scaling == DoseScaling::Explicit) {
    if (doses.empty()) throw ValidationError("doses", "explicit scaling requires doses");
    for (std::size_t i = 0; i < doses.size(); ++i) {
      if (!std::isfinite(doses[i])) {
        throw ValidationError("doses[" + std::to_string(i) + "]", "must be finite");
      }
      if (kind == ModelKind::Power1 && !(doses[i] > 0.0 && doses[i] < 1.0)) {
        throw ValidationError("doses[" + std::to_string(i) + "]",
                              "power-model doses must lie in (0,1)");
      }
      if (i > 0 && !(doses[i] > doses[i - 1])) {
        throw ValidationError("doses[" + std::to_string(i) + "]", "must be strictly increasing");
      }
    }
  } else if (!doses.empty()) {
    throw ValidationError("doses", "explicit doses given without dose_scaling \"explicit\"");
  }
}

double power_prob(double dose, double beta) {
  check_open_unit(dose, "standardized dose");
  return std::exp(std::exp(beta) * std::log(dose));
}

double logistic2_prob(double dose, double beta1, double beta2) {
  const double eta = beta1 + beta2 * dose;
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

LogProb power_log_prob(double dose, double beta) {
  check_open_unit(dose, "standardized dose");
  const double lp = std::exp(beta) * std::log(dose);
  return {lp, log1mexp(lp)};
}

LogProb logistic2_log_prob(double dose, double beta1, double beta2) {
  const double eta = beta1 + beta2 * dose;
  return {-softplus(-eta), -softplus(eta)};
}

double model_prob(const ModelSpec& model, double dose, std::span<const double> node) {
  if (model.kind == ModelKind::Power1) return power_prob(dose, node[0]);
  return logistic2_prob(dose, node[0], node[1]);
}

LogProb model_log_prob(const ModelSpec& model, double dose, std::span<const double> node) {
  if (model.kind == ModelKind::Power1) return power_log_prob(dose, node[0]);
  return logistic2_log_prob(dose, node[0], node[1]);
}

Skeleton calibrate_skeleton(std::size_t m, std::size_t prior_mtd, double gamma,
                            double halfwidth) {
  if (m == 0) throw ValidationError("m", "dose count must be positive");
  if (prior_mtd >= m) throw ValidationError("prior_mtd", "prior MTD index out of range");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma", "must lie in (0,1)");
  if (!(halfwidth > 0.0)) throw ValidationError("delta", "half-width must be positive");
  if (!(halfwidth < gamma) || !(halfwidth < 1.0 - gamma)) {
    throw ValidationError("delta", "half-width must be below min(gamma, 1 - gamma)");
  }

  const double log_lo = std::log(gamma - halfwidth);
  const double log_hi = std::log(gamma + halfwidth);

  Skeleton out;
  out.values.assign(m, 0.0);
  out.prior_mtd = prior_mtd;
  out.values[prior_mtd] = gamma;
  for (std::size_t i = prior_mtd; i > 0; --i) {
    out.values[i - 1] = std::exp(log_lo * std::log(out.values[i]) / log_hi);
  }
  for (std::size_t i = prior_mtd; i + 1 < m; ++i) {
    out.values[i + 1] = std::exp(log_hi * std::log(out.values[i]) / log_lo);
  }
  for (std::size_t i = 0; i < m; ++i) {
    const bool ok = out.values[i] > 0.0 && out.values[i] < 1.0 && (i == 0 || out.values[i] > out.values[i - 1]);
    if (!ok) throw ValidationError("delta", "skeleton leaves (0,1) in double precision; use a wider half-width or fewer doses");
  }
  return out;
}

std::vector<double> standardized_doses(const ModelSpec& model, const Skeleton& skeleton) {
  switch (model.scaling) {
    case DoseScaling::Skeleton:
      return skeleton.values;
    case DoseScaling::PriorMean: {
      const auto& prior = model.power_prior;
      const double plug = std::exp(prior.mean + prior.variance / 2.0);
      std::vector<double> d;
      d.reserve(skeleton.size());
      for (double s : skeleton.values) d.push_back(std::exp(std::log(s) / plug));
      return d;
    }
    case DoseScaling::Logit: {
      std::vector<double> d;
      d.reserve(skeleton.size());
      for (double s : skeleton.values) d.push_back(std::log(s / (1.0 - s)));
      return d;
    }
    case DoseScaling::Explicit:
      if (model.doses.size() != skeleton.size()) {
        throw ValidationError("doses", "explicit dose count differs from skeleton length");
      }
      return model.doses;
  }
  return skeleton.values;
}

}  // namespace escalate
