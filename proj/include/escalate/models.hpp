#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace escalate {

// Prior guesses of the DLT probability at each dose level.
struct Skeleton {
  std::vector<double> values;
  std::size_t prior_mtd = 0;  // 0-based

  std::size_t size() const noexcept { return values.size(); }

  // Strictly increasing, inside (0,1), prior_mtd in range.
  void validate() const;

  bool operator==(const Skeleton&) const = default;
};

enum class ModelKind { Power1, Logistic2 };

// How the skeleton is turned into standardized dose values d_i.
//   Skeleton  - d_i = skeleton_i (power model: prior median curve equals the skeleton)
//   PriorMean - d_i = skeleton_i^(1 / E0[exp(beta)]), the plug-in convention
//               where psi(d_i, E0[exp(beta)]) reproduces the skeleton
//   Logit     - d_i = logit(skeleton_i) (logistic model only)
//   Explicit  - d_i supplied in ModelSpec::doses
enum class DoseScaling { Skeleton, PriorMean, Logit, Explicit };

struct NormalPrior {
  double mean = 0.0;
  double variance = 1.34;

  bool operator==(const NormalPrior&) const = default;
};

struct BivariateNormalPrior {
  std::array<double, 2> mean{0.0, 1.0};
  std::array<std::array<double, 2>, 2> covariance{{{1.0, 0.0}, {0.0, 0.25}}};

  bool operator==(const BivariateNormalPrior&) const = default;
};

struct ModelSpec {
  ModelKind kind = ModelKind::Power1;
  NormalPrior power_prior;             // beta for Power1
  BivariateNormalPrior logistic_prior; // (beta1, beta2) for Logistic2
  DoseScaling scaling = DoseScaling::Skeleton;
  std::vector<double> doses;           // only for DoseScaling::Explicit

  std::size_t dimension() const noexcept { return kind == ModelKind::Power1 ? 1 : 2; }
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

// d^exp(beta); d must lie in (0,1).
double power_prob(double dose, double beta);

// exp(b1 + b2 d) / (1 + exp(b1 + b2 d)), evaluated without overflow.
double logistic2_prob(double dose, double beta1, double beta2);

// log p and log(1-p), both accurate in the tails.
struct LogProb {
  double log_p;
  double log_q;
};
LogProb power_log_prob(double dose, double beta);
LogProb logistic2_log_prob(double dose, double beta1, double beta2);

// DLT probability at a parameter node (1 or 2 coordinates depending on kind).
double model_prob(const ModelSpec& model, double dose, std::span<const double> node);
LogProb model_log_prob(const ModelSpec& model, double dose, std::span<const double> node);

// Indifference-interval skeleton: value at prior_mtd equals gamma and adjacent
// levels are spaced so each neighbour is indistinguishable within gamma +- halfwidth.
// prior_mtd is 0-based.
Skeleton calibrate_skeleton(std::size_t m, std::size_t prior_mtd, double gamma,
                            double halfwidth);

// Standardized dose values for the model, derived from the skeleton.
std::vector<double> standardized_doses(const ModelSpec& model, const Skeleton& skeleton);

}  // namespace escalate
