#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "escalate/models.hpp"

namespace escalate {

struct GridOptions {
  std::size_t nodes_per_dim = 0;  // 0: 201 for power-1, 101 for logistic-2
  double width_sd = 8.0;          // half-range in prior standard deviations
  double clamp_eps = 1e-12;       // functionals see p clamped to [eps, 1-eps]

  std::size_t resolved_nodes(const ModelSpec& model) const {
    if (nodes_per_dim != 0) return nodes_per_dim;
    return model.kind == ModelKind::Power1 ? 201 : 101;
  }

  bool operator==(const GridOptions&) const = default;
};

// Per-node model values at one standardized dose.
struct DoseColumn {
  double dose;
  std::vector<double> prob;
  std::vector<double> log_p;
  std::vector<double> log_q;
};

// Immutable quadrature grid over the model parameters: node coordinates,
// log prior mass (density times trapezoid weight), and precomputed columns
// for the doses it was built with.
class Grid {
 public:
  Grid(ModelSpec model, std::span<const double> doses, GridOptions options);

  const ModelSpec& model() const noexcept { return model_; }
  const GridOptions& options() const noexcept { return options_; }
  std::size_t size() const noexcept { return prior_log_mass_.size(); }
  std::size_t dimension() const noexcept { return model_.dimension(); }

  std::span<const double> node(std::size_t k) const {
    return {coords_.data() + k * dimension(), dimension()};
  }
  std::span<const double> prior_log_mass() const noexcept { return prior_log_mass_; }

  // Column for a registered dose, or nullptr.
  const DoseColumn* find(double dose) const noexcept;
  // Registered column if present, otherwise computed on the spot.
  DoseColumn column(double dose) const;

 private:
  ModelSpec model_;
  GridOptions options_;
  std::vector<double> coords_;
  std::vector<double> prior_log_mass_;
  std::vector<DoseColumn> columns_;
};

std::shared_ptr<const Grid> build_grid(const ModelSpec& model, std::span<const double> doses,
                                       GridOptions options = {});

struct Observation {
  double dose;
  bool dlt;
};

// Sufficient statistics at one dose.
struct Tally {
  double dose;
  int dlts = 0;
  int patients = 0;

  bool operator==(const Tally&) const = default;
};

// Discretized posterior. A value type: every update returns a new Posterior.
// Weights are rebuilt from the per-dose tallies in ascending dose order, so the
// result depends only on the multiset of observations.
class Posterior {
 public:
  explicit Posterior(std::shared_ptr<const Grid> grid);

  // Test hook: arbitrary non-negative weights over the grid nodes (renormalized).
  static Posterior with_weights(std::shared_ptr<const Grid> grid, std::vector<double> weights);

  Posterior update(double dose, bool dlt) const;
  Posterior update(std::span<const Observation> batch) const;

  const Grid& grid() const noexcept { return *grid_; }
  std::shared_ptr<const Grid> grid_ptr() const noexcept { return grid_; }
  std::span<const double> weights() const noexcept { return weights_; }
  const std::vector<Tally>& tallies() const noexcept { return tallies_; }
  std::size_t size() const noexcept { return weights_.size(); }

  // Posterior mean of the DLT probability.
  double mean_tox(double dose) const;
  // Posterior mean of the DLT probability, using a column directly.
  double mean_tox(const DoseColumn& column) const;

  // Sum_k w_k f(clamp(p_k)). Throws EngineError if f is non-finite at any node.
  double expect(double dose, const std::function<double(double)>& f) const;

  // Sum_k w_k v_k for per-node values already evaluated on the grid.
  double dot(std::span<const double> per_node) const;

 private:
  Posterior(std::shared_ptr<const Grid> grid, std::vector<Tally> tallies);
  void recompute();

  std::shared_ptr<const Grid> grid_;
  std::vector<Tally> tallies_;
  std::vector<double> weights_;
};

inline double post_mean_tox(const Posterior& post, double dose) { return post.mean_tox(dose); }

inline double post_expect(const Posterior& post, double dose,
                          const std::function<double(double)>& f) {
  return post.expect(dose, f);
}

}  // namespace escalate
