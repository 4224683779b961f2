#include "escalate/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "escalate/error.hpp"

namespace escalate {

namespace {

constexpr std::size_t kMinNodes = 32;

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  const double h = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + h * static_cast<double>(i);
  v.back() = hi;
  return v;
}

double trapezoid_log_factor(std::size_t i, std::size_t n) {
  return (i == 0 || i + 1 == n) ? -M_LN2 : 0.0;
}

DoseColumn make_column(const ModelSpec& model, std::span<const double> coords, std::size_t dim,
                       double dose) {
  const std::size_t n = coords.size() / dim;
  DoseColumn c{dose, std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const auto lp = model_log_prob(model, dose, coords.subspan(k * dim, dim));
    c.log_p[k] = lp.log_p;
    c.log_q[k] = lp.log_q;
    c.prob[k] = std::exp(lp.log_p);
  }
  return c;
}

}  // namespace

Grid::Grid(ModelSpec model, std::span<const double> doses, GridOptions options)
    : model_(std::move(model)), options_(options) {
  model_.validate();
  const std::size_t n = options_.resolved_nodes(model_);
  if (n < kMinNodes) {
    throw ValidationError("grid.nodes", "at least " + std::to_string(kMinNodes) +
                                            " nodes per dimension required");
  }
  if (!(options_.width_sd > 0.0)) throw ValidationError("grid.width_sd", "must be positive");
  if (!(options_.clamp_eps > 0.0 && options_.clamp_eps < 0.5)) {
    throw ValidationError("grid.clamp_eps", "must lie in (0, 0.5)");
  }

  if (model_.kind == ModelKind::Power1) {
    const auto& prior = model_.power_prior;
    const double sd = std::sqrt(prior.variance);
    coords_ = linspace(prior.mean - options_.width_sd * sd, prior.mean + options_.width_sd * sd, n);
    prior_log_mass_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = coords_[i] - prior.mean;
      prior_log_mass_[i] = -0.5 * z * z / prior.variance + trapezoid_log_factor(i, n);
    }
  } else {
    const auto& prior = model_.logistic_prior;
    const auto& c = prior.covariance;
    const double det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    const double i00 = c[1][1] / det, i11 = c[0][0] / det, i01 = -c[0][1] / det;
    const auto ax0 = linspace(prior.mean[0] - options_.width_sd * std::sqrt(c[0][0]),
                              prior.mean[0] + options_.width_sd * std::sqrt(c[0][0]), n);
    const auto ax1 = linspace(prior.mean[1] - options_.width_sd * std::sqrt(c[1][1]),
                              prior.mean[1] + options_.width_sd * std::sqrt(c[1][1]), n);
    coords_.reserve(2 * n * n);
    prior_log_mass_.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double z0 = ax0[i] - prior.mean[0], z1 = ax1[j] - prior.mean[1];
        coords_.push_back(ax0[i]);
        coords_.push_back(ax1[j]);
        prior_log_mass_.push_back(-0.5 * (i00 * z0 * z0 + 2.0 * i01 * z0 * z1 + i11 * z1 * z1) +
                                  trapezoid_log_factor(i, n) + trapezoid_log_factor(j, n));
      }
    }
  }

  columns_.reserve(doses.size());
  for (double d : doses) {
    if (!find(d)) columns_.push_back(make_column(model_, coords_, dimension(), d));
  }
}

const DoseColumn* Grid::find(double dose) const noexcept {
  for (const auto& c : columns_) {
    if (c.dose == dose) return &c;
  }
  return nullptr;
}

DoseColumn Grid::column(double dose) const {
  if (const auto* c = find(dose)) return *c;
  return make_column(model_, coords_, dimension(), dose);
}

std::shared_ptr<const Grid> build_grid(const ModelSpec& model, std::span<const double> doses,
                                       GridOptions options) {
  return std::make_shared<const Grid>(model, doses, options);
}

Posterior::Posterior(std::shared_ptr<const Grid> grid) : grid_(std::move(grid)) { recompute(); }

Posterior::Posterior(std::shared_ptr<const Grid> grid, std::vector<Tally> tallies)
    : grid_(std::move(grid)), tallies_(std::move(tallies)) {
  recompute();
}

Posterior Posterior::with_weights(std::shared_ptr<const Grid> grid, std::vector<double> weights) {
  if (weights.size() != grid->size()) throw EngineError("weight vector does not match grid size");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw EngineError("weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw EngineError("weights sum to zero");
  for (double& w : weights) w /= total;
  Posterior p(std::move(grid));
  p.weights_ = std::move(weights);
  return p;
}

Posterior Posterior::update(double dose, bool dlt) const {
  const Observation obs{dose, dlt};
  return update(std::span<const Observation>(&obs, 1));
}

Posterior Posterior::update(std::span<const Observation> batch) const {
  auto tallies = tallies_;
  for (const auto& obs : batch) {
    auto it = std::lower_bound(tallies.begin(), tallies.end(), obs.dose,
                               [](const Tally& t, double d) { return t.dose < d; });
    if (it == tallies.end() || it->dose != obs.dose) it = tallies.insert(it, Tally{obs.dose});
    it->patients += 1;
    it->dlts += obs.dlt ? 1 : 0;
  }
  return Posterior(grid_, std::move(tallies));
}

void Posterior::recompute() {
  const auto prior = grid_->prior_log_mass();
  std::vector<double> lw(prior.begin(), prior.end());
  for (const auto& t : tallies_) {
    const DoseColumn* col = grid_->find(t.dose);
    DoseColumn local;
    if (!col) {
      local = grid_->column(t.dose);
      col = &local;
    }
    const double tox = t.dlts, safe = t.patients - t.dlts;
    for (std::size_t k = 0; k < lw.size(); ++k) {
      if (tox > 0) lw[k] += tox * col->log_p[k];
      if (safe > 0) lw[k] += safe * col->log_q[k];
    }
  }
  double top = -std::numeric_limits<double>::infinity();
  for (double v : lw) top = std::max(top, v);
  if (!std::isfinite(top)) throw EngineError("posterior weights underflowed at every node");

  weights_.resize(lw.size());
  double total = 0.0;
  for (std::size_t k = 0; k < lw.size(); ++k) {
    weights_[k] = std::exp(lw[k] - top);
    total += weights_[k];
  }
  for (double& w : weights_) w /= total;
}

double Posterior::mean_tox(double dose) const {
  if (const auto* c = grid_->find(dose)) return mean_tox(*c);
  return mean_tox(grid_->column(dose));
}

double Posterior::mean_tox(const DoseColumn& column) const { return dot(column.prob); }

double Posterior::dot(std::span<const double> per_node) const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) s += weights_[k] * per_node[k];
  return s;
}

double Posterior::expect(double dose, const std::function<double(double)>& f) const {
  const double eps = grid_->options().clamp_eps;
  const DoseColumn* col = grid_->find(dose);
  DoseColumn local;
  if (!col) {
    local = grid_->column(dose);
    col = &local;
  }
  double s = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    const double v = f(std::clamp(col->prob[k], eps, 1.0 - eps));
    if (!std::isfinite(v)) throw EngineError("functional is non-finite at a grid node");
    s += weights_[k] * v;
  }
  return s;
}

}  // namespace escalate
