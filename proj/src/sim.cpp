#include "escalate/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "escalate/error.hpp"

namespace escalate {

std::vector<std::string> ScenarioSpec::validate(double gamma) const {
  if (true_tox.empty()) throw ValidationError("true_tox", "must not be empty");
  for (std::size_t i = 0; i < true_tox.size(); ++i) {
    if (!(true_tox[i] > 0.0 && true_tox[i] < 1.0)) {
      throw ValidationError("true_tox[" + std::to_string(i) + "]", "must lie in (0,1)");
    }
    if (i > 0 && true_tox[i] < true_tox[i - 1]) {
      throw ValidationError("true_tox[" + std::to_string(i) + "]", "must be non-decreasing");
    }
  }
  if (mtd_index >= true_tox.size()) throw ValidationError("mtd", "outside the dose range");
  const double best = std::abs(true_tox[mtd_index] - gamma);
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < true_tox.size(); ++i) {
    const double d = std::abs(true_tox[i] - gamma);
    if (d < best - 1e-12) {
      throw ValidationError("mtd", "dose " + std::to_string(i + 1) + " is closer to the target");
    }
    if (i != mtd_index && std::abs(d - best) <= 1e-12) {
      warnings.push_back("scenario " + name + ": dose " + std::to_string(i + 1) +
                         " ties with the designated MTD");
    }
  }
  return warnings;
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t cell, std::uint64_t rep) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(cell), static_cast<std::uint32_t>(cell >> 32),
                    static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32)};
  return std::mt19937_64(seq);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

SimulatedTrial simulate_trial(const ScenarioSpec& scenario, const DesignEngine& engine,
                              std::mt19937_64& rng) {
  const auto& design = engine.design();
  if (scenario.true_tox.size() != design.dose_count()) {
    throw ValidationError("scenario.true_tox", "dose count differs from the design skeleton");
  }
  TrialState state = start_trial(engine);
  std::vector<int> outcomes;
  while (!is_complete(state, engine)) {
    const auto rec = recommend(state, engine);
    const int n = std::min(design.cohort_size, design.max_patients - state.patients_treated);
    outcomes.assign(n, 0);
    for (int& y : outcomes) y = uniform01(rng) < scenario.true_tox[rec.dose] ? 1 : 0;
    state = record_cohort(state, engine, rec, rec.dose, outcomes);
  }
  return {select_mtd(state, engine), state.dlt_total, state.patients_treated, std::move(state.cohorts)};
}

double accuracy_index(const std::vector<double>& selection_probs, const std::vector<double>& true_tox,
                      double gamma) {
  if (selection_probs.size() != true_tox.size()) {
    throw ValidationError("selection_probs", "length differs from the scenario");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < true_tox.size(); ++i) {
    const double d2 = (true_tox[i] - gamma) * (true_tox[i] - gamma);
    num += d2 * selection_probs[i];
    den += d2;
  }
  if (den == 0.0) throw DomainError("accuracy index undefined: every dose sits exactly at the target");
  return 1.0 - static_cast<double>(true_tox.size()) * num / den;
}

std::vector<DesignSummary> summarize(const StudyReport& report) {
  std::vector<DesignSummary> out;
  const std::size_t ns = report.scenarios.size();
  for (std::size_t d = 0; d < report.designs.size(); ++d) {
    DesignSummary s;
    s.design = report.designs[d];
    double log_sum = 0.0;
    bool positive = true;
    for (std::size_t k = 0; k < ns; ++k) {
      const auto& c = report.cell(d, k);
      s.mean_accuracy += c.accuracy;
      s.mean_dlts += c.mean_dlts;
      s.mean_dlt_pct += c.dlt_pct;
      if (c.accuracy > 0.0) {
        log_sum += std::log(c.accuracy);
      } else {
        positive = false;
      }
    }
    if (ns > 0) {
      s.mean_accuracy /= static_cast<double>(ns);
      s.mean_dlts /= static_cast<double>(ns);
      s.mean_dlt_pct /= static_cast<double>(ns);
      if (positive) s.geometric_accuracy = std::exp(log_sum / static_cast<double>(ns));
    }
    out.push_back(std::move(s));
  }
  return out;
}

StudyReport run_study(const std::vector<DesignSpec>& designs, const std::vector<ScenarioSpec>& scenarios,
                      long reps, std::uint64_t seed, unsigned threads) {
  if (reps < 1) throw ValidationError("reps", "must be at least 1");
  if (designs.empty()) throw ValidationError("designs", "at least one design required");
  if (scenarios.empty()) throw ValidationError("scenarios", "at least one scenario required");

  std::vector<DesignEngine> engines;
  engines.reserve(designs.size());
  for (const auto& d : designs) {
    engines.emplace_back(d);
    for (std::size_t k = 0; k < scenarios.size(); ++k) {
      if (scenarios[k].true_tox.size() != d.dose_count()) {
        throw ValidationError("scenarios[" + std::to_string(k) + "].true_tox",
                              "has " + std::to_string(scenarios[k].true_tox.size()) +
                                  " doses but designs." + d.name + ".skeleton has " +
                                  std::to_string(d.dose_count()));
      }
      scenarios[k].validate(d.target.gamma);
    }
  }

  struct RepResult {
    std::size_t selected;
    int dlts;
    int patients;
  };
  const std::size_t ncell = designs.size() * scenarios.size();
  const std::size_t total = ncell * static_cast<std::size_t>(reps);
  std::vector<RepResult> results(total);

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, total));

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  constexpr std::size_t kChunk = 64;
  auto worker = [&] {
    try {
      for (;;) {
        const std::size_t begin = next.fetch_add(kChunk);
        if (begin >= total || failed) return;
        const std::size_t end = std::min(begin + kChunk, total);
        for (std::size_t j = begin; j < end; ++j) {
          const std::size_t cell = j / static_cast<std::size_t>(reps);
          const std::size_t rep = j % static_cast<std::size_t>(reps);
          auto rng = substream(seed, cell, rep);
          const auto t = simulate_trial(scenarios[cell % scenarios.size()],
                                        engines[cell / scenarios.size()], rng);
          results[j] = {t.selected, t.dlt_count, t.patients};
        }
      }
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      failed = true;
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  StudyReport report;
  report.reps = reps;
  report.seed = seed;
  for (const auto& d : designs) report.designs.push_back(d.name);
  for (const auto& s : scenarios) report.scenarios.push_back(s.name);
  for (std::size_t cell = 0; cell < ncell; ++cell) {
    const std::size_t di = cell / scenarios.size(), si = cell % scenarios.size();
    const auto& sc = scenarios[si];
    StudyCell c;
    c.design = di;
    c.scenario = si;
    c.selections.assign(sc.true_tox.size(), 0);
    for (long r = 0; r < reps; ++r) {
      const auto& res = results[cell * static_cast<std::size_t>(reps) + static_cast<std::size_t>(r)];
      c.selections[res.selected] += 1;
      c.dlts += res.dlts;
      c.patients += res.patients;
    }
    std::vector<double> probs;
    for (long n : c.selections) {
      probs.push_back(static_cast<double>(n) / static_cast<double>(reps));
      c.selection_pct.push_back(100.0 * static_cast<double>(n) / static_cast<double>(reps));
    }
    c.pcs = c.selection_pct[sc.mtd_index];
    c.dlt_pct = c.patients > 0 ? 100.0 * static_cast<double>(c.dlts) / static_cast<double>(c.patients) : 0.0;
    c.mean_dlts = static_cast<double>(c.dlts) / static_cast<double>(reps);
    c.accuracy = accuracy_index(probs, sc.true_tox, designs[di].target.gamma);
    report.cells.push_back(std::move(c));
  }
  report.summary = summarize(report);
  return report;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

void write_csv(const StudyReport& report, std::ostream& out) {
  out << "design,scenario,dose,selection_pct,pcs,dlt_pct,accuracy,reps,seed\n";
  for (const auto& c : report.cells) {
    for (std::size_t i = 0; i < c.selection_pct.size(); ++i) {
      out << csv_field(report.designs[c.design]) << ',' << csv_field(report.scenarios[c.scenario]) << ','
          << i + 1 << ',' << format_number(c.selection_pct[i]) << ',' << format_number(c.pcs) << ','
          << format_number(c.dlt_pct) << ',' << format_number(c.accuracy) << ',' << report.reps << ','
          << report.seed << '\n';
    }
  }
}

}  // namespace escalate
