#include "escalate/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "escalate/error.hpp"

namespace escalate {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(path, "expected an object");
  for (const auto& item : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
      throw ValidationError(join(path, item.key()), "unknown key");
    }
  }
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ValidationError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ValidationError(path, "must be finite");
  return v;
}

long integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ValidationError(path, "expected an integer");
  return j.get<long>();
}

double number_or(const json& j, const std::string& path, const char* key, double fallback) {
  return j.contains(key) ? number(j.at(key), join(path, key)) : fallback;
}

long integer_or(const json& j, const std::string& path, const char* key, long fallback) {
  return j.contains(key) ? integer(j.at(key), join(path, key)) : fallback;
}

bool boolean_or(const json& j, const std::string& path, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ValidationError(join(path, key), "expected a boolean");
  return j.at(key).get<bool>();
}

std::string string_or(const json& j, const std::string& path, const char* key, std::string fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ValidationError(join(path, key), "expected a string");
  return j.at(key).get<std::string>();
}

std::vector<double> numbers(const json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], index(path, i)));
  return out;
}

const json& required(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ValidationError(join(path, key), "required");
  return j.at(key);
}

// 1-based in documents, 0-based in memory.
std::size_t dose_index(const json& j, const std::string& path) {
  const long v = integer(j, path);
  if (v < 1) throw ValidationError(path, "dose indices start at 1");
  return static_cast<std::size_t>(v - 1);
}

const char* to_string(ModelKind k) { return k == ModelKind::Power1 ? "power-1" : "logistic-2"; }

const char* to_string(DoseScaling s) {
  switch (s) {
    case DoseScaling::Skeleton: return "skeleton";
    case DoseScaling::PriorMean: return "prior-mean";
    case DoseScaling::Logit: return "logit";
    case DoseScaling::Explicit: return "explicit";
  }
  return "?";
}

ModelSpec model_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "prior", "dose_scaling", "doses"});
  ModelSpec m;
  const auto kind = string_or(j, path, "kind", "power-1");
  if (kind == "power-1") {
    m.kind = ModelKind::Power1;
  } else if (kind == "logistic-2") {
    m.kind = ModelKind::Logistic2;
    m.scaling = DoseScaling::Logit;
  } else {
    throw ValidationError(join(path, "kind"), "expected power-1 or logistic-2");
  }
  if (j.contains("prior")) {
    const auto ppath = join(path, "prior");
    const auto& p = j.at("prior");
    if (m.kind == ModelKind::Power1) {
      check_keys(p, ppath, {"mean", "variance"});
      m.power_prior.mean = number_or(p, ppath, "mean", m.power_prior.mean);
      m.power_prior.variance = number_or(p, ppath, "variance", m.power_prior.variance);
    } else {
      check_keys(p, ppath, {"mean", "covariance"});
      if (p.contains("mean")) {
        const auto mean = numbers(p.at("mean"), join(ppath, "mean"));
        if (mean.size() != 2) throw ValidationError(join(ppath, "mean"), "expected 2 values");
        m.logistic_prior.mean = {mean[0], mean[1]};
      }
      if (p.contains("covariance")) {
        const auto cpath = join(ppath, "covariance");
        const auto& c = p.at("covariance");
        if (!c.is_array() || c.size() != 2) throw ValidationError(cpath, "expected a 2x2 matrix");
        for (std::size_t r = 0; r < 2; ++r) {
          const auto row = numbers(c[r], index(cpath, r));
          if (row.size() != 2) throw ValidationError(index(cpath, r), "expected 2 values");
          m.logistic_prior.covariance[r] = {row[0], row[1]};
        }
      }
    }
  }
  if (j.contains("dose_scaling")) {
    const auto s = string_or(j, path, "dose_scaling", "");
    if (s == "skeleton") {
      m.scaling = DoseScaling::Skeleton;
    } else if (s == "prior-mean") {
      m.scaling = DoseScaling::PriorMean;
    } else if (s == "logit") {
      m.scaling = DoseScaling::Logit;
    } else if (s == "explicit") {
      m.scaling = DoseScaling::Explicit;
    } else {
      throw ValidationError(join(path, "dose_scaling"), "expected skeleton, prior-mean, logit or explicit");
    }
  }
  if (j.contains("doses")) m.doses = numbers(j.at("doses"), join(path, "doses"));
  return m;
}

json model_to_json(const ModelSpec& m) {
  json j{{"kind", to_string(m.kind)}, {"dose_scaling", to_string(m.scaling)}};
  if (m.kind == ModelKind::Power1) {
    j["prior"] = {{"mean", m.power_prior.mean}, {"variance", m.power_prior.variance}};
  } else {
    const auto& c = m.logistic_prior.covariance;
    j["prior"] = {{"mean", {m.logistic_prior.mean[0], m.logistic_prior.mean[1]}},
                  {"covariance", {{c[0][0], c[0][1]}, {c[1][0], c[1][1]}}}};
  }
  if (m.scaling == DoseScaling::Explicit) j["doses"] = m.doses;
  return j;
}

CriterionSpec criterion_from_json(const json& j, const std::string& path) {
  CriterionSpec c;
  if (j.is_string()) {
    const auto k = criterion_kind_from_string(j.get<std::string>());
    if (!k) throw ValidationError(path, "unknown criterion '" + j.get<std::string>() + "'");
    c.kind = *k;
    return c;
  }
  check_keys(j, path, {"kind", "alpha", "start", "step", "cap", "hold_through", "alpha_min", "s", "loss"});
  const auto name = string_or(j, path, "kind", "sq-distance");
  const auto k = criterion_kind_from_string(name);
  if (!k) throw ValidationError(join(path, "kind"), "unknown criterion '" + name + "'");
  c.kind = *k;
  auto only_for = [&](const char* key, std::initializer_list<CriterionKind> kinds) {
    if (j.contains(key) && std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
      throw ValidationError(join(path, key), std::string("not a parameter of ") + escalate::to_string(c.kind));
    }
  };
  only_for("alpha", {CriterionKind::EwocFixed});
  only_for("start", {CriterionKind::EwocTr});
  only_for("step", {CriterionKind::EwocTr});
  only_for("hold_through", {CriterionKind::EwocTr});
  only_for("cap", {CriterionKind::EwocTr, CriterionKind::EwocTdfb});
  only_for("alpha_min", {CriterionKind::EwocTdfb});
  only_for("s", {CriterionKind::EwocTdfb});
  only_for("loss", {CriterionKind::BlrmLoss});

  c.alpha = number_or(j, path, "alpha", c.alpha);
  if (c.kind == CriterionKind::EwocTr) {
    c.tr.start = number_or(j, path, "start", c.tr.start);
    c.tr.step = number_or(j, path, "step", c.tr.step);
    c.tr.cap = number_or(j, path, "cap", c.tr.cap);
    c.tr.hold_through = static_cast<int>(integer_or(j, path, "hold_through", c.tr.hold_through));
  }
  if (c.kind == CriterionKind::EwocTdfb) {
    c.tdfb.alpha_min = number_or(j, path, "alpha_min", c.tdfb.alpha_min);
    c.tdfb.s = number_or(j, path, "s", c.tdfb.s);
    c.tdfb.cap = number_or(j, path, "cap", c.tdfb.cap);
  }
  if (j.contains("loss")) {
    const auto lpath = join(path, "loss");
    const auto& l = j.at("loss");
    if (!l.is_array()) throw ValidationError(lpath, "expected an array of intervals");
    std::vector<LossTable::Interval> ivs;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const auto ipath = index(lpath, i);
      check_keys(l[i], ipath, {"lower", "upper", "loss"});
      ivs.push_back({number(required(l[i], ipath, "lower"), join(ipath, "lower")),
                     number(required(l[i], ipath, "upper"), join(ipath, "upper")),
                     number(required(l[i], ipath, "loss"), join(ipath, "loss"))});
    }
    try {
      c.loss = LossTable::from_intervals(std::move(ivs));
    } catch (const ValidationError& e) {
      throw ValidationError(join(path, e.path()), e.what());
    }
  }
  return c;
}

json criterion_to_json(const CriterionSpec& c) {
  json j{{"kind", escalate::to_string(c.kind)}};
  switch (c.kind) {
    case CriterionKind::EwocFixed:
      j["alpha"] = c.alpha;
      break;
    case CriterionKind::EwocTr:
      j["start"] = c.tr.start;
      j["step"] = c.tr.step;
      j["cap"] = c.tr.cap;
      j["hold_through"] = c.tr.hold_through;
      break;
    case CriterionKind::EwocTdfb:
      j["alpha_min"] = c.tdfb.alpha_min;
      j["s"] = c.tdfb.s;
      j["cap"] = c.tdfb.cap;
      break;
    case CriterionKind::BlrmLoss: {
      json l = json::array();
      for (const auto& iv : c.loss.intervals()) {
        l.push_back({{"lower", iv.lower}, {"upper", iv.upper}, {"loss", iv.loss}});
      }
      j["loss"] = l;
      break;
    }
    default:
      break;
  }
  return j;
}

Skeleton skeleton_from_json(const json& j, const std::string& path, double gamma) {
  check_keys(j, path, {"values", "prior_mtd", "calibrate"});
  Skeleton s;
  if (j.contains("calibrate")) {
    if (j.contains("values")) throw ValidationError(join(path, "values"), "give values or calibrate, not both");
    const auto cpath = join(path, "calibrate");
    const auto& c = j.at("calibrate");
    check_keys(c, cpath, {"m", "halfwidth"});
    const long m = integer(required(c, cpath, "m"), join(cpath, "m"));
    if (m < 1 || m > 100) throw ValidationError(join(cpath, "m"), "must lie in [1, 100]");
    const auto mtd = dose_index(required(j, path, "prior_mtd"), join(path, "prior_mtd"));
    if (mtd >= static_cast<std::size_t>(m)) throw ValidationError(join(path, "prior_mtd"), "outside the dose range");
    const double delta = number(required(c, cpath, "halfwidth"), join(cpath, "halfwidth"));
    try {
      s = calibrate_skeleton(static_cast<std::size_t>(m), mtd, gamma, delta);
    } catch (const ValidationError& e) {
      throw ValidationError(join(cpath, "halfwidth"), e.what());
    }
    return s;
  }
  s.values = numbers(required(j, path, "values"), join(path, "values"));
  s.prior_mtd = j.contains("prior_mtd") ? dose_index(j.at("prior_mtd"), join(path, "prior_mtd")) : 0;
  return s;
}

}  // namespace

DesignSpec design_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"name", "model", "skeleton", "target", "criterion", "cohort_size", "max_patients",
                       "no_skip", "start_dose", "grid"});
  DesignSpec d;
  d.name = string_or(j, path, "name", "design");
  if (j.contains("model")) d.model = model_from_json(j.at("model"), join(path, "model"));

  if (j.contains("target")) {
    const auto tpath = join(path, "target");
    const auto& t = j.at("target");
    check_keys(t, tpath, {"gamma", "a", "theta"});
    d.target.gamma = number_or(t, tpath, "gamma", d.target.gamma);
    if (t.contains("a")) d.target.a = number(t.at("a"), join(tpath, "a"));
    if (t.contains("theta")) d.target.theta = number(t.at("theta"), join(tpath, "theta"));
  }
  d.skeleton = skeleton_from_json(required(j, path, "skeleton"), join(path, "skeleton"), d.target.gamma);
  if (j.contains("criterion")) d.criterion = criterion_from_json(j.at("criterion"), join(path, "criterion"));

  const long cohort = integer_or(j, path, "cohort_size", d.cohort_size);
  const long maxp = integer_or(j, path, "max_patients", d.max_patients);
  if (cohort < 1 || cohort > 1000) throw ValidationError(join(path, "cohort_size"), "must lie in [1, 1000]");
  if (maxp < 1 || maxp > 100000) throw ValidationError(join(path, "max_patients"), "must lie in [1, 100000]");
  d.cohort_size = static_cast<int>(cohort);
  d.max_patients = static_cast<int>(maxp);
  d.no_skip = boolean_or(j, path, "no_skip", d.no_skip);
  if (j.contains("start_dose")) d.start_dose = dose_index(j.at("start_dose"), join(path, "start_dose"));

  if (j.contains("grid")) {
    const auto gpath = join(path, "grid");
    const auto& g = j.at("grid");
    check_keys(g, gpath, {"nodes", "width_sd", "clamp_eps"});
    const long nodes = integer_or(g, gpath, "nodes", 0);
    if (nodes < 0 || nodes > 2001) throw ValidationError(join(gpath, "nodes"), "must lie in [32, 2001]");
    d.grid.nodes_per_dim = static_cast<std::size_t>(nodes);
    d.grid.width_sd = number_or(g, gpath, "width_sd", d.grid.width_sd);
    d.grid.clamp_eps = number_or(g, gpath, "clamp_eps", d.grid.clamp_eps);
  }
  d.grid.nodes_per_dim = d.grid.resolved_nodes(d.model);
  try {
    d.validate();
    build_grid(d.model, {}, d.grid);
  } catch (const ValidationError& e) {
    throw ValidationError(join(path, e.path()), e.what());
  }
  return d;
}

json design_to_json(const DesignSpec& d) {
  json target{{"gamma", d.target.gamma}};
  if (d.target.a) target["a"] = *d.target.a;
  if (d.target.theta) target["theta"] = *d.target.theta;
  return json{{"name", d.name},
              {"model", model_to_json(d.model)},
              {"skeleton", {{"values", d.skeleton.values}, {"prior_mtd", d.skeleton.prior_mtd + 1}}},
              {"target", target},
              {"criterion", criterion_to_json(d.criterion)},
              {"cohort_size", d.cohort_size},
              {"max_patients", d.max_patients},
              {"no_skip", d.no_skip},
              {"start_dose", d.start_dose + 1},
              {"grid",
               {{"nodes", d.grid.resolved_nodes(d.model)},
                {"width_sd", d.grid.width_sd},
                {"clamp_eps", d.grid.clamp_eps}}}};
}

ScenarioSpec scenario_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"name", "true_tox", "mtd", "description"});
  ScenarioSpec s;
  s.name = string_or(j, path, "name", "scenario");
  s.true_tox = numbers(required(j, path, "true_tox"), join(path, "true_tox"));
  s.mtd_index = dose_index(required(j, path, "mtd"), join(path, "mtd"));
  return s;
}

json scenario_to_json(const ScenarioSpec& s) {
  return json{{"name", s.name}, {"true_tox", s.true_tox}, {"mtd", s.mtd_index + 1}};
}

namespace {

json read_json_file(const std::filesystem::path& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ValidationError(field, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(field, path.string() + ": " + e.what());
  }
}

void load_scenarios(const json& entry, const std::string& path, const std::filesystem::path& base_dir,
                    std::vector<ScenarioSpec>& out) {
  if (entry.is_object() && entry.contains("file")) {
    check_keys(entry, path, {"file"});
    if (!entry.at("file").is_string()) throw ValidationError(join(path, "file"), "expected a string");
    auto file = std::filesystem::path(entry.at("file").get<std::string>());
    if (file.is_relative()) file = base_dir / file;
    const auto doc = read_json_file(file, join(path, "file"));
    const std::string fpath = file.filename().string();
    if (doc.is_object() && doc.contains("scenarios")) {
      check_keys(doc, fpath, {"scenarios", "description"});
      const auto& list = doc.at("scenarios");
      if (!list.is_array()) throw ValidationError(join(fpath, "scenarios"), "expected an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        out.push_back(scenario_from_json(list[i], index(join(fpath, "scenarios"), i)));
      }
    } else {
      out.push_back(scenario_from_json(doc, fpath));
    }
    return;
  }
  out.push_back(scenario_from_json(entry, path));
}

}  // namespace

StudyConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, "", {"designs", "scenarios", "reps", "seed", "threads", "output"});
  StudyConfig c;
  const auto& designs = required(j, "", "designs");
  if (!designs.is_array() || designs.empty()) throw ValidationError("designs", "expected a non-empty array");
  for (std::size_t i = 0; i < designs.size(); ++i) {
    c.designs.push_back(design_from_json(designs[i], index("designs", i)));
  }
  const auto& scenarios = required(j, "", "scenarios");
  if (!scenarios.is_array() || scenarios.empty()) {
    throw ValidationError("scenarios", "expected a non-empty array");
  }
  std::vector<std::string> scenario_paths;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const std::size_t before = c.scenarios.size();
    load_scenarios(scenarios[i], index("scenarios", i), base_dir, c.scenarios);
    for (std::size_t k = before; k < c.scenarios.size(); ++k) {
      scenario_paths.push_back(c.scenarios.size() - before > 1 ? index("scenarios", i) + "(" +
                                                                     c.scenarios[k].name + ")"
                                                               : index("scenarios", i));
    }
  }

  for (std::size_t i = 0; i < c.designs.size(); ++i) {
    const auto& d = c.designs[i];
    for (std::size_t k = 0; k < c.scenarios.size(); ++k) {
      const auto& s = c.scenarios[k];
      if (s.true_tox.size() != d.dose_count()) {
        throw ValidationError(index("designs", i) + ".skeleton.values",
                              "has " + std::to_string(d.dose_count()) + " doses but " + scenario_paths[k] +
                                  ".true_tox has " + std::to_string(s.true_tox.size()));
      }
      try {
        for (auto& w : s.validate(d.target.gamma)) c.warnings.push_back(std::move(w));
      } catch (const ValidationError& e) {
        throw ValidationError(scenario_paths[k] + "." + e.path(), e.what());
      }
    }
  }
  std::sort(c.warnings.begin(), c.warnings.end());
  c.warnings.erase(std::unique(c.warnings.begin(), c.warnings.end()), c.warnings.end());

  const long reps = integer_or(j, "", "reps", c.reps);
  if (reps < 1) throw ValidationError("reps", "must be at least 1");
  c.reps = reps;
  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      throw ValidationError("seed", "expected a non-negative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  const long threads = integer_or(j, "", "threads", 0);
  if (threads < 0 || threads > 1024) throw ValidationError("threads", "must lie in [0, 1024]");
  c.threads = static_cast<unsigned>(threads);
  if (j.contains("output")) {
    const auto& o = j.at("output");
    check_keys(o, "output", {"csv", "json", "manifest"});
    c.output.csv = string_or(o, "output", "csv", "");
    c.output.json = string_or(o, "output", "json", "");
    c.output.manifest = string_or(o, "output", "manifest", "");
  }
  return c;
}

StudyConfig parse_config_file(const std::filesystem::path& path) {
  const auto doc = read_json_file(path, "config");
  return parse_config(doc, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

json config_to_json(const StudyConfig& c, bool include_runtime) {
  json designs = json::array(), scenarios = json::array();
  for (const auto& d : c.designs) designs.push_back(design_to_json(d));
  for (const auto& s : c.scenarios) scenarios.push_back(scenario_to_json(s));
  json j{{"designs", designs}, {"scenarios", scenarios}, {"reps", c.reps}, {"seed", c.seed}};
  if (!include_runtime) return j;
  j["threads"] = c.threads;
  json out = json::object();
  if (!c.output.csv.empty()) out["csv"] = c.output.csv;
  if (!c.output.json.empty()) out["json"] = c.output.json;
  if (!c.output.manifest.empty()) out["manifest"] = c.output.manifest;
  if (!out.empty()) j["output"] = out;
  return j;
}

json report_to_json(const StudyReport& report, const StudyConfig& config) {
  json results = json::array();
  for (const auto& c : report.cells) {
    results.push_back({{"design", report.designs[c.design]},
                       {"scenario", report.scenarios[c.scenario]},
                       {"selection_counts", c.selections},
                       {"selection_pct", c.selection_pct},
                       {"pcs", c.pcs},
                       {"dlt_pct", c.dlt_pct},
                       {"mean_dlts", c.mean_dlts},
                       {"accuracy", c.accuracy}});
  }
  json summary = json::array();
  for (const auto& s : report.summary) {
    summary.push_back({{"design", s.design},
                       {"mean_accuracy", s.mean_accuracy},
                       {"geometric_accuracy", s.geometric_accuracy ? json(*s.geometric_accuracy) : json(nullptr)},
                       {"geometric_available", s.geometric_accuracy.has_value()},
                       {"mean_dlts", s.mean_dlts},
                       {"mean_dlt_pct", s.mean_dlt_pct}});
  }
  return json{{"config", config_to_json(config, false)},
              {"reps", report.reps},
              {"seed", report.seed},
              {"results", results},
              {"summary", summary}};
}

}  // namespace escalate
