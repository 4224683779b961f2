#include "escalate/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <optional>
#include <random>
#include <regex>

#include <httplib.h>

#include "escalate/config.hpp"
#include "escalate/error.hpp"

namespace escalate {

using nlohmann::json;

namespace {

ApiResponse error_response(int status, const std::string& code, const std::string& message,
                           const std::string& field = "") {
  json err{{"code", code}, {"message", message}};
  if (!field.empty()) err["field"] = field;
  return {status, json{{"error", err}}};
}

std::string now_utc() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

bool valid_id(const std::string& id) {
  static const std::regex pattern("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(id, pattern);
}

std::string random_id() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
  return buf;
}

void fsync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

// Appends one line and fsyncs. `exclusive` creates the file and fails if it exists.
bool append_line(const std::filesystem::path& file, const std::string& line, bool exclusive) {
  const int flags = O_WRONLY | O_APPEND | O_CLOEXEC | (exclusive ? (O_CREAT | O_EXCL) : 0);
  const int fd = ::open(file.c_str(), flags, 0644);
  if (fd < 0) {
    if (exclusive && errno == EEXIST) return false;
    throw EngineError("cannot open " + file.string() + ": " + std::strerror(errno));
  }
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw EngineError("write failed on " + file.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    const int err = errno;
    ::close(fd);
    throw EngineError("fsync failed on " + file.string() + ": " + std::strerror(err));
  }
  ::close(fd);
  if (exclusive) fsync_dir(file.parent_path());
  return true;
}

json dose_rows(const std::vector<DoseAssessment>& doses) {
  json rows = json::array();
  for (const auto& d : doses) {
    rows.push_back({{"dose", d.dose + 1}, {"posterior_mean", d.posterior_mean}, {"criterion", d.criterion}});
  }
  return rows;
}

std::vector<int> parse_outcomes(const json& j) {
  if (!j.is_array() || j.empty()) throw ValidationError("outcomes", "expected a non-empty array of 0/1");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].is_boolean()) {
      out.push_back(j[i].get<bool>() ? 1 : 0);
    } else if (j[i].is_number_integer() && (j[i].get<long>() == 0 || j[i].get<long>() == 1)) {
      out.push_back(static_cast<int>(j[i].get<long>()));
    } else {
      throw ValidationError("outcomes[" + std::to_string(i) + "]", "must be 0 or 1");
    }
  }
  return out;
}

}  // namespace

TrialState replay_events(const DesignEngine& engine, const std::vector<json>& events) {
  if (events.empty() || events.front().value("type", "") != "created") {
    throw EngineError("event log must start with a created event");
  }
  TrialState state = start_trial(engine);
  for (std::size_t i = 1; i < events.size(); ++i) {
    const auto& e = events[i];
    const auto type = e.value("type", "");
    if (type == "cohort") {
      const auto outcomes = parse_outcomes(e.at("outcomes"));
      state = record_cohort(state, engine, e.at("dose").get<std::size_t>() - 1, outcomes,
                            e.value("override", false));
    } else if (type == "terminated") {
      state = terminate_trial(std::move(state), e.value("reason", ""));
    } else {
      throw EngineError("unknown event type '" + type + "'");
    }
  }
  return state;
}

json recommendation_view(const DesignEngine& engine, const TrialState& state) {
  const auto rec = recommend(state, engine);
  const bool complete = is_complete(state, engine);
  json j{{"complete", complete}, {"doses", dose_rows(rec.doses)}, {"criterion_kind", to_string(engine.design().criterion.kind)}};
  j["criterion"] = json::array();
  for (const auto& d : rec.doses) j["criterion"].push_back(d.criterion);
  if (complete) {
    j["dose"] = nullptr;
  } else {
    j["dose"] = rec.dose + 1;
    j["max_admissible"] = max_admissible(state, engine) + 1;
    const int left = engine.design().max_patients - state.patients_treated;
    j["cohort_size"] = std::min(engine.design().cohort_size, left);
  }
  if (engine.design().criterion.is_ewoc()) j["alpha"] = rec.alpha;
  j["mtd"] = state.patients_treated > 0 ? json(select_mtd(state, engine) + 1) : json(nullptr);
  return j;
}

json state_view(const std::string& id, const DesignEngine& engine, const TrialState& state,
                const std::vector<json>& events) {
  json cohorts = json::array();
  for (std::size_t i = 0; i < state.cohorts.size(); ++i) {
    const auto& c = state.cohorts[i];
    json row{{"index", i + 1},
             {"dose", c.dose + 1},
             {"outcomes", c.outcomes},
             {"recommended", c.recommended + 1},
             {"override", c.override_dose}};
    if (engine.design().criterion.is_ewoc()) row["alpha"] = c.alpha;
    cohorts.push_back(row);
  }
  const char* status = state.terminated_externally ? "terminated"
                       : is_complete(state, engine) ? "complete"
                                                    : "open";
  json j{{"id", id},
         {"design", design_to_json(engine.design())},
         {"status", status},
         {"patients_treated", state.patients_treated},
         {"dlt_total", state.dlt_total},
         {"highest_tried", state.highest_tried ? json(*state.highest_tried + 1) : json(nullptr)},
         {"cohorts", cohorts},
         {"recommendation", recommendation_view(engine, state)},
         {"events", events}};
  if (state.terminated_externally) j["termination_reason"] = state.termination_reason;
  return j;
}

struct TrialService::Session {
  struct Snapshot {
    TrialState state;
    std::vector<json> events;
  };

  std::string id;
  std::shared_ptr<const DesignEngine> engine;
  std::filesystem::path log;
  std::mutex writer;  // serializes mutations

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snap_mutex);
    return snap;
  }
  void publish(std::shared_ptr<const Snapshot> s) {
    std::lock_guard lock(snap_mutex);
    snap = std::move(s);
  }

 private:
  mutable std::mutex snap_mutex;
  std::shared_ptr<const Snapshot> snap;
};

TrialService::TrialService(std::filesystem::path data_dir) : dir_(std::move(data_dir)) {
  std::filesystem::create_directories(dir_);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const std::string id = file.stem().string();
    try {
      std::ifstream in(file);
      std::vector<json> events;
      std::string line;
      std::vector<std::string> lines;
      while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
      }
      for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
          events.push_back(json::parse(lines[i]));
        } catch (const json::parse_error&) {
          // A torn final line is an append that never completed; anything earlier is corruption.
          if (i + 1 == lines.size()) {
            warnings_.push_back(id + ": ignored incomplete final event");
            break;
          }
          throw;
        }
      }
      if (events.empty()) throw EngineError("empty log");
      auto session = std::make_shared<Session>();
      session->id = id;
      session->log = file;
      session->engine = std::make_shared<const DesignEngine>(design_from_json(events.front().at("design"), "design"));
      auto state = replay_events(*session->engine, events);
      session->publish(std::make_shared<const Session::Snapshot>(Session::Snapshot{std::move(state), std::move(events)}));
      sessions_.emplace(id, std::move(session));
    } catch (const std::exception& e) {
      warnings_.push_back(id + ": not recovered: " + e.what());
    }
  }
}

TrialService::~TrialService() = default;

std::shared_ptr<TrialService::Session> TrialService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::vector<std::string> TrialService::ids() const {
  std::shared_lock lock(sessions_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

ApiResponse TrialService::create(const json& body) {
  if (!body.is_object()) return error_response(400, "invalid_request", "expected a JSON object");
  for (const auto& item : body.items()) {
    if (item.key() != "design" && item.key() != "id") {
      return error_response(400, "invalid_request", "unknown key", item.key());
    }
  }
  if (!body.contains("design")) return error_response(400, "invalid_design", "required", "design");

  std::shared_ptr<const DesignEngine> engine;
  try {
    engine = std::make_shared<const DesignEngine>(design_from_json(body.at("design"), "design"));
  } catch (const ValidationError& e) {
    return error_response(400, "invalid_design", e.what(), e.path());
  } catch (const std::exception& e) {
    return error_response(400, "invalid_design", e.what());
  }

  std::string id;
  const bool chosen = body.contains("id");
  if (chosen) {
    if (!body.at("id").is_string() || !valid_id(body.at("id").get<std::string>())) {
      return error_response(400, "invalid_request", "id must match [A-Za-z0-9_-]{1,64}", "id");
    }
    id = body.at("id").get<std::string>();
  }

  std::unique_lock lock(sessions_mutex_);
  for (int attempt = 0;; ++attempt) {
    if (!chosen) id = random_id();
    if (sessions_.count(id) == 0) {
      json created{{"seq", 0},
                   {"type", "created"},
                   {"time", now_utc()},
                   {"design", design_to_json(engine->design())}};
      if (append_line(dir_ / (id + ".jsonl"), created.dump(), true)) {
        auto session = std::make_shared<Session>();
        session->id = id;
        session->engine = engine;
        session->log = dir_ / (id + ".jsonl");
        std::vector<json> events{created};
        auto state = start_trial(*engine);
        auto snap = std::make_shared<const Session::Snapshot>(Session::Snapshot{std::move(state), std::move(events)});
        session->publish(snap);
        sessions_.emplace(id, session);
        return {201, state_view(id, *engine, snap->state, snap->events)};
      }
    }
    if (chosen) return error_response(409, "conflict", "trial id already exists", "id");
    if (attempt > 16) throw EngineError("could not allocate a trial id");
  }
}

ApiResponse TrialService::post_cohort(const std::string& id, const json& body) {
  auto session = find(id);
  if (!session) return error_response(404, "not_found", "no trial with id " + id);
  if (!body.is_object()) return error_response(400, "invalid_request", "expected a JSON object");
  for (const auto& item : body.items()) {
    if (item.key() != "dose" && item.key() != "outcomes" && item.key() != "override") {
      return error_response(400, "invalid_request", "unknown key", item.key());
    }
  }
  if (!body.contains("dose") || !body.at("dose").is_number_integer()) {
    return error_response(400, "invalid_request", "expected an integer dose (1-based)", "dose");
  }
  std::vector<int> outcomes;
  try {
    outcomes = parse_outcomes(body.contains("outcomes") ? body.at("outcomes") : json());
  } catch (const ValidationError& e) {
    return error_response(400, "invalid_request", e.what(), e.path());
  }
  bool override_dose = false;
  if (body.contains("override")) {
    if (!body.at("override").is_boolean()) return error_response(400, "invalid_request", "expected a boolean", "override");
    override_dose = body.at("override").get<bool>();
  }

  std::lock_guard writer(session->writer);
  const auto snap = session->snapshot();
  const auto& engine = *session->engine;
  const long dose = body.at("dose").get<long>();
  if (is_complete(snap->state, engine)) {
    return error_response(409, "trial_complete", "trial is complete; no further cohorts accepted");
  }
  if (dose < 1 || dose > static_cast<long>(engine.design().dose_count())) {
    return error_response(422, "inadmissible_dose", "dose outside 1.." + std::to_string(engine.design().dose_count()), "dose");
  }

  std::optional<TrialState> next;
  try {
    next = record_cohort(snap->state, engine, static_cast<std::size_t>(dose - 1), outcomes, override_dose);
  } catch (const StateError& e) {
    return error_response(409, "trial_complete", e.what());
  } catch (const AdmissibilityError& e) {
    return error_response(422, "inadmissible_dose", e.what(), "dose");
  } catch (const ValidationError& e) {
    return error_response(400, "invalid_request", e.what(), e.path());
  }

  json event{{"seq", snap->events.size()},
             {"type", "cohort"},
             {"time", now_utc()},
             {"dose", dose},
             {"outcomes", outcomes},
             {"override", override_dose}};
  append_line(session->log, event.dump(), false);
  auto events = snap->events;
  events.push_back(event);
  auto fresh = std::make_shared<const Session::Snapshot>(Session::Snapshot{std::move(*next), std::move(events)});
  session->publish(fresh);

  json out = state_view(id, engine, fresh->state, fresh->events);
  out["cohort"] = out["cohorts"].back();
  return {200, out};
}

ApiResponse TrialService::get_state(const std::string& id) const {
  auto session = find(id);
  if (!session) return error_response(404, "not_found", "no trial with id " + id);
  const auto snap = session->snapshot();
  return {200, state_view(id, *session->engine, snap->state, snap->events)};
}

ApiResponse TrialService::get_recommendation(const std::string& id) const {
  auto session = find(id);
  if (!session) return error_response(404, "not_found", "no trial with id " + id);
  const auto snap = session->snapshot();
  json out = recommendation_view(*session->engine, snap->state);
  out["id"] = id;
  return {200, out};
}

ApiResponse TrialService::terminate(const std::string& id, const json& body) {
  auto session = find(id);
  if (!session) return error_response(404, "not_found", "no trial with id " + id);
  std::string reason;
  if (!body.is_null()) {
    if (!body.is_object()) return error_response(400, "invalid_request", "expected a JSON object");
    for (const auto& item : body.items()) {
      if (item.key() != "reason") return error_response(400, "invalid_request", "unknown key", item.key());
    }
    if (body.contains("reason")) {
      if (!body.at("reason").is_string()) return error_response(400, "invalid_request", "expected a string", "reason");
      reason = body.at("reason").get<std::string>();
    }
  }

  std::lock_guard writer(session->writer);
  auto snap = session->snapshot();
  const auto& engine = *session->engine;
  if (!snap->state.terminated_externally) {
    json event{{"seq", snap->events.size()}, {"type", "terminated"}, {"time", now_utc()}, {"reason", reason}};
    append_line(session->log, event.dump(), false);
    auto events = snap->events;
    events.push_back(event);
    snap = std::make_shared<const Session::Snapshot>(
        Session::Snapshot{terminate_trial(snap->state, reason), std::move(events)});
    session->publish(snap);
  }
  json out = state_view(id, engine, snap->state, snap->events);
  out["mtd"] = snap->state.patients_treated > 0 ? json(select_mtd(snap->state, engine) + 1) : json(nullptr);
  out["posterior_means"] = engine.posterior_means(snap->state.posterior);
  return {200, out};
}

struct HttpFrontend::Impl {
  TrialService& service;
  httplib::Server server;

  explicit Impl(TrialService& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    reply(res, f());
  } catch (const std::exception& e) {
    reply(res, error_response(500, "internal_error", e.what()));
  }
}

bool parse_body(const httplib::Request& req, httplib::Response& res, json& out, bool allow_empty) {
  if (req.body.empty() && allow_empty) {
    out = nullptr;
    return true;
  }
  try {
    out = json::parse(req.body);
    return true;
  } catch (const json::parse_error& e) {
    reply(res, error_response(400, "invalid_json", e.what()));
    return false;
  }
}

}  // namespace

HttpFrontend::HttpFrontend(TrialService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Post("/v1/trials", [&svc](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (!parse_body(req, res, body, false)) return;
    guarded(res, [&] { return svc.create(body); });
  });
  srv.Get(R"(/v1/trials/([A-Za-z0-9_-]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.get_state(req.matches[1]); });
  });
  srv.Post(R"(/v1/trials/([A-Za-z0-9_-]+)/cohorts)", [&svc](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (!parse_body(req, res, body, false)) return;
    guarded(res, [&] { return svc.post_cohort(req.matches[1], body); });
  });
  srv.Get(R"(/v1/trials/([A-Za-z0-9_-]+)/recommendation)",
          [&svc](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { return svc.get_recommendation(req.matches[1]); });
          });
  srv.Post(R"(/v1/trials/([A-Za-z0-9_-]+)/terminate)", [&svc](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (!parse_body(req, res, body, true)) return;
    guarded(res, [&] { return svc.terminate(req.matches[1], body); });
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      reply(res, error_response(res.status, res.status == 404 ? "not_found" : "error", httplib::status_message(res.status)));
    }
  });
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpFrontend::listen() { return impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace escalate
