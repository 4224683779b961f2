#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "escalate/trial.hpp"

namespace escalate {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

// Fold a session's event log into its trial state. The first event must be
// "created"; later events are "cohort" and "terminated".
TrialState replay_events(const DesignEngine& engine, const std::vector<nlohmann::json>& events);

nlohmann::json state_view(const std::string& id, const DesignEngine& engine, const TrialState& state,
                          const std::vector<nlohmann::json>& events);
nlohmann::json recommendation_view(const DesignEngine& engine, const TrialState& state);

// Trial sessions backed by one append-only JSON-lines file each. Existing logs
// in the data directory are replayed on construction.
class TrialService {
 public:
  explicit TrialService(std::filesystem::path data_dir);
  ~TrialService();

  ApiResponse create(const nlohmann::json& body);
  ApiResponse post_cohort(const std::string& id, const nlohmann::json& body);
  ApiResponse get_state(const std::string& id) const;
  ApiResponse get_recommendation(const std::string& id) const;
  ApiResponse terminate(const std::string& id, const nlohmann::json& body);

  std::vector<std::string> ids() const;
  const std::vector<std::string>& recovery_warnings() const noexcept { return warnings_; }
  const std::filesystem::path& data_dir() const noexcept { return dir_; }

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;

  std::filesystem::path dir_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::vector<std::string> warnings_;
};

// HTTP/JSON frontend for a TrialService, routes under /v1.
class HttpFrontend {
 public:
  explicit HttpFrontend(TrialService& service);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  // Port 0 binds an ephemeral port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace escalate
