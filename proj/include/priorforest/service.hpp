#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "priorforest/bundle.hpp"
#include "priorforest/elicitation.hpp"

namespace httplib {
class Server;
}

namespace priorforest {

struct ServiceConfig {
  // Sessions are stored here as inline bundle JSON; empty keeps them in memory.
  std::string session_dir;
  std::string static_dir;
  int workers = 1;
};

/// Session dir from the option, else PRIORFOREST_SESSION_DIR, else empty.
std::string resolve_session_dir(const std::string& option);

struct Session {
  std::string id;
  ProjectBundle bundle;
  std::shared_ptr<const HDJointPrior> prior;
  std::optional<GuideState> guide;
  std::mutex mu;
};

struct Job {
  std::string id;
  std::string session;
  std::string status = "queued";
  nlohmann::json result;
  nlohmann::json error;
};

/// Tree edits on a canonical forest. `op` is set, attach, detach or merge.
/// Returns the new tree string.
std::string edit_tree(const HDJointPrior& prior, const nlohmann::json& edit);

/// Nodes, priors and parameter names of an assembled prior.
nlohmann::json tree_view(const HDJointPrior& prior);

/// Rewrites explicit choices against the canonical forest, so later choices
/// can be keyed by canonical names without order flips.
void canonicalize_bundle(ProjectBundle& b, const HDJointPrior& prior);

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void mount(httplib::Server& server);

  std::string create_session(const nlohmann::json& body);
  std::shared_ptr<Session> find_session(const std::string& id);
  std::vector<std::string> session_ids();

 private:
  void load_sessions();
  void persist(const Session& s);
  std::string submit(const std::shared_ptr<Session>& s, const McmcSettings& settings);
  void work();

  ServiceConfig config_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::pair<std::shared_ptr<Job>, std::function<nlohmann::json()>>> queue_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::vector<std::thread> pool_;
  uint64_t counter_ = 0;
};

/// Blocks serving on host:port until the process is stopped.
int serve(const ServiceConfig& config, const std::string& host, int port);

}  // namespace priorforest
