#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>

#include "rollforge/core/url.hpp"
#include "rollforge/env/environment.hpp"

namespace httplib {
class Client;
class Server;
}  // namespace httplib

namespace rollforge::env {

// Client side of the environment wire protocol:
//   POST {endpoint}/reset {task_id, seed}, /step {action}, /close, /snapshot, /restore {snapshot_id}
// Transport failures and 5xx raise WireError; 4xx raise ProtocolError.
class HttpEnv final : public Environment {
 public:
  explicit HttpEnv(const std::string& endpoint, int timeout_ms = 5000);
  ~HttpEnv() override;

  // Probes reachability; any HTTP answer counts as reachable.
  void start() override;
  ResetResult reset(const std::string& task_id, std::uint64_t seed) override;
  StepResult step(const std::string& action) override;
  void close() override;
  SnapshotInfo snapshot() override;
  std::string restore(const std::string& snapshot_id) override;
  std::string endpoint() const override { return url_.str(); }

  // Launches `command` through /bin/sh with "{port}" replaced, then connects to
  // http://127.0.0.1:{port}. The child is terminated when the env is destroyed.
  static std::unique_ptr<HttpEnv> spawn(const std::string& command, int port, int startup_timeout_ms = 10000);

 private:
  nlohmann::json post(const std::string& op, const nlohmann::json& body);

  core::Url url_;
  std::unique_ptr<httplib::Client> client_;
  int child_pid_ = -1;
};

// Serves in-process environments over the wire protocol. Instances live at
// {base}/env/{id}/... and a default instance at {base}/...; each is created on first use.
class EnvServer {
 public:
  using Factory = std::function<std::unique_ptr<Environment>(const std::string& instance_id)>;

  explicit EnvServer(Factory factory);
  ~EnvServer();
  EnvServer(const EnvServer&) = delete;
  EnvServer& operator=(const EnvServer&) = delete;

  // Binds (port 0 picks a free port), starts serving in the background, returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  std::string endpoint(const std::string& instance_id = "") const;

 private:
  struct Instance {
    std::mutex mu;
    std::unique_ptr<Environment> env;
  };
  std::shared_ptr<Instance> instance(const std::string& id);
  nlohmann::json dispatch(const std::string& id, const std::string& op, const nlohmann::json& body);

  Factory factory_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<Instance>> instances_;
};

}  // namespace rollforge::env
