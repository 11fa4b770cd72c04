#include "rollforge/env/http_env.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include <chrono>
#include <regex>
#include <thread>

#include <httplib.h>

extern char** environ;

namespace rollforge::env {

using nlohmann::json;

HttpEnv::HttpEnv(const std::string& endpoint, int timeout_ms) : url_(core::parse_url(endpoint)) {
  client_ = std::make_unique<httplib::Client>(url_.host, url_.port);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client_->set_connection_timeout(sec, usec);
  client_->set_read_timeout(sec, usec);
  client_->set_write_timeout(sec, usec);
}

HttpEnv::~HttpEnv() {
  if (child_pid_ > 0) {
    ::kill(child_pid_, SIGTERM);
    ::waitpid(child_pid_, nullptr, 0);
  }
}

json HttpEnv::post(const std::string& op, const json& body) {
  auto res = client_->Post(url_.path + "/" + op, body.dump(), "application/json");
  if (!res) {
    throw WireError(endpoint() + "/" + op + ": " + httplib::to_string(res.error()));
  }
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::parse_error&) {
    if (res->status >= 400 && res->status < 500) throw ProtocolError(endpoint() + "/" + op + ": HTTP " + std::to_string(res->status));
    throw WireError(endpoint() + "/" + op + ": unparseable reply");
  }
  auto message = [&] {
    if (reply.contains("error") && reply["error"].is_object()) return reply["error"].value("message", res->body);
    return res->body;
  };
  if (res->status >= 400 && res->status < 500) throw ProtocolError(endpoint() + "/" + op + ": " + message());
  if (res->status >= 500) throw WireError(endpoint() + "/" + op + ": " + message());
  return reply;
}

void HttpEnv::start() {
  auto res = client_->Get(url_.path + "/");
  if (!res) throw WireError(endpoint() + ": " + httplib::to_string(res.error()));
}

ResetResult HttpEnv::reset(const std::string& task_id, std::uint64_t seed) {
  return post("reset", {{"task_id", task_id}, {"seed", seed}}).get<ResetResult>();
}

StepResult HttpEnv::step(const std::string& action) {
  return post("step", {{"action", action}}).get<StepResult>();
}

void HttpEnv::close() { post("close", json::object()); }

SnapshotInfo HttpEnv::snapshot() { return post("snapshot", json::object()).get<SnapshotInfo>(); }

std::string HttpEnv::restore(const std::string& snapshot_id) {
  auto reply = post("restore", {{"snapshot_id", snapshot_id}});
  return reply.at("state_hash").get<std::string>();
}

std::unique_ptr<HttpEnv> HttpEnv::spawn(const std::string& command, int port, int startup_timeout_ms) {
  const std::string cmd = std::regex_replace(command, std::regex(R"(\{port\})"), std::to_string(port));
  const char* argv[] = {"/bin/sh", "-c", cmd.c_str(), nullptr};
  pid_t pid = -1;
  if (posix_spawn(&pid, "/bin/sh", nullptr, nullptr, const_cast<char* const*>(argv), environ) != 0) {
    throw WireError("failed to spawn '" + cmd + "'");
  }
  auto env = std::make_unique<HttpEnv>("http://127.0.0.1:" + std::to_string(port));
  env->child_pid_ = pid;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(startup_timeout_ms);
  for (;;) {
    try {
      env->start();
      return env;
    } catch (const WireError&) {
      if (std::chrono::steady_clock::now() > deadline) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }
}

// --- server --------------------------------------------------------------------

EnvServer::EnvServer(Factory factory) : factory_(std::move(factory)) {}

EnvServer::~EnvServer() { stop(); }

std::shared_ptr<EnvServer::Instance> EnvServer::instance(const std::string& id) {
  std::lock_guard lock(mu_);
  auto& slot = instances_[id];
  if (!slot) {
    slot = std::make_shared<Instance>();
    slot->env = factory_(id);
  }
  return slot;
}

json EnvServer::dispatch(const std::string& id, const std::string& op, const json& body) {
  auto inst = instance(id);
  std::lock_guard lock(inst->mu);
  Environment& env = *inst->env;
  if (op == "reset") {
    return json(env.reset(body.at("task_id").get<std::string>(), body.value("seed", std::uint64_t{0})));
  }
  if (op == "step") return json(env.step(body.at("action").get<std::string>()));
  if (op == "close") {
    env.close();
    return json{{"ok", true}};
  }
  if (op == "snapshot") return json(env.snapshot());
  if (op == "restore") {
    auto hash = env.restore(body.at("snapshot_id").get<std::string>());
    return json{{"ok", true}, {"state_hash", hash}};
  }
  throw ProtocolError("unknown operation '" + op + "'");
}

int EnvServer::start(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const bool named = req.matches.size() == 3;
    const std::string id = named ? req.matches[1].str() : std::string{};
    const std::string op = req.matches[named ? 2 : 1].str();
    auto fail = [&](int status, const std::string& code, const std::string& msg) {
      res.status = status;
      res.set_content(json{{"error", {{"code", code}, {"message", msg}}}}.dump(), "application/json");
    };
    try {
      json body = req.body.empty() ? json::object() : json::parse(req.body);
      res.set_content(dispatch(id, op, body).dump(), "application/json");
    } catch (const json::exception& e) {
      fail(400, "bad_request", e.what());
    } catch (const ProtocolError& e) {
      fail(400, "protocol_error", e.what());
    } catch (const WireError& e) {
      fail(503, "env_unavailable", e.what());
    } catch (const std::exception& e) {
      fail(500, "internal", e.what());
    }
  };
  server_->Post(R"(/env/([\w\-\.]+)/(reset|step|close|snapshot|restore))", handler);
  server_->Post(R"(/(reset|step|close|snapshot|restore))", handler);
  server_->Get(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"ok":true})", "application/json");
  });
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw WireError("cannot bind environment server to " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void EnvServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string EnvServer::endpoint(const std::string& instance_id) const {
  std::string base = "http://" + host_ + ":" + std::to_string(port_);
  return instance_id.empty() ? base : base + "/env/" + instance_id;
}

}  // namespace rollforge::env
