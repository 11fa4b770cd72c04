#pragma once

#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rollforge/core/url.hpp"

namespace httplib {
class Client;
class Server;
}  // namespace httplib

namespace rollforge::core {

// JSON request/response server on top of cpp-httplib. Handler exceptions map to
// {"error": {code, message}} bodies: malformed input, ValidationError, ProtocolError and
// ConfigError give 400, OrderingError 409, WireError 503, anything else 500.
class JsonHttpServer {
 public:
  // `captures` holds the regex groups of the matched route.
  using Handler = std::function<nlohmann::json(const nlohmann::json& body, const std::vector<std::string>& captures)>;

  JsonHttpServer();
  ~JsonHttpServer();
  JsonHttpServer(const JsonHttpServer&) = delete;
  JsonHttpServer& operator=(const JsonHttpServer&) = delete;

  void post(const std::string& pattern, Handler handler);
  void get(const std::string& pattern, Handler handler);

  // Port 0 binds any free port. Returns the bound port; throws WireError on conflict.
  int start(const std::string& host, int port);
  void stop();
  int port() const noexcept { return port_; }
  std::string base_url() const;

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
};

// Client mirroring the server's error mapping: no answer or 5xx raises WireError,
// 4xx raises ProtocolError.
class JsonHttpClient {
 public:
  explicit JsonHttpClient(const std::string& base_url, int timeout_ms = 5000);
  ~JsonHttpClient();

  nlohmann::json post(const std::string& path, const nlohmann::json& body);
  nlohmann::json get(const std::string& path);
  const Url& url() const noexcept { return url_; }

 private:
  nlohmann::json decode(const std::string& what, int status, const std::string& body);

  Url url_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace rollforge::core
