#include "rollforge/core/http_json.hpp"

#include <httplib.h>

#include "rollforge/core/errors.hpp"

namespace rollforge::core {

using nlohmann::json;

JsonHttpServer::JsonHttpServer() : server_(std::make_unique<httplib::Server>()) {
  // No SO_REUSEPORT, so a second bind to a taken port fails.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
}

JsonHttpServer::~JsonHttpServer() { stop(); }

namespace {

httplib::Server::Handler wrap(JsonHttpServer::Handler handler) {
  return [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
    auto fail = [&](int status, const std::string& code, const std::string& msg) {
      res.status = status;
      res.set_content(json{{"error", {{"code", code}, {"message", msg}}}}.dump(), "application/json");
    };
    try {
      const json body = req.body.empty() ? json::object() : json::parse(req.body);
      std::vector<std::string> captures;
      for (std::size_t i = 1; i < req.matches.size(); ++i) captures.push_back(req.matches[i].str());
      res.set_content(handler(body, captures).dump(), "application/json");
    } catch (const json::exception& e) {
      fail(400, "bad_request", e.what());
    } catch (const ValidationError& e) {
      fail(400, "invalid", e.what());
    } catch (const ProtocolError& e) {
      fail(400, "protocol_error", e.what());
    } catch (const OrderingError& e) {
      fail(409, "ordering", e.what());
    } catch (const ConfigError& e) {
      fail(400, "config", e.what());
    } catch (const WireError& e) {
      fail(503, "unavailable", e.what());
    } catch (const std::exception& e) {
      fail(500, "internal", e.what());
    }
  };
}

}  // namespace

void JsonHttpServer::post(const std::string& pattern, Handler handler) { server_->Post(pattern, wrap(std::move(handler))); }

void JsonHttpServer::get(const std::string& pattern, Handler handler) { server_->Get(pattern, wrap(std::move(handler))); }

int JsonHttpServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw WireError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void JsonHttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string JsonHttpServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

JsonHttpClient::JsonHttpClient(const std::string& base_url, int timeout_ms)
    : url_(parse_url(base_url)), client_(std::make_unique<httplib::Client>(url_.host, url_.port)) {
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client_->set_connection_timeout(sec, usec);
  client_->set_read_timeout(sec, usec);
  client_->set_write_timeout(sec, usec);
}

JsonHttpClient::~JsonHttpClient() = default;

json JsonHttpClient::decode(const std::string& what, int status, const std::string& body) {
  json reply;
  try {
    reply = json::parse(body);
  } catch (const json::parse_error&) {
    if (status >= 400 && status < 500) throw ProtocolError(what + ": HTTP " + std::to_string(status));
    throw WireError(what + ": unparseable reply");
  }
  std::string message = body;
  if (reply.contains("error") && reply["error"].is_object()) message = reply["error"].value("message", body);
  if (status >= 400 && status < 500) throw ProtocolError(what + ": " + message);
  if (status >= 500) throw WireError(what + ": " + message);
  return reply;
}

json JsonHttpClient::post(const std::string& path, const json& body) {
  const std::string what = url_.str() + path;
  auto res = client_->Post(url_.path + path, body.dump(), "application/json");
  if (!res) throw WireError(what + ": " + httplib::to_string(res.error()));
  return decode(what, res->status, res->body);
}

json JsonHttpClient::get(const std::string& path) {
  const std::string what = url_.str() + path;
  auto res = client_->Get(url_.path + path);
  if (!res) throw WireError(what + ": " + httplib::to_string(res.error()));
  return decode(what, res->status, res->body);
}

}  // namespace rollforge::core
