#pragma once

#include <string>

namespace rollforge::core {

// "http://host:port/prefix" split into parts. Only plain http is supported.
struct Url {
  std::string host;
  int port = 80;
  std::string path;  // no trailing slash; empty for root

  std::string base() const { return "http://" + host + ":" + std::to_string(port); }
  std::string str() const { return base() + path; }
};

Url parse_url(const std::string& text);

}  // namespace rollforge::core
