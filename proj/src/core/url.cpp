#include "rollforge/core/url.hpp"

#include "rollforge/core/errors.hpp"

namespace rollforge::core {

Url parse_url(const std::string& text) {
  static constexpr std::string_view kScheme = "http://";
  std::string_view rest = text;
  if (rest.starts_with(kScheme)) {
    rest.remove_prefix(kScheme.size());
  } else if (rest.find("://") != std::string_view::npos) {
    throw ConfigError("unsupported URL scheme in '" + text + "'");
  }
  Url url;
  const auto slash = rest.find('/');
  std::string_view authority = rest.substr(0, slash);
  if (slash != std::string_view::npos) url.path = std::string(rest.substr(slash));
  while (!url.path.empty() && url.path.back() == '/') url.path.pop_back();
  const auto colon = authority.rfind(':');
  if (colon == std::string_view::npos) {
    url.host = std::string(authority);
  } else {
    url.host = std::string(authority.substr(0, colon));
    try {
      url.port = std::stoi(std::string(authority.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("bad port in URL '" + text + "'");
    }
  }
  if (url.host.empty()) throw ConfigError("missing host in URL '" + text + "'");
  return url;
}

}  // namespace rollforge::core
