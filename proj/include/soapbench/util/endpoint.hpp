#pragma once

#include <string>
#include <string_view>

namespace soapbench::util {

// "https://host:8443/v1" -> {"https://host:8443", "/v1"}.
struct Endpoint {
  std::string origin;
  std::string path_prefix;
};

inline Endpoint split_endpoint(std::string_view url) {
  const auto scheme = url.find("://");
  const auto host_start = scheme == std::string_view::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  if (slash == std::string_view::npos) return {std::string(url), ""};
  std::string prefix(url.substr(slash));
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {std::string(url.substr(0, slash)), prefix};
}

}  // namespace soapbench::util
