#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <string>

#include "pfgan/error.hpp"

// Flat "key = value" text, one pair per line; '#' starts a comment.
namespace pfgan::cli {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline ConfigMap parse_config(std::istream& is, const std::string& source = "<config>") {
  ConfigMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    out[key] = value;
  }
  return out;
}

inline ConfigMap load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path.string());
  return parse_config(is, path.string());
}

}  // namespace pfgan::cli
