#include "latesim/log.hpp"

#include <cstdlib>
#include <iostream>

namespace latesim {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("LATESIM_LOG");
    if (!env) return LogLevel::error;
    const std::string value(env);
    if (value == "debug" || value == "2") return LogLevel::debug;
    if (value == "info" || value == "1") return LogLevel::info;
    return LogLevel::error;
  }();
  return level;
}

void log_info(const std::string& message) {
  if (log_level() >= LogLevel::info) std::cerr << "[latesim] " << message << '\n';
}

void log_debug(const std::string& message) {
  if (log_level() >= LogLevel::debug) std::cerr << "[latesim:debug] " << message << '\n';
}

}  // namespace latesim
