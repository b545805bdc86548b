#pragma once

#include <string>

namespace latesim {

// Verbosity from the LATESIM_LOG environment variable: "error" (default),
// "info", or "debug". All log output goes to stderr; stdout carries
// machine-readable results only.
enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level();
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace latesim
