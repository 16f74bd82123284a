#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

namespace tamcl {

enum class LogLevel { debug = 0, info = 1, warn = 2, quiet = 3 };

// Verbosity is controlled by the TAMCL_LOG environment variable
// (debug | info | warn | quiet); default is info.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("TAMCL_LOG");
        std::string v = env ? env : "info";
        if (v == "debug") return LogLevel::debug;
        if (v == "warn") return LogLevel::warn;
        if (v == "quiet") return LogLevel::quiet;
        return LogLevel::info;
    }();
    return level;
}

inline void log_line(LogLevel level, const std::string& msg) {
    if (level < log_level()) return;
    const char* tag = level == LogLevel::debug ? "debug" : level == LogLevel::info ? "info" : "warn";
    std::cerr << "[tamcl:" << tag << "] " << msg << "\n";
}

inline void log_debug(const std::string& msg) { log_line(LogLevel::debug, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log_line(LogLevel::warn, msg); }

}  // namespace tamcl
