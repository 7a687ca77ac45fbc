#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace vtforge {

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

// VTFORGE_LOG=quiet|info|debug (default info)
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("VTFORGE_LOG");
        if (!env) return LogLevel::kInfo;
        if (std::strcmp(env, "quiet") == 0 || std::strcmp(env, "0") == 0) return LogLevel::kQuiet;
        if (std::strcmp(env, "debug") == 0 || std::strcmp(env, "2") == 0) return LogLevel::kDebug;
        return LogLevel::kInfo;
    }();
    return level;
}

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::kInfo) std::fprintf(stderr, "[vtforge] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::kDebug) std::fprintf(stderr, "[vtforge] %s\n", msg.c_str());
}

}  // namespace vtforge
