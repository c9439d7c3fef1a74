#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace tijepa::log {

enum class Level { error = 0, info = 1, debug = 2 };

// Verbosity from TIJEPA_LOG (error|info|debug); info when unset.
inline Level& threshold() {
    static Level level = [] {
        const char* env = std::getenv("TIJEPA_LOG");
        const std::string_view v = env ? env : "";
        if (v == "error") return Level::error;
        if (v == "debug") return Level::debug;
        return Level::info;
    }();
    return level;
}

inline void write(Level lvl, std::string_view tag, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
    std::cerr << "[" << tag << "] " << msg << '\n';
}

inline void error(const std::string& msg) { write(Level::error, "error", msg); }
inline void warn(const std::string& msg) { write(Level::info, "warn", msg); }
inline void info(const std::string& msg) { write(Level::info, "info", msg); }
inline void debug(const std::string& msg) { write(Level::debug, "debug", msg); }

} // namespace tijepa::log
