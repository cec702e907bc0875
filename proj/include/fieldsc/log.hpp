#pragma once

// Minimal leveled logger. The level comes from the FIELDSC_LOG environment
// variable (error|warn|info|debug) and can be overridden programmatically.

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>

namespace fieldsc::log {

enum class Level : int { error = 0, warn = 1, info = 2, debug = 3 };

namespace detail {
inline Level parse_level(const char* s, Level fallback) {
    if (!s) return fallback;
    std::string v(s);
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    std::fprintf(stderr, "[warn] FIELDSC_LOG=%s not recognized, using default\n", s);
    return fallback;
}

inline Level& level_ref() {
    static Level lvl = parse_level(std::getenv("FIELDSC_LOG"), Level::warn);
    return lvl;
}

template <class... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}
}  // namespace detail

inline Level level() { return detail::level_ref(); }
inline void set_level(Level lvl) { detail::level_ref() = lvl; }

inline void write(Level lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(level())) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

template <class... Args>
void error(Args&&... args) { write(Level::error, detail::cat(std::forward<Args>(args)...)); }
template <class... Args>
void warn(Args&&... args) { write(Level::warn, detail::cat(std::forward<Args>(args)...)); }
template <class... Args>
void info(Args&&... args) { write(Level::info, detail::cat(std::forward<Args>(args)...)); }
template <class... Args>
void debug(Args&&... args) { write(Level::debug, detail::cat(std::forward<Args>(args)...)); }

}  // namespace fieldsc::log
