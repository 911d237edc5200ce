#pragma once

#include <cstdio>
#include <string>

namespace tvmerge {

enum class LogLevel : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel log_level();
void set_log_level(LogLevel level);
bool set_log_level(const std::string& name);  // "error" | "warn" | "info" | "debug"

namespace detail {
void vlog(LogLevel level, const char* fmt, ...);
}

template <typename... Args>
void log_error(const char* fmt, Args... args) {
    detail::vlog(LogLevel::Error, fmt, args...);
}
template <typename... Args>
void log_warn(const char* fmt, Args... args) {
    detail::vlog(LogLevel::Warn, fmt, args...);
}
template <typename... Args>
void log_info(const char* fmt, Args... args) {
    detail::vlog(LogLevel::Info, fmt, args...);
}
template <typename... Args>
void log_debug(const char* fmt, Args... args) {
    detail::vlog(LogLevel::Debug, fmt, args...);
}

}  // namespace tvmerge
