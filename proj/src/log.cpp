#include "tvmerge/log.hpp"

#include <atomic>
#include <cstdarg>

namespace tvmerge {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::Info)};

const char* tag(LogLevel level) {
    switch (level) {
        case LogLevel::Error: return "error";
        case LogLevel::Warn: return "warn";
        case LogLevel::Info: return "info";
        default: return "debug";
    }
}
}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void set_log_level(LogLevel level) { g_level.store(static_cast<int>(level)); }

bool set_log_level(const std::string& name) {
    if (name == "error") set_log_level(LogLevel::Error);
    else if (name == "warn") set_log_level(LogLevel::Warn);
    else if (name == "info") set_log_level(LogLevel::Info);
    else if (name == "debug") set_log_level(LogLevel::Debug);
    else return false;
    return true;
}

namespace detail {

void vlog(LogLevel level, const char* fmt, ...) {
    if (static_cast<int>(level) > g_level.load()) return;
    std::fprintf(stderr, "[%s] ", tag(level));
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fputc('\n', stderr);
}

}  // namespace detail

}  // namespace tvmerge
