#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace faith::log {

using Sink = std::function<void(std::string_view level, std::string_view message)>;

namespace detail {
inline std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}
inline Sink& sink() {
    static Sink s = [](std::string_view level, std::string_view msg) { std::cerr << "[" << level << "] " << msg << '\n'; };
    return s;
}
}  // namespace detail

/// Replace the process-wide sink; returns the previous one.
inline Sink set_sink(Sink s) {
    std::lock_guard lock(detail::sink_mutex());
    std::swap(detail::sink(), s);
    return s;
}

inline void warn(std::string_view msg) {
    std::lock_guard lock(detail::sink_mutex());
    detail::sink()("warn", msg);
}

inline void info(std::string_view msg) {
    std::lock_guard lock(detail::sink_mutex());
    detail::sink()("info", msg);
}

}  // namespace faith::log
