#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace merf::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](const std::string& msg) { std::clog << "[merf] warning: " << msg << '\n'; };
  return s;
}
}  // namespace detail

/// Replaces the warning sink; returns the previous one. An empty sink
/// silences warnings (results still carry their own counters).
inline Sink set_sink(Sink s) {
  std::lock_guard lock(detail::mutex());
  return std::exchange(detail::sink(), std::move(s));
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::mutex());
  if (detail::sink()) detail::sink()(msg);
}

/// RAII guard that installs a sink for the lifetime of the object.
class ScopedSink {
 public:
  explicit ScopedSink(Sink s) : previous_(set_sink(std::move(s))) {}
  ~ScopedSink() { set_sink(std::move(previous_)); }
  ScopedSink(const ScopedSink&) = delete;
  ScopedSink& operator=(const ScopedSink&) = delete;

 private:
  Sink previous_;
};

}  // namespace merf::log
