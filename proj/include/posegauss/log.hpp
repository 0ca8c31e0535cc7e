#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace pg {

inline std::atomic<bool>& log_quiet_flag() {
  static std::atomic<bool> quiet{false};
  return quiet;
}

inline void set_log_quiet(bool quiet) { log_quiet_flag() = quiet; }

inline void log_warning(const std::string& message) {
  if (!log_quiet_flag()) std::cerr << "warning: " << message << "\n";
}

inline void log_info(const std::string& message) {
  if (!log_quiet_flag()) std::cerr << message << "\n";
}

}  // namespace pg
