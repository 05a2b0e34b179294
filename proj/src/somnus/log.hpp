#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace somnus::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3 };

inline Level& threshold() {
  static Level lv = Level::info;
  return lv;
}

inline void emit(Level lv, const std::string& msg) {
  if (lv < threshold()) return;
  static const char* tags[] = {"DEBUG", "INFO", "WARN", "ERROR"};
  std::cerr << "[somnus:" << tags[static_cast<int>(lv)] << "] " << msg << "\n";
}

}  // namespace somnus::log

#define SOMNUS_LOG_AT(level, expr)                     \
  do {                                                 \
    std::ostringstream somnus_log_oss_;                \
    somnus_log_oss_ << expr;                           \
    ::somnus::log::emit(level, somnus_log_oss_.str()); \
  } while (0)

#define SOMNUS_INFO(expr) SOMNUS_LOG_AT(::somnus::log::Level::info, expr)
#define SOMNUS_WARN(expr) SOMNUS_LOG_AT(::somnus::log::Level::warn, expr)
#define SOMNUS_ERROR(expr) SOMNUS_LOG_AT(::somnus::log::Level::error, expr)
