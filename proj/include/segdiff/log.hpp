#pragma once

#include <iostream>
#include <string>

namespace segdiff::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

Level& threshold();

inline void write(Level l, const std::string& msg) {
  static const char* names[] = {"debug", "info", "warn", "error"};
  if (l >= threshold() && l != Level::off) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << "\n";
}
inline void debug(const std::string& m) { write(Level::debug, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }

}  // namespace segdiff::log
