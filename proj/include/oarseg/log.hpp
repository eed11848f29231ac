#pragma once

#include <iostream>
#include <string_view>

namespace oarseg {

inline bool& quiet_logging() {
  static bool quiet = false;
  return quiet;
}

inline void log_warning(std::string_view msg) {
  if (!quiet_logging()) std::cerr << "warning: " << msg << '\n';
}

inline void log_info(std::string_view msg) {
  if (!quiet_logging()) std::cerr << msg << '\n';
}

}  // namespace oarseg
