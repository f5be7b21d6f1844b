#include "segdiff/log.hpp"

namespace segdiff::log {

Level& threshold() {
  static Level level = Level::warn;
  return level;
}

}  // namespace segdiff::log
