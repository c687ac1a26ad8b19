#pragma once

#include <string_view>

// Leveled diagnostics on stderr, controlled by MOELO_LOG={error|info|debug}
// (default: error).
namespace moelo::log {

enum class Level { error = 0, info = 1, debug = 2 };

Level level();
void set_level(Level l);
void error(std::string_view msg);
void info(std::string_view msg);
void debug(std::string_view msg);

}  // namespace moelo::log
