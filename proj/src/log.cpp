#include "moelo/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace moelo::log {
namespace {

Level from_env() {
  const char* env = std::getenv("MOELO_LOG");
  if (!env) return Level::error;
  const std::string v(env);
  if (v == "debug") return Level::debug;
  if (v == "info") return Level::info;
  return Level::error;
}

Level& current() {
  static Level l = from_env();
  return l;
}

void emit(Level l, const char* tag, std::string_view msg) {
  if (static_cast<int>(l) <= static_cast<int>(current())) std::cerr << "[moelo " << tag << "] " << msg << '\n';
}

}  // namespace

Level level() { return current(); }
void set_level(Level l) { current() = l; }
void error(std::string_view msg) { emit(Level::error, "error", msg); }
void info(std::string_view msg) { emit(Level::info, "info", msg); }
void debug(std::string_view msg) { emit(Level::debug, "debug", msg); }

}  // namespace moelo::log
