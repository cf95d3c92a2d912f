#pragma once

#include <atomic>
#include <string_view>

namespace clifgan::log {

enum class Level { debug, info, warn, error, off };

void set_level(Level level);
Level level();

void debug(std::string_view msg);
void info(std::string_view msg);
void warn(std::string_view msg);
void error(std::string_view msg);

/// Number of warnings emitted since start (or the last reset).
long warning_count();
void reset_warning_count();

}  // namespace clifgan::log
