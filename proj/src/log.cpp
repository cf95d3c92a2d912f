#include "clifgan/log.hpp"

#include <iostream>
#include <mutex>

namespace clifgan::log {
namespace {
std::atomic<Level> g_level{Level::info};
std::atomic<long> g_warnings{0};
std::mutex g_mutex;

void emit(Level lvl, std::string_view tag, std::string_view msg) {
    if (lvl < g_level.load()) return;
    std::lock_guard lock(g_mutex);
    std::cerr << "[clifgan " << tag << "] " << msg << '\n';
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void debug(std::string_view msg) { emit(Level::debug, "debug", msg); }
void info(std::string_view msg) { emit(Level::info, "info", msg); }
void warn(std::string_view msg) {
    ++g_warnings;
    emit(Level::warn, "warn", msg);
}
void error(std::string_view msg) { emit(Level::error, "error", msg); }

long warning_count() { return g_warnings; }
void reset_warning_count() { g_warnings = 0; }

}  // namespace clifgan::log
