#include "deepdisaster/log.hpp"

#include <atomic>
#include <iostream>

namespace deepdisaster {

namespace {
std::atomic<std::size_t> g_warnings{0};
std::atomic<bool> g_quiet{false};
}  // namespace

void warn(std::string_view message) {
  ++g_warnings;
  if (!g_quiet) std::cerr << "warning: " << message << '\n';
}

std::size_t warning_count() { return g_warnings; }

void set_warnings_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace deepdisaster
