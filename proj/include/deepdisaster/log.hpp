#pragma once

#include <cstddef>
#include <string_view>

namespace deepdisaster {

/// Writes "warning: <message>" to stderr (unless silenced) and counts it.
void warn(std::string_view message);
std::size_t warning_count();
/// Suppress stderr output of warnings; they are still counted.
void set_warnings_quiet(bool quiet);

}  // namespace deepdisaster
