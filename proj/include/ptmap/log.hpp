#pragma once

#include <spdlog/logger.h>

namespace ptmap {

/// Library-wide logger writing to stderr. The level is read once from the
/// PTMAP_LOG_LEVEL environment variable (trace, debug, info, warn, error, off);
/// the default is warn.
spdlog::logger& log();

}  // namespace ptmap
