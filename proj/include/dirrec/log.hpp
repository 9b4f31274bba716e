#pragma once

#include <spdlog/spdlog.h>

namespace dirrec {

/// Configures the default logger from DIRREC_LOG_LEVEL (error, warn, info,
/// debug). Unset or unknown values fall back to warn.
void init_logging();

}  // namespace dirrec
