// SPDX-License-Identifier: Apache-2.0
//
// Logging front-end. Kept free of third-party headers so that translation
// units pulling in libtorch (which bundles its own fmt) can log too.
#pragma once

#include <string_view>

namespace mangatone::log {

enum class Level { debug, info, warn, error, off };

void set_level(Level level);
void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);

}  // namespace mangatone::log
