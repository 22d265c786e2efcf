#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>
#include <string>

namespace ces {

/// Library logger on stderr. The level is read once from CES_LOG
/// (trace, debug, info, warn, error, off; default warn).
inline spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::get("ces");
    if (!l) l = spdlog::stderr_color_mt("ces");
    const char* env = std::getenv("CES_LOG");
    l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
    l->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    return l;
  }();
  return *logger;
}

}  // namespace ces
