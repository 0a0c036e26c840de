#include "ptmap/log.hpp"

#include <cstdlib>
#include <memory>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace ptmap {

spdlog::logger& log() {
    static const std::shared_ptr<spdlog::logger> logger = [] {
        auto sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
        auto l = std::make_shared<spdlog::logger>("ptmap", sink);
        l->set_pattern("[%l] %v");
        l->set_level(spdlog::level::warn);
        if (const char* env = std::getenv("PTMAP_LOG_LEVEL")) {
            l->set_level(spdlog::level::from_str(env));
        }
        return l;
    }();
    return *logger;
}

}  // namespace ptmap
