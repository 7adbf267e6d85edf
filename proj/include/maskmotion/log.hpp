#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace maskmotion {

inline std::atomic<bool>& warnings_enabled() {
    static std::atomic<bool> on{true};
    return on;
}

inline void warn(std::string_view message) {
    if (warnings_enabled()) std::cerr << "maskmotion: warning: " << message << '\n';
}

}  // namespace maskmotion
