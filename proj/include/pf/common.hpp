#pragma once

#include <stdexcept>
#include <string>

namespace pf {

// Domain error for bad shapes, malformed files, impossible requests, etc.
// CLI maps these to exit code 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr const char* kToolName = "patchforge";
inline constexpr const char* kToolVersion = "1.0.0";

} // namespace pf
