// Shortest round-trip decimal formatting, so emitted files are bit-stable
// across platforms and reruns.
#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace smc {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_u64(std::uint64_t v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace smc
