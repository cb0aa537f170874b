#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>

namespace mixt {

// Library-wide error type. Messages are meant to be actionable: they name
// the offending token, file, or amount rather than just the failed check.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown by sample generators when a scene cannot support the requested
// task (ambiguous referent, degenerate relation). Callers resample.
class SampleRejection : public Error {
public:
    explicit SampleRejection(const std::string& msg) : Error(msg) {}
};

namespace detail {
template <typename T>
void append_part(std::string& msg, T&& part) {
    if constexpr (std::is_arithmetic_v<std::decay_t<T>>)
        msg += std::to_string(part);
    else
        msg += part;
}
}  // namespace detail

template <typename... Args>
[[noreturn]] inline void fail(Args&&... parts) {
    std::string msg;
    (detail::append_part(msg, std::forward<Args>(parts)), ...);
    throw Error(msg);
}

inline void require(bool cond, std::string_view msg) {
    if (!cond) throw Error(std::string(msg));
}

// 64-bit FNV-1a. Used for parameter checksums, image checksums and config
// fingerprints; not cryptographic.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    require(res.ec == std::errc{}, "format_double: buffer too small");
    return std::string(buf, res.ptr);
}

inline std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace mixt
