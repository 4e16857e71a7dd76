#pragma once

// Locale-independent number formatting for every text artifact.

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace lerm {

/// Shortest decimal form that round-trips to the same double.
[[nodiscard]] inline std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
    return {buf, end};
}

[[nodiscard]] inline std::string format_bool(bool v) { return v ? "true" : "false"; }

[[nodiscard]] inline std::string_view trim(std::string_view s) noexcept {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

[[nodiscard]] inline bool try_parse_double(std::string_view s, double& out) noexcept {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

[[nodiscard]] inline double parse_double(std::string_view s) {
    double v = 0.0;
    if (!try_parse_double(s, v)) throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

[[nodiscard]] inline bool try_parse_u64(std::string_view s, std::uint64_t& out) noexcept {
    s = trim(s);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

[[nodiscard]] inline std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    if (!try_parse_u64(s, v))
        throw std::invalid_argument("not a non-negative integer: '" + std::string(s) + "'");
    return v;
}

}  // namespace lerm
