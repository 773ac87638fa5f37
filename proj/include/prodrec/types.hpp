#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace prodrec {

using ProductId = std::uint32_t;
using UserId = std::uint32_t;
using ClusterId = std::uint32_t;

/// Seconds since the Unix epoch (UTC).
using Timestamp = std::int64_t;

/// Whole UTC days since the epoch.
using Day = std::int64_t;

inline constexpr Timestamp kSecondsPerDay = 86400;

constexpr Day day_of(Timestamp t) {
    // floor division so that pre-epoch timestamps land on the right day
    return t >= 0 ? t / kSecondsPerDay : -((-t + kSecondsPerDay - 1) / kSecondsPerDay);
}

constexpr Timestamp day_start(Day d) { return d * kSecondsPerDay; }

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input that does not conform to one of the file formats.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A product or user token that is not part of the relevant vocabulary.
class UnknownKeyError : public Error {
public:
    using Error::Error;
};

/// Bijection between string tokens and dense ids 0..size()-1.
class TokenTable {
public:
    TokenTable() = default;
    explicit TokenTable(std::vector<std::string> tokens);

    /// Returns the id of `token`, inserting it at the end when absent.
    std::uint32_t intern(std::string_view token);

    std::optional<std::uint32_t> find(std::string_view token) const;
    std::uint32_t at(std::string_view token) const;

    const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    std::size_t size() const noexcept { return tokens_.size(); }
    bool empty() const noexcept { return tokens_.empty(); }

    friend bool operator==(const TokenTable& a, const TokenTable& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Parses a YYYY-MM-DD calendar date (UTC).
inline Day parse_date(std::string_view s) {
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    auto field = [&](std::string_view part, auto& out) {
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
        return ec == std::errc() && ptr == part.data() + part.size() && !part.empty();
    };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !field(s.substr(0, 4), y) || !field(s.substr(5, 2), m) ||
        !field(s.substr(8, 2), d))
        throw Error("expected a YYYY-MM-DD date, got '" + std::string(s) + "'");
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw Error("invalid calendar date '" + std::string(s) + "'");
    return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

inline std::string format_date(Day day) {
    std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

/// splitmix64 finalizer; used to derive independent seeds from composite keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ (b + 0x632be59bd9b4e019ULL)); }

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return mix64(mix64(a, b), c); }

}  // namespace prodrec
