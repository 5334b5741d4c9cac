#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace volcast {

/// Calendar date stored as days since 1970-01-01 (proleptic Gregorian).
class Date {
public:
    Date() = default;
    explicit Date(int days_since_epoch) : days_(days_since_epoch) {}
    static Date from_ymd(int year, int month, int day);
    static Date parse(const std::string& iso);  // "2020-01-06"

    [[nodiscard]] int days() const noexcept { return days_; }
    [[nodiscard]] std::string to_string() const;

    Date operator+(int d) const { return Date(days_ + d); }
    Date operator-(int d) const { return Date(days_ - d); }
    auto operator<=>(const Date&) const = default;

private:
    int days_ = 0;
};

/// UTC instant, second precision.
using Timestamp = std::int64_t;

Timestamp parse_timestamp(const std::string& iso);  // "2019-09-30T13:35:00Z"
std::string format_timestamp(Timestamp t);

inline Date date_of(Timestamp t) { return Date(static_cast<int>(t >= 0 ? t / 86400 : (t - 86399) / 86400)); }
inline int second_of_day(Timestamp t) { return static_cast<int>(t - static_cast<Timestamp>(date_of(t).days()) * 86400); }

/// Trading session expressed as minutes of day, default 09:30-16:00.
struct Session {
    int open_minute = 9 * 60 + 30;
    int close_minute = 16 * 60;

    [[nodiscard]] int minutes() const { return close_minute - open_minute; }
    /// True when the bar belongs to the session: open < time-of-day <= close.
    [[nodiscard]] bool contains(Timestamp t) const {
        const int s = second_of_day(t);
        return s > open_minute * 60 && s <= close_minute * 60;
    }
};

/// One (forecast, proxy) pair produced by any model.
struct ForecastRecord {
    std::string ticker;
    Date date;        // day the forecast is for
    double forecast;  // percent^2
    double proxy;     // realised variance of that day, percent^2
};

using ForecastSet = std::vector<ForecastRecord>;

/// Deterministic 64-bit stream splitter for per-worker substreams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// FNV-1a digest of a byte buffer, used for file provenance.
std::uint64_t fnv1a(const void* data, std::size_t len);
std::uint64_t file_digest(const std::string& path);

/// Shortest round-trip decimal rendering of a double (to_chars based).
std::string format_double(double v);

/// Runs fn(i) for i in [0, n) across at most `threads` workers; results must
/// be written to preallocated per-index slots by the callers themselves.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Worker count resolution: explicit flag > VOLCAST_THREADS > hardware.
int resolve_threads(int requested);

}  // namespace volcast
