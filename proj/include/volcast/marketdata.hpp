#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "volcast/common.hpp"

namespace volcast::marketdata {

/// A single traded price observation.
struct Bar {
    std::string ticker;
    Timestamp timestamp = 0;
    double price = 0.0;  // strictly positive
};

/// Time-ordered bars of one ticker, restricted to one session window per day.
struct BarSeries {
    std::string ticker;
    Session session;
    std::vector<Bar> bars;  // strictly increasing timestamps
};

/// Within-day log returns at a fixed sampling granularity, in percent.
struct IntradayReturns {
    std::string ticker;
    Date date;
    int granularity_minutes = 0;
    std::vector<double> returns;  // length = full-interval count - 1
};

/// Everything the models need for one (ticker, day).
struct DailyRecord {
    std::string ticker;
    Date date;
    std::optional<double> daily_return;  // percent, close over previous close; unset on first day
    double rv = 0.0;                     // realised variance from 5-minute returns, percent^2
    std::map<int, IntradayReturns> intraday;
};

/// Dense (ticker x date) grid of daily records.
struct Panel {
    std::vector<std::string> tickers;
    std::vector<Date> dates;  // strictly increasing
    std::vector<std::optional<DailyRecord>> cells;  // tickers x dates, row-major
    std::vector<int> granularities;
    Session session;
    std::string source_digest;  // hex FNV-1a of the bars file, empty when built in memory

    [[nodiscard]] const std::optional<DailyRecord>& cell(std::size_t ticker_idx, std::size_t date_idx) const {
        return cells[ticker_idx * dates.size() + date_idx];
    }
    std::optional<DailyRecord>& cell(std::size_t ticker_idx, std::size_t date_idx) {
        return cells[ticker_idx * dates.size() + date_idx];
    }
    [[nodiscard]] std::optional<std::size_t> ticker_index(const std::string& ticker) const;
    [[nodiscard]] std::optional<std::size_t> date_index(Date d) const;
};

/// Sampling frequencies supported throughout the toolkit.
inline constexpr int kSupportedGranularities[] = {1, 5, 15, 30, 60};
bool granularity_supported(int minutes);

/// The granularity realised variance is computed from.
inline constexpr int kRvGranularity = 5;

struct LoadResult {
    std::vector<BarSeries> series;      // one per ticker, ticker-sorted
    std::size_t dropped_out_of_session = 0;
};

/// Reads the bars CSV (`ticker,timestamp,price`, ISO-8601 UTC timestamps).
/// Out-of-session bars are dropped and counted. Malformed rows, unparseable
/// or non-positive prices, and non-increasing timestamps within a ticker
/// throw with the offending 1-based row index in the message.
LoadResult load_bars(const std::string& path, const Session& session = {});
LoadResult load_bars_text(const std::string& csv_text, const Session& session = {});

/// Writes the same CSV format load_bars ingests.
void write_bars_csv(const std::string& path, const std::vector<BarSeries>& series);

/// Buckets one ticker's bars into fixed intervals keeping the last price of
/// each interval. Empty intervals carry the previous interval's price
/// forward; leading empty intervals take the day's first observed price.
/// Intervals past the last full one (e.g. the 30-minute stub of a 60-minute
/// sampling on a 390-minute session) are discarded. Days with no bars at all
/// simply produce no output. Throws when the granularity is unsupported or
/// the session holds fewer than two full intervals.
BarSeries resample(const BarSeries& series, int granularity_minutes);

/// Per-day interval bookkeeping used by the missing-day rule.
struct ResampledDay {
    Date date;
    std::vector<Bar> bars;       // one per full interval, timestamped at interval end
    std::size_t empty_intervals = 0;
    std::size_t total_intervals = 0;
};
std::vector<ResampledDay> resample_days(const BarSeries& series, int granularity_minutes);

/// returns[i] = 100 * ln(p[i+1]/p[i]) over one day's bars. Needs >= 2 bars.
IntradayReturns intraday_returns(const std::string& ticker, Date date, int granularity_minutes,
                                 const std::vector<Bar>& day_bars);

/// Sum of squared intraday returns, percent^2. Empty input throws.
double realised_variance(const IntradayReturns& returns);

/// 100 * ln(close / previous close); nullopt when there is no previous day.
std::optional<double> daily_return(double close, std::optional<double> previous_close);

struct PanelBuildOptions {
    std::vector<int> granularities = {5};
    double max_missing_fraction = 0.10;  // above this a day is marked missing
};

/// Assembles the dense panel. A (ticker, day) cell is marked missing when any
/// requested granularity has fewer than two bars or more than 10% empty
/// intervals. Realised variance always comes from the 5-minute returns, so
/// granularity 5 must be requested.
Panel build_panel(const std::vector<BarSeries>& all_series, const PanelBuildOptions& options = {});

/// Panel JSON persistence, schema "volcast_panel_v1".
void save_panel(const Panel& panel, const std::string& path);
Panel load_panel(const std::string& path);

}  // namespace volcast::marketdata
