#include "volcast/marketdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace volcast::marketdata {

using nlohmann::json;

bool granularity_supported(int minutes) {
    for (int g : kSupportedGranularities)
        if (g == minutes) return true;
    return false;
}

std::optional<std::size_t> Panel::ticker_index(const std::string& ticker) const {
    const auto it = std::find(tickers.begin(), tickers.end(), ticker);
    if (it == tickers.end()) return std::nullopt;
    return static_cast<std::size_t>(it - tickers.begin());
}

std::optional<std::size_t> Panel::date_index(Date d) const {
    const auto it = std::lower_bound(dates.begin(), dates.end(), d);
    if (it == dates.end() || *it != d) return std::nullopt;
    return static_cast<std::size_t>(it - dates.begin());
}

namespace {

LoadResult group_bars(std::vector<Bar> rows, const std::vector<std::size_t>& row_numbers, const Session& session) {
    LoadResult out;
    // group by ticker, preserving input order inside each ticker
    std::map<std::string, std::vector<std::pair<Bar, std::size_t>>> by_ticker;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        by_ticker[rows[i].ticker].emplace_back(std::move(rows[i]), row_numbers[i]);
    }
    for (auto& [ticker, bars] : by_ticker) {
        BarSeries series;
        series.ticker = ticker;
        series.session = session;
        Timestamp prev = 0;
        bool has_prev = false;
        for (auto& [bar, row] : bars) {
            if (has_prev && bar.timestamp <= prev) {
                throw std::runtime_error("non-monotone timestamp for ticker '" + ticker + "' at row " +
                                         std::to_string(row));
            }
            prev = bar.timestamp;
            has_prev = true;
            if (!session.contains(bar.timestamp)) {
                ++out.dropped_out_of_session;
                continue;
            }
            series.bars.push_back(std::move(bar));
        }
        if (!series.bars.empty()) out.series.push_back(std::move(series));
    }
    return out;
}

LoadResult parse_bars(std::istream& in, const Session& session) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("bars CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "ticker,timestamp,price") {
        throw std::runtime_error("bars CSV header must be 'ticker,timestamp,price', got '" + line + "'");
    }
    std::vector<Bar> rows;
    std::vector<std::size_t> row_numbers;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
            throw std::runtime_error("malformed bars row " + std::to_string(row) + ": '" + line + "'");
        }
        Bar bar;
        bar.ticker = line.substr(0, c1);
        if (bar.ticker.empty()) throw std::runtime_error("empty ticker at row " + std::to_string(row));
        try {
            bar.timestamp = parse_timestamp(line.substr(c1 + 1, c2 - c1 - 1));
        } catch (const std::exception& e) {
            throw std::runtime_error("row " + std::to_string(row) + ": " + e.what());
        }
        const std::string price_text = line.substr(c2 + 1);
        char* end = nullptr;
        bar.price = std::strtod(price_text.c_str(), &end);
        if (end == price_text.c_str() || *end != '\0' || !std::isfinite(bar.price) || bar.price <= 0.0) {
            throw std::runtime_error("unparseable or non-positive price at row " + std::to_string(row) + ": '" +
                                     price_text + "'");
        }
        rows.push_back(std::move(bar));
        row_numbers.push_back(row);
    }
    return group_bars(std::move(rows), row_numbers, session);
}

}  // namespace

LoadResult load_bars(const std::string& path, const Session& session) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open bars file: " + path);
    return parse_bars(in, session);
}

LoadResult load_bars_text(const std::string& csv_text, const Session& session) {
    std::istringstream in(csv_text);
    return parse_bars(in, session);
}

void write_bars_csv(const std::string& path, const std::vector<BarSeries>& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << "ticker,timestamp,price\n";
    for (const auto& s : series) {
        for (const auto& bar : s.bars) {
            out << s.ticker << ',' << format_timestamp(bar.timestamp) << ',' << format_double(bar.price) << '\n';
        }
    }
    if (!out) throw std::runtime_error("failed writing bars file: " + path);
}

std::vector<ResampledDay> resample_days(const BarSeries& series, int granularity_minutes) {
    if (!granularity_supported(granularity_minutes)) {
        throw std::invalid_argument("unsupported granularity " + std::to_string(granularity_minutes) +
                                    " minutes (supported: 1, 5, 15, 30, 60)");
    }
    const int n_intervals = series.session.minutes() / granularity_minutes;  // partial stub dropped
    if (n_intervals < 2) {
        throw std::invalid_argument("granularity " + std::to_string(granularity_minutes) +
                                    " leaves fewer than two intervals in a " +
                                    std::to_string(series.session.minutes()) + "-minute session");
    }
    const int open_sec = series.session.open_minute * 60;
    const int step_sec = granularity_minutes * 60;

    std::vector<ResampledDay> out;
    std::size_t i = 0;
    while (i < series.bars.size()) {
        const Date day = date_of(series.bars[i].timestamp);
        ResampledDay rd;
        rd.date = day;
        rd.total_intervals = static_cast<std::size_t>(n_intervals);
        std::vector<std::optional<double>> last_in_interval(n_intervals);
        for (; i < series.bars.size() && date_of(series.bars[i].timestamp) == day; ++i) {
            const int offset = second_of_day(series.bars[i].timestamp) - open_sec;
            // interval k covers (open + (k-1)g, open + kg]
            const int k = (offset + step_sec - 1) / step_sec;
            if (k >= 1 && k <= n_intervals) last_in_interval[k - 1] = series.bars[i].price;
        }
        int last_occupied = -1;
        for (int k = 0; k < n_intervals; ++k) {
            if (!last_in_interval[k]) {
                ++rd.empty_intervals;
            } else {
                last_occupied = k;
            }
        }
        if (last_occupied < 0) continue;  // no bars landed in a full interval: day yields nothing
        // bars run from the session open through the last traded interval;
        // leading empties take the first observed price, interior empties
        // carry the previous interval's price forward
        std::optional<double> carried;
        for (int k = 0; k <= last_occupied && !carried; ++k) carried = last_in_interval[k];
        for (int k = 0; k <= last_occupied; ++k) {
            if (last_in_interval[k]) carried = last_in_interval[k];
            Bar bar;
            bar.ticker = series.ticker;
            bar.timestamp = static_cast<Timestamp>(day.days()) * 86400 + open_sec + (k + 1) * step_sec;
            bar.price = *carried;
            rd.bars.push_back(std::move(bar));
        }
        out.push_back(std::move(rd));
    }
    return out;
}

BarSeries resample(const BarSeries& series, int granularity_minutes) {
    BarSeries out;
    out.ticker = series.ticker;
    out.session = series.session;
    for (auto& day : resample_days(series, granularity_minutes)) {
        out.bars.insert(out.bars.end(), day.bars.begin(), day.bars.end());
    }
    return out;
}

IntradayReturns intraday_returns(const std::string& ticker, Date date, int granularity_minutes,
                                 const std::vector<Bar>& day_bars) {
    if (day_bars.size() < 2) {
        throw std::invalid_argument("intraday returns need at least two bars, got " +
                                    std::to_string(day_bars.size()));
    }
    IntradayReturns out;
    out.ticker = ticker;
    out.date = date;
    out.granularity_minutes = granularity_minutes;
    out.returns.reserve(day_bars.size() - 1);
    for (std::size_t i = 1; i < day_bars.size(); ++i) {
        out.returns.push_back(100.0 * std::log(day_bars[i].price / day_bars[i - 1].price));
    }
    return out;
}

double realised_variance(const IntradayReturns& returns) {
    if (returns.returns.empty()) throw std::invalid_argument("realised variance of an empty return vector");
    double sum = 0.0;
    for (double r : returns.returns) sum += r * r;
    return sum;
}

std::optional<double> daily_return(double close, std::optional<double> previous_close) {
    if (!previous_close) return std::nullopt;
    return 100.0 * std::log(close / *previous_close);
}

Panel build_panel(const std::vector<BarSeries>& all_series, const PanelBuildOptions& options) {
    if (all_series.empty()) throw std::invalid_argument("build_panel: no bar series");
    for (int g : options.granularities) {
        if (!granularity_supported(g)) {
            throw std::invalid_argument("requested granularity " + std::to_string(g) +
                                        " is not in the resampling set");
        }
    }
    if (std::find(options.granularities.begin(), options.granularities.end(), kRvGranularity) ==
        options.granularities.end()) {
        throw std::invalid_argument("realised variance requires the 5-minute granularity; add 5 to --granularities");
    }

    Panel panel;
    panel.session = all_series.front().session;
    panel.granularities = options.granularities;
    std::sort(panel.granularities.begin(), panel.granularities.end());

    // date axis = union across tickers
    std::vector<Date> dates;
    for (const auto& s : all_series) {
        for (const auto& bar : s.bars) {
            const Date d = date_of(bar.timestamp);
            if (dates.empty() || dates.back() != d) dates.push_back(d);
        }
        panel.tickers.push_back(s.ticker);
    }
    std::sort(dates.begin(), dates.end());
    dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
    panel.dates = std::move(dates);
    std::sort(panel.tickers.begin(), panel.tickers.end());
    panel.cells.assign(panel.tickers.size() * panel.dates.size(), std::nullopt);

    for (const auto& s : all_series) {
        const std::size_t ti = *panel.ticker_index(s.ticker);

        // per-granularity resampled days, keyed by date
        std::map<int, std::map<int, ResampledDay>> resampled;  // granularity -> date.days -> day
        for (int g : panel.granularities) {
            for (auto& day : resample_days(s, g)) resampled[g].emplace(day.date.days(), std::move(day));
        }

        // raw close per day, for close-to-close returns
        std::map<int, double> closes;
        for (const auto& bar : s.bars) closes[date_of(bar.timestamp).days()] = bar.price;

        for (std::size_t di = 0; di < panel.dates.size(); ++di) {
            const Date d = panel.dates[di];
            const auto close_it = closes.find(d.days());
            if (close_it == closes.end()) continue;  // ticker has no bars that day: cell stays missing

            // previous trading day's close; a gap leaves the return unavailable
            std::optional<double> prev_close;
            if (di > 0) {
                const auto prev_it = closes.find(panel.dates[di - 1].days());
                if (prev_it != closes.end()) prev_close = prev_it->second;
            }

            bool complete = true;
            DailyRecord rec;
            rec.ticker = s.ticker;
            rec.date = d;
            for (int g : panel.granularities) {
                const auto& days = resampled[g];
                const auto it = days.find(d.days());
                if (it == days.end() || it->second.bars.size() < 2 ||
                    static_cast<double>(it->second.empty_intervals) >
                        options.max_missing_fraction * static_cast<double>(it->second.total_intervals)) {
                    complete = false;
                    break;
                }
                rec.intraday.emplace(g, intraday_returns(s.ticker, d, g, it->second.bars));
            }
            if (complete) {
                rec.rv = realised_variance(rec.intraday.at(kRvGranularity));
                rec.daily_return = daily_return(close_it->second, prev_close);
                panel.cell(ti, di) = std::move(rec);
            }
        }
    }
    return panel;
}

namespace {

json session_to_json(const Session& s) { return json{{"open_minute", s.open_minute}, {"close_minute", s.close_minute}}; }

Session session_from_json(const json& j) {
    Session s;
    s.open_minute = j.at("open_minute").get<int>();
    s.close_minute = j.at("close_minute").get<int>();
    return s;
}

}  // namespace

void save_panel(const Panel& panel, const std::string& path) {
    json j;
    j["schema"] = "volcast_panel_v1";
    j["session"] = session_to_json(panel.session);
    j["granularities"] = panel.granularities;
    j["source_digest"] = panel.source_digest;
    j["tickers"] = panel.tickers;
    json dates = json::array();
    for (const Date& d : panel.dates) dates.push_back(d.to_string());
    j["dates"] = std::move(dates);
    json cells = json::array();
    for (const auto& cell : panel.cells) {
        if (!cell) {
            cells.push_back(nullptr);
            continue;
        }
        json c;
        c["rv"] = cell->rv;
        if (cell->daily_return) c["daily_return"] = *cell->daily_return;
        json intraday;
        for (const auto& [g, ir] : cell->intraday) intraday[std::to_string(g)] = ir.returns;
        c["intraday"] = std::move(intraday);
        cells.push_back(std::move(c));
    }
    j["cells"] = std::move(cells);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open panel output: " + path);
    out << j.dump();
    if (!out) throw std::runtime_error("failed writing panel: " + path);
}

Panel load_panel(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open panel file: " + path);
    json j;
    in >> j;
    if (j.value("schema", "") != std::string("volcast_panel_v1")) {
        throw std::runtime_error("unexpected panel schema in " + path);
    }
    Panel panel;
    panel.session = session_from_json(j.at("session"));
    panel.granularities = j.at("granularities").get<std::vector<int>>();
    panel.source_digest = j.value("source_digest", "");
    panel.tickers = j.at("tickers").get<std::vector<std::string>>();
    for (const auto& d : j.at("dates")) panel.dates.push_back(Date::parse(d.get<std::string>()));
    const auto& cells = j.at("cells");
    if (cells.size() != panel.tickers.size() * panel.dates.size()) {
        throw std::runtime_error("panel cell grid size mismatch in " + path);
    }
    panel.cells.reserve(cells.size());
    for (std::size_t idx = 0; idx < cells.size(); ++idx) {
        const auto& c = cells[idx];
        if (c.is_null()) {
            panel.cells.emplace_back(std::nullopt);
            continue;
        }
        DailyRecord rec;
        rec.ticker = panel.tickers[idx / panel.dates.size()];
        rec.date = panel.dates[idx % panel.dates.size()];
        rec.rv = c.at("rv").get<double>();
        if (c.contains("daily_return")) rec.daily_return = c.at("daily_return").get<double>();
        for (const auto& [key, val] : c.at("intraday").items()) {
            IntradayReturns ir;
            ir.ticker = rec.ticker;
            ir.date = rec.date;
            ir.granularity_minutes = std::stoi(key);
            ir.returns = val.get<std::vector<double>>();
            rec.intraday.emplace(ir.granularity_minutes, std::move(ir));
        }
        panel.cells.emplace_back(std::move(rec));
    }
    return panel;
}

}  // namespace volcast::marketdata
