#include "volcast/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace volcast::synth {

void SimSpec::validate_dynamics() const {
    if (n_tickers < 1) throw std::invalid_argument("n_tickers must be >= 1");
    if (n_days < 1) throw std::invalid_argument("n_days must be >= 1");
    if (bars_per_day < 1) throw std::invalid_argument("bars_per_day must be >= 1");
    if (params.empty()) throw std::invalid_argument("no GARCH parameters given");
    if (params.size() != 1 && static_cast<int>(params.size()) != n_tickers) {
        throw std::invalid_argument("params must hold one shared triple or one per ticker");
    }
    for (const auto& p : params) {
        if (p.omega < 0.0 || p.alpha < 0.0 || p.beta < 0.0) {
            throw std::invalid_argument("GARCH parameters must be non-negative");
        }
        if (!p.stationary()) {
            throw std::invalid_argument("non-stationary spec rejected: alpha + beta must be < 1");
        }
    }
}

void SimSpec::validate() const {
    validate_dynamics();
    if (bars_per_day < 2) throw std::invalid_argument("bars_per_day must be >= 2");
    if (session.minutes() % bars_per_day != 0) {
        throw std::invalid_argument("bars_per_day must divide the session length in minutes");
    }
}

namespace {

std::string ticker_name(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "SYN%03d", idx);
    return buf;
}

// Mean-one U-shaped variance profile across the day.
std::vector<double> diurnal_profile(int bars, bool enabled) {
    std::vector<double> w(static_cast<std::size_t>(bars), 1.0);
    if (!enabled) return w;
    constexpr double amplitude = 0.75;
    for (int i = 0; i < bars; ++i) {
        const double x = (i + 0.5) / bars - 0.5;
        w[static_cast<std::size_t>(i)] = 1.0 + amplitude * (4.0 * x * x - 1.0 / 3.0);
    }
    return w;
}

struct DayDraw {
    double h = 0.0;                   // true conditional variance, percent^2
    std::vector<double> increments;   // percent log-return increments, one per bar
    double daily_return = 0.0;        // their sum
};

class TickerSimulator {
public:
    TickerSimulator(const GarchTruth& p, int bars, bool diurnal, std::uint64_t substream_seed)
        : params_(p), profile_(diurnal_profile(bars, diurnal)), rng_(substream_seed) {
        h_ = params_.unconditional();
    }

    DayDraw next_day() {
        DayDraw day;
        day.h = h_;
        day.increments.reserve(profile_.size());
        double sum = 0.0;
        const double base = h_ / static_cast<double>(profile_.size());
        for (double w : profile_) {
            const double u = std::sqrt(base * w) * normal_(rng_);
            day.increments.push_back(u);
            sum += u;
        }
        day.daily_return = sum;
        h_ = params_.omega + params_.alpha * sum * sum + params_.beta * h_;
        return day;
    }

private:
    GarchTruth params_;
    std::vector<double> profile_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_;
    double h_ = 0.0;
};

}  // namespace

SimResult simulate(const SimSpec& spec) {
    spec.validate();

    SimResult out;
    out.truth.dates.reserve(static_cast<std::size_t>(spec.n_days));
    for (int d = 0; d < spec.n_days; ++d) out.truth.dates.push_back(spec.start_date + d);

    const int spacing_minutes = spec.session.minutes() / spec.bars_per_day;
    for (int t = 0; t < spec.n_tickers; ++t) {
        TickerSimulator sim(spec.ticker_params(t), spec.bars_per_day, spec.diurnal,
                            mix_seed(spec.seed, static_cast<std::uint64_t>(t)));
        marketdata::BarSeries series;
        series.ticker = ticker_name(t);
        series.session = spec.session;
        series.bars.reserve(static_cast<std::size_t>(spec.n_days) * spec.bars_per_day);

        std::vector<double> h_path;
        h_path.reserve(static_cast<std::size_t>(spec.n_days));
        double log_price = std::log(100.0);
        for (int d = 0; d < spec.n_days; ++d) {
            const DayDraw day = sim.next_day();
            h_path.push_back(day.h);
            const Timestamp day_start =
                static_cast<Timestamp>((spec.start_date + d).days()) * 86400 + spec.session.open_minute * 60;
            for (int i = 0; i < spec.bars_per_day; ++i) {
                log_price += day.increments[static_cast<std::size_t>(i)] / 100.0;
                marketdata::Bar bar;
                bar.ticker = series.ticker;
                bar.timestamp = day_start + static_cast<Timestamp>(i + 1) * spacing_minutes * 60;
                bar.price = std::exp(log_price);
                series.bars.push_back(std::move(bar));
            }
        }
        out.truth.tickers.push_back(series.ticker);
        out.truth.h.push_back(std::move(h_path));
        out.series.push_back(std::move(series));
    }
    return out;
}

double expected_rv_error(const SimSpec& spec, int horizon) {
    spec.validate_dynamics();
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");

    TickerSimulator sim(spec.ticker_params(0), spec.bars_per_day, spec.diurnal, mix_seed(spec.seed, 0xE44));
    double total = 0.0;
    for (int d = 0; d < horizon; ++d) {
        const DayDraw day = sim.next_day();
        double rv = 0.0;
        for (double u : day.increments) rv += u * u;
        total += std::abs(rv - day.h);
    }
    return total / horizon;
}

void write_truth_csv(const std::string& path, const GroundTruth& truth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open truth output: " + path);
    out << "ticker,date,true_variance\n";
    for (std::size_t t = 0; t < truth.tickers.size(); ++t) {
        for (std::size_t d = 0; d < truth.dates.size(); ++d) {
            out << truth.tickers[t] << ',' << truth.dates[d].to_string() << ',' << format_double(truth.h[t][d])
                << '\n';
        }
    }
}

}  // namespace volcast::synth
