#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/marketdata.hpp"

namespace volcast::synth {

/// GARCH(1,1) coefficients of one simulated ticker.
struct GarchTruth {
    double omega = 0.05;
    double alpha = 0.10;
    double beta = 0.85;

    [[nodiscard]] bool stationary() const { return alpha + beta < 1.0; }
    [[nodiscard]] double unconditional() const { return omega / (1.0 - alpha - beta); }
};

/// Simulation recipe. Daily conditional variance follows a GARCH(1,1)
/// recursion per ticker; the day's log return is split into bars_per_day
/// equal-variance increments (optionally shaped by a mean-one U profile),
/// and prices exponentiate the cumulative return from 100.
struct SimSpec {
    int n_tickers = 1;
    int n_days = 250;
    int bars_per_day = 78;
    std::vector<GarchTruth> params = {GarchTruth{}};  // size 1 (shared) or n_tickers
    bool diurnal = false;
    std::uint64_t seed = 1;
    Date start_date = Date::from_ymd(2020, 1, 6);
    Session session;

    [[nodiscard]] const GarchTruth& ticker_params(int idx) const {
        return params.size() == 1 ? params.front() : params.at(static_cast<std::size_t>(idx));
    }
    /// Checks the variance dynamics only (stationarity, counts). A single
    /// bar per day is allowed here so Monte-Carlo helpers can use it.
    void validate_dynamics() const;
    /// Full validation for bar emission: dynamics plus bars_per_day >= 2 and
    /// an integer bar spacing.
    void validate() const;
};

/// Known per-(ticker, day) conditional variance, percent^2.
struct GroundTruth {
    std::vector<std::string> tickers;
    std::vector<Date> dates;
    std::vector<std::vector<double>> h;  // [ticker][day]

    [[nodiscard]] double value(std::size_t ticker_idx, std::size_t day_idx) const {
        return h[ticker_idx][day_idx];
    }
};

struct SimResult {
    std::vector<marketdata::BarSeries> series;
    GroundTruth truth;
};

/// Deterministic given the seed; tickers use independent substreams so the
/// result does not depend on evaluation order.
SimResult simulate(const SimSpec& spec);

/// Monte-Carlo estimate of E|RV_t - h_t| under the spec, averaged over
/// `horizon` simulated days of ticker 0. RV here sums all bars_per_day
/// squared increments.
double expected_rv_error(const SimSpec& spec, int horizon);

void write_truth_csv(const std::string& path, const GroundTruth& truth);

}  // namespace volcast::synth
