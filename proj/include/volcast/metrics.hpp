#pragma once

#include <string>
#include <vector>

#include "volcast/common.hpp"

namespace volcast::metrics {

/// The six evaluation metrics over one model's forecast set.
struct MetricsReport {
    std::string label;
    std::size_t n = 0;
    double mae = 0.0;
    double rmse = 0.0;
    double smape = 0.0;  // |proxy - forecast| / ((proxy + forecast)/2), averaged
    double qlike = 0.0;  // mean ln(forecast) + proxy/forecast
    double me = 0.0;     // max absolute error
    double medae = 0.0;  // median absolute error
};

/// Computes all six metrics. Requires a nonempty set, strictly positive
/// forecasts, and non-negative proxies (QLIKE would be undefined otherwise).
MetricsReport evaluate(const ForecastSet& forecasts, const std::string& label);

/// Percentage improvement of each model over each reference model,
/// 100 * (ref - model) / ref per metric. Positive means improvement. A zero
/// reference value leaves the entry undefined (NaN).
struct ImprovementTable {
    std::vector<std::string> references;                 // e.g. {"martingale", "heavy"}
    std::vector<std::string> models;                     // all report labels
    // entries[ref][model][metric], metric order: mae, rmse, smape, qlike, me, medae
    std::vector<std::vector<std::vector<double>>> entries;
};

inline constexpr const char* kMetricNames[] = {"mae", "rmse", "smape", "qlike", "me", "medae"};

ImprovementTable improvement_table(const std::vector<MetricsReport>& reports,
                                   const std::vector<std::string>& reference_labels);

/// CSV serialization: one row per model, and the improvement layout with one
/// section per reference model.
std::string reports_to_csv(const std::vector<MetricsReport>& reports);
std::string improvement_to_csv(const ImprovementTable& table);

}  // namespace volcast::metrics
