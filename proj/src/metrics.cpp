#include "volcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace volcast::metrics {

MetricsReport evaluate(const ForecastSet& forecasts, const std::string& label) {
    if (forecasts.empty()) throw std::invalid_argument("evaluate: empty forecast set for '" + label + "'");

    MetricsReport rep;
    rep.label = label;
    rep.n = forecasts.size();

    std::vector<double> abs_errors;
    abs_errors.reserve(forecasts.size());
    double sum_abs = 0.0, sum_sq = 0.0, sum_smape = 0.0, sum_qlike = 0.0, max_abs = 0.0;
    for (const auto& rec : forecasts) {
        if (!(rec.forecast > 0.0) || !std::isfinite(rec.forecast)) {
            throw std::invalid_argument("evaluate: non-positive forecast for '" + label + "' on " +
                                        rec.ticker + " " + rec.date.to_string());
        }
        if (rec.proxy < 0.0 || !std::isfinite(rec.proxy)) {
            throw std::invalid_argument("evaluate: negative or non-finite proxy for '" + label + "' on " +
                                        rec.ticker + " " + rec.date.to_string());
        }
        const double err = std::abs(rec.proxy - rec.forecast);
        abs_errors.push_back(err);
        sum_abs += err;
        sum_sq += err * err;
        sum_smape += err / ((rec.proxy + rec.forecast) / 2.0);
        sum_qlike += std::log(rec.forecast) + rec.proxy / rec.forecast;
        max_abs = std::max(max_abs, err);
    }
    const double n = static_cast<double>(rep.n);
    rep.mae = sum_abs / n;
    rep.rmse = std::sqrt(sum_sq / n);
    rep.smape = sum_smape / n;
    rep.qlike = sum_qlike / n;
    rep.me = max_abs;

    std::sort(abs_errors.begin(), abs_errors.end());
    const std::size_t mid = abs_errors.size() / 2;
    rep.medae = abs_errors.size() % 2 == 1 ? abs_errors[mid] : 0.5 * (abs_errors[mid - 1] + abs_errors[mid]);
    return rep;
}

namespace {

std::vector<double> metric_values(const MetricsReport& r) {
    return {r.mae, r.rmse, r.smape, r.qlike, r.me, r.medae};
}

}  // namespace

ImprovementTable improvement_table(const std::vector<MetricsReport>& reports,
                                   const std::vector<std::string>& reference_labels) {
    ImprovementTable table;
    table.references = reference_labels;
    for (const auto& r : reports) table.models.push_back(r.label);

    for (const auto& ref_label : reference_labels) {
        const auto ref_it =
            std::find_if(reports.begin(), reports.end(), [&](const auto& r) { return r.label == ref_label; });
        if (ref_it == reports.end()) {
            throw std::invalid_argument("improvement_table: missing reference model '" + ref_label + "'");
        }
        const std::vector<double> ref_vals = metric_values(*ref_it);
        std::vector<std::vector<double>> rows;
        for (const auto& model : reports) {
            const std::vector<double> vals = metric_values(model);
            std::vector<double> row(vals.size());
            for (std::size_t m = 0; m < vals.size(); ++m) {
                row[m] = ref_vals[m] == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                            : 100.0 * (ref_vals[m] - vals[m]) / ref_vals[m];
            }
            rows.push_back(std::move(row));
        }
        table.entries.push_back(std::move(rows));
    }
    return table;
}

std::string reports_to_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    out << "model,n,mae,rmse,smape,qlike,me,medae\n";
    for (const auto& r : reports) {
        out << r.label << ',' << r.n;
        for (double v : metric_values(r)) out << ',' << format_double(v);
        out << '\n';
    }
    return out.str();
}

std::string improvement_to_csv(const ImprovementTable& table) {
    std::ostringstream out;
    out << "reference,model,mae,rmse,smape,qlike,me,medae\n";
    for (std::size_t ri = 0; ri < table.references.size(); ++ri) {
        for (std::size_t mi = 0; mi < table.models.size(); ++mi) {
            out << table.references[ri] << ',' << table.models[mi];
            for (double v : table.entries[ri][mi]) {
                out << ',';
                if (std::isnan(v)) {
                    out << "NA";
                } else {
                    out << format_double(v);
                }
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace volcast::metrics
