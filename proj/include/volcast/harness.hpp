#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "volcast/common.hpp"
#include "volcast/deepnet.hpp"
#include "volcast/econometrics.hpp"
#include "volcast/marketdata.hpp"
#include "volcast/metrics.hpp"

namespace volcast::harness {

enum class StudyKind { oos, grid, linearity, generalisation };
std::string to_string(StudyKind);
StudyKind study_kind_from_string(const std::string&);

/// One model to run. Classical kinds are re-fitted on the training fold;
/// fixed_params skips fitting (used for known-parameter oracles, which also
/// seed the recursion at their implied unconditional variance). The labels
/// "martingale", "deepvol" and "deepvol_rv" are handled specially.
struct ModelEntry {
    std::string label;
    econ::ModelSpec spec;
    std::optional<econ::ParamVector> fixed_params;

    static ModelEntry classical(const std::string& name, int p = 1, int q = 1);
    static ModelEntry martingale();
    static ModelEntry deepvol(bool fusion = false);
    static ModelEntry oracle(const std::string& label, const econ::ModelSpec& spec,
                             const econ::ParamVector& params);

    [[nodiscard]] bool is_martingale() const { return label == "martingale"; }
    [[nodiscard]] bool is_deepvol() const { return label.rfind("deepvol", 0) == 0; }
};

/// One grid cell of the receptive-field x sampling-frequency study.
struct GridCell {
    int granularity = 5;
    int receptive_field = 1;
};

/// The Table-3 shaped default grid.
std::vector<GridCell> default_grid();

struct StudySpec {
    StudyKind kind = StudyKind::oos;
    Date train_end;                       // last training date (inclusive)
    std::optional<Date> test_end;         // defaults to the panel's last date
    std::vector<ModelEntry> models;
    std::vector<GridCell> grid;           // grid study only
    std::vector<int> linearity_fields = {1, 2, 3};
    std::vector<std::string> train_tickers, test_tickers;  // generalisation only
    deepnet::TrainConfig train_config;
    std::uint64_t seed = 1;
    int threads = 0;                      // 0 = resolve from env/hardware
    std::size_t min_fit_observations = 100;
};

struct ModelRun {
    std::string label;
    bool failed = false;
    std::string error;
    std::optional<metrics::MetricsReport> report;
    ForecastSet forecasts;
};

struct StudyResult {
    StudyKind kind = StudyKind::oos;
    std::vector<ModelRun> runs;
    std::optional<metrics::ImprovementTable> improvement;
    std::size_t n_records = 0;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
    std::string config_echo;  // JSON text

    [[nodiscard]] const ModelRun* find(const std::string& label) const;
};

StudyResult run_oos(const marketdata::Panel& panel, const StudySpec& spec);
StudyResult run_grid(const marketdata::Panel& panel, const StudySpec& spec);
StudyResult run_linearity(const marketdata::Panel& panel, const StudySpec& spec);
StudyResult run_generalisation(const marketdata::Panel& panel, const StudySpec& spec);
StudyResult run_study(const marketdata::Panel& panel, const StudySpec& spec);

/// Writes report.json, report.csv, improvement.csv, forecasts/<model>.csv
/// and meta.json into the run directory.
void write_study_result(const StudyResult& result, const std::string& directory);

/// Recomputes one emitted forecast from a panel truncated to dates strictly
/// before `target_date`, re-running the fit (or training) on the truncated
/// inputs. Used by the no-look-ahead audit; must reproduce the study value
/// bit for bit.
double recompute_forecast_truncated(const marketdata::Panel& panel, const StudySpec& spec,
                                    const std::string& label, const std::string& ticker, Date target_date);

}  // namespace volcast::harness
