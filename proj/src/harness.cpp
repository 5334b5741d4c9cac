#include "volcast/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace volcast::harness {

using marketdata::Panel;
using nlohmann::json;

std::string to_string(StudyKind kind) {
    switch (kind) {
        case StudyKind::oos: return "oos";
        case StudyKind::grid: return "grid";
        case StudyKind::linearity: return "linearity";
        case StudyKind::generalisation: return "generalisation";
    }
    throw std::logic_error("unknown StudyKind");
}

StudyKind study_kind_from_string(const std::string& name) {
    for (StudyKind k : {StudyKind::oos, StudyKind::grid, StudyKind::linearity, StudyKind::generalisation}) {
        if (to_string(k) == name) return k;
    }
    throw std::invalid_argument("unknown study kind: '" + name + "'");
}

ModelEntry ModelEntry::classical(const std::string& name, int p, int q) {
    ModelEntry e;
    e.label = name;
    e.spec.kind = econ::model_kind_from_string(name);
    e.spec.p = p;
    e.spec.q = q;
    return e;
}

ModelEntry ModelEntry::martingale() {
    ModelEntry e;
    e.label = "martingale";
    e.spec.kind = econ::ModelKind::martingale;
    return e;
}

ModelEntry ModelEntry::deepvol(bool fusion) {
    ModelEntry e;
    e.label = fusion ? "deepvol_rv" : "deepvol";
    return e;
}

ModelEntry ModelEntry::oracle(const std::string& label, const econ::ModelSpec& spec,
                              const econ::ParamVector& params) {
    ModelEntry e;
    e.label = label;
    e.spec = spec;
    e.fixed_params = params;
    return e;
}

std::vector<GridCell> default_grid() {
    std::vector<GridCell> cells;
    cells.push_back({1, 1});
    for (int rf : {1, 2, 3}) cells.push_back({5, rf});
    for (int rf : {1, 2, 3, 5}) cells.push_back({15, rf});
    for (int rf : {1, 2, 3, 5, 10}) cells.push_back({30, rf});
    for (int rf : {1, 2, 3, 5, 10}) cells.push_back({60, rf});
    return cells;
}

const ModelRun* StudyResult::find(const std::string& label) const {
    for (const auto& run : runs) {
        if (run.label == label) return &run;
    }
    return nullptr;
}

namespace {

/// One ticker's daily series in panel-date order; only days with a present
/// cell and an available close-to-close return take part in the recursions.
struct TickerSeries {
    std::vector<std::size_t> date_idx;
    std::vector<double> returns;
    std::vector<double> rv;

    [[nodiscard]] std::optional<std::size_t> position_of(std::size_t panel_date_idx) const {
        const auto it = std::lower_bound(date_idx.begin(), date_idx.end(), panel_date_idx);
        if (it == date_idx.end() || *it != panel_date_idx) return std::nullopt;
        return static_cast<std::size_t>(it - date_idx.begin());
    }
};

TickerSeries extract_series(const Panel& panel, std::size_t ticker_idx) {
    TickerSeries s;
    for (std::size_t di = 0; di < panel.dates.size(); ++di) {
        const auto& cell = panel.cell(ticker_idx, di);
        if (!cell || !cell->daily_return) continue;
        s.date_idx.push_back(di);
        s.returns.push_back(*cell->daily_return);
        s.rv.push_back(cell->rv);
    }
    return s;
}

std::size_t count_until(const std::vector<std::size_t>& sorted, std::size_t bound) {
    return static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), bound) - sorted.begin());
}

std::optional<double> implied_unconditional(const econ::ModelSpec& spec, const econ::ParamVector& params) {
    switch (spec.kind) {
        case econ::ModelKind::garch:
        case econ::ModelKind::agarch:
        case econ::ModelKind::aparch: {
            double sum = 0.0;
            for (double a : params.alpha) sum += a;
            for (double b : params.beta) sum += b;
            if (sum < 1.0 && params.omega > 0.0) return params.omega / (1.0 - sum);
            return std::nullopt;
        }
        default:
            return std::nullopt;
    }
}

struct Key {
    std::size_t ticker_idx;
    std::size_t date_idx;
    auto operator<=>(const Key&) const = default;
};

struct StudyContext {
    const Panel* panel = nullptr;
    std::vector<TickerSeries> series;   // per panel ticker
    std::size_t test_start_idx = 0;     // first panel date index after train_end
    std::size_t test_end_idx = 0;       // inclusive
    Date train_end;
};

StudyContext make_context(const Panel& panel, const StudySpec& spec) {
    StudyContext ctx;
    ctx.panel = &panel;
    ctx.train_end = spec.train_end;
    const Date test_end = spec.test_end.value_or(panel.dates.back());
    if (!(spec.train_end < test_end)) throw std::invalid_argument("train_end must precede test_end");
    if (panel.dates.front() > spec.train_end || panel.dates.back() < test_end) {
        throw std::invalid_argument("panel does not span the requested date folds");
    }
    ctx.test_start_idx = static_cast<std::size_t>(
        std::upper_bound(panel.dates.begin(), panel.dates.end(), spec.train_end) - panel.dates.begin());
    ctx.test_end_idx = static_cast<std::size_t>(
        std::upper_bound(panel.dates.begin(), panel.dates.end(), test_end) - panel.dates.begin() - 1);
    if (ctx.test_start_idx > ctx.test_end_idx) throw std::invalid_argument("empty test fold");
    for (std::size_t ti = 0; ti < panel.tickers.size(); ++ti) ctx.series.push_back(extract_series(panel, ti));
    return ctx;
}

/// Forecasts of one model for one ticker over the test fold, keyed by panel
/// date index. Only dates with a present target cell are emitted.
using TickerForecasts = std::map<std::size_t, double>;

TickerForecasts roll_classical(const StudyContext& ctx, const econ::VarianceModelFit& fit, std::size_t ticker_idx) {
    const TickerSeries& s = ctx.series[ticker_idx];
    TickerForecasts out;
    // series positions whose date lies in the test fold
    const std::size_t first_pos = count_until(s.date_idx, ctx.test_start_idx - 1);
    if (first_pos == 0) return out;  // a forecast needs at least one prior observation
    if (first_pos >= s.date_idx.size()) return out;
    const auto path = econ::rolling_forecasts(fit, s.returns, s.rv, first_pos);
    for (std::size_t pos = first_pos; pos < s.date_idx.size(); ++pos) {
        const std::size_t di = s.date_idx[pos];
        if (di > ctx.test_end_idx) break;
        out[di] = path[pos - first_pos];
    }
    return out;
}

TickerForecasts roll_martingale(const StudyContext& ctx, std::size_t ticker_idx) {
    const Panel& panel = *ctx.panel;
    TickerForecasts out;
    // last observed RV strictly before each test date
    std::optional<double> last_rv;
    for (std::size_t di = 0; di <= ctx.test_end_idx; ++di) {
        const auto& cell = panel.cell(ticker_idx, di);
        if (di >= ctx.test_start_idx && cell && last_rv) out[di] = econ::martingale_forecast(*last_rv);
        if (cell) last_rv = cell->rv;
    }
    return out;
}

econ::VarianceModelFit make_fixed_fit(const StudyContext& ctx, const ModelEntry& entry, std::size_t ticker_idx) {
    const TickerSeries& s = ctx.series[ticker_idx];
    const std::size_t n_train = count_until(s.date_idx, ctx.test_start_idx - 1);
    if (n_train == 0) throw std::invalid_argument("no training observations for fixed-parameter model");
    const std::vector<double> train_returns(s.returns.begin(), s.returns.begin() + static_cast<std::ptrdiff_t>(n_train));
    const std::vector<double> train_rv(s.rv.begin(), s.rv.begin() + static_cast<std::ptrdiff_t>(n_train));

    econ::VarianceModelFit fit;
    fit.spec = entry.spec;
    fit.params = *entry.fixed_params;
    econ::validate_params(fit.spec, fit.params);
    double ms = 0.0;
    for (double r : train_returns) ms += r * r;
    ms /= static_cast<double>(train_returns.size());
    fit.backcast = implied_unconditional(entry.spec, fit.params).value_or(ms);
    double rv_mean = 0.0;
    for (double v : train_rv) rv_mean += v;
    fit.rv_backcast = rv_mean / static_cast<double>(train_rv.size());
    fit.figarch_truncation = static_cast<int>(std::min<std::size_t>(1000, train_returns.size()));
    fit.sample_size = train_returns.size();
    fit.converged = true;
    econ::PathOptions opts;
    opts.backcast = fit.backcast;
    opts.rv_backcast = fit.rv_backcast;
    opts.figarch_truncation = fit.figarch_truncation;
    fit.loglik = -econ::negative_log_likelihood(fit.spec, fit.params, train_returns, train_rv, opts);
    return fit;
}

econ::VarianceModelFit fit_classical(const StudyContext& ctx, const ModelEntry& entry, std::size_t ticker_idx,
                                     std::size_t min_observations) {
    if (entry.fixed_params) return make_fixed_fit(ctx, entry, ticker_idx);
    const TickerSeries& s = ctx.series[ticker_idx];
    const std::size_t n_train = count_until(s.date_idx, ctx.test_start_idx - 1);
    const std::vector<double> train_returns(s.returns.begin(), s.returns.begin() + static_cast<std::ptrdiff_t>(n_train));
    const std::vector<double> train_rv(s.rv.begin(), s.rv.begin() + static_cast<std::ptrdiff_t>(n_train));
    econ::FitOptions options;
    options.min_observations = min_observations;
    return econ::fit(entry.spec, train_returns,
                     entry.spec.kind == econ::ModelKind::heavy ? train_rv : std::vector<double>{}, options);
}

struct DeepvolRun {
    deepnet::Network network;
    bool failed = false;
    std::string error;
};

deepnet::TrainConfig cell_train_config(const StudySpec& spec, int granularity, int receptive_field,
                                       bool fusion, std::uint64_t substream) {
    deepnet::TrainConfig cfg = spec.train_config;
    cfg.granularity = granularity;
    cfg.receptive_days = receptive_field;
    cfg.fusion = fusion;
    cfg.seed = mix_seed(spec.seed, substream);
    return cfg;
}

DeepvolRun train_deepvol(const StudyContext& ctx, const std::vector<std::string>& train_tickers,
                         const deepnet::TrainConfig& cfg) {
    DeepvolRun run;
    try {
        const auto samples = deepnet::build_samples(*ctx.panel, train_tickers, ctx.panel->dates.front(),
                                                    ctx.train_end, cfg);
        run.network = deepnet::train(samples, cfg).network;
    } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
    }
    return run;
}

TickerForecasts roll_deepvol(const StudyContext& ctx, const deepnet::Network& net, std::size_t ticker_idx) {
    const Panel& panel = *ctx.panel;
    TickerForecasts out;
    for (std::size_t di = ctx.test_start_idx; di <= ctx.test_end_idx; ++di) {
        const auto rec = deepnet::predict(net, panel, panel.tickers[ticker_idx], panel.dates[di - 1]);
        if (rec && std::isfinite(rec->forecast)) out[di] = rec->forecast;
    }
    return out;
}

/// Shared scoring: intersects the models' candidate keys, trims the first
/// `trim_days` test dates, and evaluates everyone on the common set.
void score_models(const StudyContext& ctx, const std::vector<std::string>& eval_tickers,
                  std::vector<ModelRun>& runs, const std::vector<std::map<std::size_t, TickerForecasts>>& forecasts,
                  std::size_t trim_days, StudyResult& result) {
    const Panel& panel = *ctx.panel;
    std::set<std::size_t> eval_ticker_idx;
    for (const auto& t : eval_tickers) {
        const auto ti = panel.ticker_index(t);
        if (ti) eval_ticker_idx.insert(*ti);
    }

    std::set<Key> common;
    bool first = true;
    for (std::size_t m = 0; m < runs.size(); ++m) {
        if (runs[m].failed) continue;
        std::set<Key> keys;
        for (const auto& [ti, per_date] : forecasts[m]) {
            if (!eval_ticker_idx.count(ti)) continue;
            for (const auto& [di, value] : per_date) {
                if (di < ctx.test_start_idx + trim_days) continue;
                if (!panel.cell(ti, di)) continue;  // proxy must exist
                keys.insert({ti, di});
            }
        }
        if (first) {
            common = std::move(keys);
            first = false;
        } else {
            std::set<Key> merged;
            std::set_intersection(common.begin(), common.end(), keys.begin(), keys.end(),
                                  std::inserter(merged, merged.begin()));
            common = std::move(merged);
        }
    }

    result.n_records = common.size();
    for (std::size_t m = 0; m < runs.size(); ++m) {
        if (runs[m].failed) continue;
        if (common.empty()) {
            runs[m].failed = true;
            runs[m].error = "no common forecast records";
            continue;
        }
        ForecastSet set;
        for (const Key& key : common) {
            ForecastRecord rec;
            rec.ticker = panel.tickers[key.ticker_idx];
            rec.date = panel.dates[key.date_idx];
            rec.forecast = forecasts[m].at(key.ticker_idx).at(key.date_idx);
            rec.proxy = panel.cell(key.ticker_idx, key.date_idx)->rv;
            set.push_back(std::move(rec));
        }
        try {
            runs[m].report = metrics::evaluate(set, runs[m].label);
            runs[m].forecasts = std::move(set);
        } catch (const std::exception& e) {
            runs[m].failed = true;
            runs[m].error = e.what();
        }
    }
}

void attach_improvement(StudyResult& result) {
    std::vector<metrics::MetricsReport> reports;
    for (const auto& run : result.runs) {
        if (run.report) reports.push_back(*run.report);
    }
    std::vector<std::string> refs;
    for (const char* candidate : {"martingale", "heavy"}) {
        for (const auto& r : reports) {
            if (r.label == candidate) {
                refs.emplace_back(candidate);
                break;
            }
        }
    }
    if (!refs.empty() && reports.size() > 1) result.improvement = metrics::improvement_table(reports, refs);
}

json spec_to_json(const StudySpec& spec) {
    json j;
    j["kind"] = to_string(spec.kind);
    j["train_end"] = spec.train_end.to_string();
    if (spec.test_end) j["test_end"] = spec.test_end->to_string();
    json models = json::array();
    for (const auto& m : spec.models) {
        json e;
        e["label"] = m.label;
        if (!m.is_deepvol()) {
            e["kind"] = econ::to_string(m.spec.kind);
            e["p"] = m.spec.p;
            e["q"] = m.spec.q;
        }
        if (m.fixed_params) {
            e["fixed_params"] = {{"omega", m.fixed_params->omega},
                                 {"alpha", m.fixed_params->alpha},
                                 {"beta", m.fixed_params->beta},
                                 {"gamma", m.fixed_params->gamma},
                                 {"d", m.fixed_params->d},
                                 {"delta", m.fixed_params->delta},
                                 {"omega_r", m.fixed_params->omega_r},
                                 {"alpha_r", m.fixed_params->alpha_r},
                                 {"beta_r", m.fixed_params->beta_r}};
        }
        models.push_back(std::move(e));
    }
    j["models"] = std::move(models);
    if (spec.kind == StudyKind::grid) {
        json grid = json::array();
        for (const auto& cell : spec.grid) grid.push_back({{"granularity", cell.granularity}, {"rf", cell.receptive_field}});
        j["grid"] = std::move(grid);
    }
    if (spec.kind == StudyKind::linearity) j["linearity_fields"] = spec.linearity_fields;
    if (spec.kind == StudyKind::generalisation) {
        j["train_tickers"] = spec.train_tickers;
        j["test_tickers"] = spec.test_tickers;
    }
    const auto& t = spec.train_config;
    j["train_config"] = {{"receptive_days", t.receptive_days},
                         {"granularity", t.granularity},
                         {"learning_rate", t.learning_rate},
                         {"batch_size", t.batch_size},
                         {"max_epochs", t.max_epochs},
                         {"patience", t.patience},
                         {"validation_fraction", t.validation_fraction},
                         {"loss", deepnet::to_string(t.loss)},
                         {"channels", t.channels},
                         {"kernel_width", t.kernel_width},
                         {"layers", t.layers}};
    j["seed"] = spec.seed;
    j["threads"] = spec.threads;
    j["min_fit_observations"] = spec.min_fit_observations;
    return j;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

/// Fits and rolls every non-deepvol entry for the given tickers in parallel.
void run_classical_models(const StudyContext& ctx, const StudySpec& spec,
                          const std::vector<std::string>& fit_tickers, std::vector<ModelRun>& runs,
                          std::vector<std::map<std::size_t, TickerForecasts>>& forecasts,
                          std::size_t min_observations) {
    const Panel& panel = *ctx.panel;
    struct Task {
        std::size_t model_idx;
        std::size_t ticker_idx;
    };
    std::vector<Task> tasks;
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        if (spec.models[m].is_deepvol()) continue;
        for (const auto& ticker : fit_tickers) {
            const auto ti = panel.ticker_index(ticker);
            if (!ti) throw std::invalid_argument("unknown ticker '" + ticker + "'");
            tasks.push_back({m, *ti});
        }
    }
    std::vector<TickerForecasts> slots(tasks.size());
    std::vector<std::string> errors(tasks.size());
    parallel_for(tasks.size(), resolve_threads(spec.threads), [&](std::size_t i) {
        const auto& task = tasks[i];
        const ModelEntry& entry = spec.models[task.model_idx];
        try {
            if (entry.is_martingale()) {
                slots[i] = roll_martingale(ctx, task.ticker_idx);
            } else {
                const auto fit = fit_classical(ctx, entry, task.ticker_idx, min_observations);
                slots[i] = roll_classical(ctx, fit, task.ticker_idx);
            }
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!errors[i].empty()) {
            runs[tasks[i].model_idx].failed = true;
            runs[tasks[i].model_idx].error = errors[i];
        } else {
            forecasts[tasks[i].model_idx][tasks[i].ticker_idx] = std::move(slots[i]);
        }
    }
}

}  // namespace

StudyResult run_oos(const Panel& panel, const StudySpec& spec) {
    Timer timer;
    StudyContext ctx = make_context(panel, spec);
    StudyResult result;
    result.kind = StudyKind::oos;
    result.seed = spec.seed;
    result.config_echo = spec_to_json(spec).dump();

    std::vector<ModelRun> runs(spec.models.size());
    std::vector<std::map<std::size_t, TickerForecasts>> forecasts(spec.models.size());
    for (std::size_t m = 0; m < spec.models.size(); ++m) runs[m].label = spec.models[m].label;

    run_classical_models(ctx, spec, panel.tickers, runs, forecasts, spec.min_fit_observations);

    std::size_t max_rf = 1;
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        const ModelEntry& entry = spec.models[m];
        if (!entry.is_deepvol()) continue;
        const auto cfg = cell_train_config(spec, spec.train_config.granularity, spec.train_config.receptive_days,
                                           entry.label == "deepvol_rv", 0xDEE0 + m);
        max_rf = std::max<std::size_t>(max_rf, static_cast<std::size_t>(cfg.receptive_days));
        const DeepvolRun dv = train_deepvol(ctx, panel.tickers, cfg);
        if (dv.failed) {
            runs[m].failed = true;
            runs[m].error = dv.error;
            continue;
        }
        for (std::size_t ti = 0; ti < panel.tickers.size(); ++ti) {
            forecasts[m][ti] = roll_deepvol(ctx, dv.network, ti);
        }
    }

    score_models(ctx, panel.tickers, runs, forecasts, max_rf - 1, result);
    result.runs = std::move(runs);
    attach_improvement(result);
    result.wall_seconds = timer.seconds();
    return result;
}

StudyResult run_grid(const Panel& panel, const StudySpec& spec) {
    Timer timer;
    StudyContext ctx = make_context(panel, spec);
    StudyResult result;
    result.kind = StudyKind::grid;
    result.seed = spec.seed;
    result.config_echo = spec_to_json(spec).dump();

    const std::vector<GridCell> cells = spec.grid.empty() ? default_grid() : spec.grid;
    std::vector<ModelRun> runs(cells.size());
    std::vector<std::map<std::size_t, TickerForecasts>> forecasts(cells.size());
    std::vector<DeepvolRun> trained(cells.size());

    parallel_for(cells.size(), resolve_threads(spec.threads), [&](std::size_t c) {
        // substream matches run_oos's first deepvol entry, so a one-cell grid
        // reduces to the oos deepvol branch exactly
        const auto cfg = cell_train_config(spec, cells[c].granularity, cells[c].receptive_field, false, 0xDEE0 + c);
        trained[c] = train_deepvol(ctx, panel.tickers, cfg);
    });

    for (std::size_t c = 0; c < cells.size(); ++c) {
        runs[c].label = "deepvol_g" + std::to_string(cells[c].granularity) + "_rf" +
                        std::to_string(cells[c].receptive_field);
        if (trained[c].failed) {
            runs[c].failed = true;
            runs[c].error = trained[c].error;
            continue;
        }
        for (std::size_t ti = 0; ti < panel.tickers.size(); ++ti) {
            forecasts[c][ti] = roll_deepvol(ctx, trained[c].network, ti);
        }
    }

    // cells score independently: each drops its first rf-1 test days
    result.n_records = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (runs[c].failed) continue;
        StudyResult cell_result;
        std::vector<ModelRun> one{std::move(runs[c])};
        std::vector<std::map<std::size_t, TickerForecasts>> fc{std::move(forecasts[c])};
        score_models(ctx, panel.tickers, one, fc, static_cast<std::size_t>(cells[c].receptive_field) - 1,
                     cell_result);
        runs[c] = std::move(one.front());
        result.n_records = std::max(result.n_records, cell_result.n_records);
    }
    result.runs = std::move(runs);
    result.wall_seconds = timer.seconds();
    return result;
}

StudyResult run_linearity(const Panel& panel, const StudySpec& spec) {
    Timer timer;
    StudyContext ctx = make_context(panel, spec);
    StudyResult result;
    result.kind = StudyKind::linearity;
    result.seed = spec.seed;
    result.config_echo = spec_to_json(spec).dump();

    struct Variant {
        int rf;
        bool fusion;
    };
    std::vector<Variant> variants;
    for (int rf : spec.linearity_fields) {
        variants.push_back({rf, true});
        variants.push_back({rf, false});
    }
    std::vector<ModelRun> runs(variants.size());
    std::vector<std::map<std::size_t, TickerForecasts>> forecasts(variants.size());
    std::vector<DeepvolRun> trained(variants.size());
    std::size_t max_rf = 1;
    for (const auto& v : variants) max_rf = std::max<std::size_t>(max_rf, static_cast<std::size_t>(v.rf));

    parallel_for(variants.size(), resolve_threads(spec.threads), [&](std::size_t i) {
        // seed depends on rf only, so the fusion and plain variant of the same
        // rf share initialization of the common parameters
        const auto cfg = cell_train_config(spec, spec.train_config.granularity, variants[i].rf, variants[i].fusion,
                                           0x11A0 + static_cast<std::uint64_t>(variants[i].rf));
        trained[i] = train_deepvol(ctx, panel.tickers, cfg);
    });

    for (std::size_t i = 0; i < variants.size(); ++i) {
        runs[i].label = std::string(variants[i].fusion ? "deepvol_rv" : "deepvol") + "_rf" +
                        std::to_string(variants[i].rf);
        if (trained[i].failed) {
            runs[i].failed = true;
            runs[i].error = trained[i].error;
            continue;
        }
        for (std::size_t ti = 0; ti < panel.tickers.size(); ++ti) {
            forecasts[i][ti] = roll_deepvol(ctx, trained[i].network, ti);
        }
    }

    score_models(ctx, panel.tickers, runs, forecasts, max_rf - 1, result);
    result.runs = std::move(runs);
    result.wall_seconds = timer.seconds();
    return result;
}

StudyResult run_generalisation(const Panel& panel, const StudySpec& spec) {
    Timer timer;
    if (spec.train_tickers.empty() || spec.test_tickers.empty()) {
        throw std::invalid_argument("generalisation needs non-empty train and test ticker sets");
    }
    for (const auto& t : spec.train_tickers) {
        if (std::find(spec.test_tickers.begin(), spec.test_tickers.end(), t) != spec.test_tickers.end()) {
            throw std::invalid_argument("train and test ticker sets must be disjoint (found '" + t + "')");
        }
    }
    StudyContext ctx = make_context(panel, spec);
    StudyResult result;
    result.kind = StudyKind::generalisation;
    result.seed = spec.seed;
    result.config_echo = spec_to_json(spec).dump();

    std::vector<ModelRun> runs(spec.models.size());
    std::vector<std::map<std::size_t, TickerForecasts>> forecasts(spec.models.size());
    for (std::size_t m = 0; m < spec.models.size(); ++m) runs[m].label = spec.models[m].label;

    // classical models refit on each *test* ticker's pre-test history
    run_classical_models(ctx, spec, spec.test_tickers, runs, forecasts, spec.min_fit_observations);

    std::size_t max_rf = 1;
    for (std::size_t m = 0; m < spec.models.size(); ++m) {
        const ModelEntry& entry = spec.models[m];
        if (!entry.is_deepvol()) continue;
        const auto cfg = cell_train_config(spec, spec.train_config.granularity, spec.train_config.receptive_days,
                                           entry.label == "deepvol_rv", 0xDEE0 + m);
        max_rf = std::max<std::size_t>(max_rf, static_cast<std::size_t>(cfg.receptive_days));
        const DeepvolRun dv = train_deepvol(ctx, spec.train_tickers, cfg);  // train tickers only
        if (dv.failed) {
            runs[m].failed = true;
            runs[m].error = dv.error;
            continue;
        }
        for (const auto& ticker : spec.test_tickers) {
            const auto ti = panel.ticker_index(ticker);
            if (ti) forecasts[m][*ti] = roll_deepvol(ctx, dv.network, *ti);
        }
    }

    score_models(ctx, spec.test_tickers, runs, forecasts, max_rf - 1, result);
    result.runs = std::move(runs);
    attach_improvement(result);
    result.wall_seconds = timer.seconds();
    return result;
}

StudyResult run_study(const Panel& panel, const StudySpec& spec) {
    switch (spec.kind) {
        case StudyKind::oos: return run_oos(panel, spec);
        case StudyKind::grid: return run_grid(panel, spec);
        case StudyKind::linearity: return run_linearity(panel, spec);
        case StudyKind::generalisation: return run_generalisation(panel, spec);
    }
    throw std::logic_error("unknown StudyKind");
}

void write_study_result(const StudyResult& result, const std::string& directory) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(directory) / "forecasts");

    std::vector<metrics::MetricsReport> reports;
    json report_json;
    report_json["kind"] = to_string(result.kind);
    report_json["n_records"] = result.n_records;
    json model_array = json::array();
    for (const auto& run : result.runs) {
        json m;
        m["label"] = run.label;
        m["failed"] = run.failed;
        if (run.failed) m["error"] = run.error;
        if (run.report) {
            reports.push_back(*run.report);
            m["metrics"] = {{"n", run.report->n},   {"mae", run.report->mae},     {"rmse", run.report->rmse},
                            {"smape", run.report->smape}, {"qlike", run.report->qlike}, {"me", run.report->me},
                            {"medae", run.report->medae}};
        }
        model_array.push_back(std::move(m));
    }
    report_json["models"] = std::move(model_array);
    if (result.improvement) {
        json imp;
        for (std::size_t r = 0; r < result.improvement->references.size(); ++r) {
            json per_model;
            for (std::size_t m = 0; m < result.improvement->models.size(); ++m) {
                json row;
                for (std::size_t k = 0; k < 6; ++k) {
                    const double v = result.improvement->entries[r][m][k];
                    row[metrics::kMetricNames[k]] = std::isnan(v) ? json(nullptr) : json(v);
                }
                per_model[result.improvement->models[m]] = std::move(row);
            }
            imp[result.improvement->references[r]] = std::move(per_model);
        }
        report_json["improvement"] = std::move(imp);
    }

    std::ofstream(fs::path(directory) / "report.json") << report_json.dump(2) << '\n';
    std::ofstream(fs::path(directory) / "report.csv") << metrics::reports_to_csv(reports);
    if (result.improvement) {
        std::ofstream(fs::path(directory) / "improvement.csv") << metrics::improvement_to_csv(*result.improvement);
    }
    for (const auto& run : result.runs) {
        if (run.forecasts.empty()) continue;
        std::ofstream out(fs::path(directory) / "forecasts" / (run.label + ".csv"));
        out << "ticker,date,forecast,proxy\n";
        for (const auto& rec : run.forecasts) {
            out << rec.ticker << ',' << rec.date.to_string() << ',' << format_double(rec.forecast) << ','
                << format_double(rec.proxy) << '\n';
        }
    }
    json meta;
    meta["config"] = json::parse(result.config_echo);
    meta["seed"] = result.seed;
    meta["wall_seconds"] = result.wall_seconds;
    std::ofstream(fs::path(directory) / "meta.json") << meta.dump(2) << '\n';
}

double recompute_forecast_truncated(const Panel& panel, const StudySpec& spec, const std::string& label,
                                    const std::string& ticker, Date target_date) {
    // panel truncated to dates strictly before the target
    Panel truncated;
    truncated.tickers = panel.tickers;
    truncated.granularities = panel.granularities;
    truncated.session = panel.session;
    truncated.source_digest = panel.source_digest;
    for (const Date& d : panel.dates) {
        if (d < target_date) truncated.dates.push_back(d);
    }
    for (std::size_t ti = 0; ti < panel.tickers.size(); ++ti) {
        for (std::size_t di = 0; di < truncated.dates.size(); ++di) {
            truncated.cells.push_back(panel.cell(ti, di));
        }
    }

    const ModelEntry* entry = nullptr;
    for (const auto& m : spec.models) {
        if (m.label == label) entry = &m;
    }
    if (!entry) throw std::invalid_argument("recompute: unknown model label '" + label + "'");

    const auto ti = truncated.ticker_index(ticker);
    if (!ti) throw std::invalid_argument("recompute: unknown ticker");
    if (truncated.dates.empty() || truncated.dates.back() < spec.train_end) {
        throw std::invalid_argument("recompute: target date precedes the test fold");
    }

    // training-fold-only context; the truncated panel may end exactly at
    // train_end, which make_context would reject
    StudyContext ctx;
    ctx.panel = &truncated;
    ctx.train_end = spec.train_end;
    ctx.test_start_idx = static_cast<std::size_t>(
        std::upper_bound(truncated.dates.begin(), truncated.dates.end(), spec.train_end) -
        truncated.dates.begin());
    ctx.test_end_idx = truncated.dates.size() - 1;
    for (std::size_t t = 0; t < truncated.tickers.size(); ++t) ctx.series.push_back(extract_series(truncated, t));

    if (entry->is_martingale()) {
        std::optional<double> last_rv;
        for (std::size_t di = 0; di < truncated.dates.size(); ++di) {
            const auto& cell = truncated.cell(*ti, di);
            if (cell) last_rv = cell->rv;
        }
        if (!last_rv) throw std::runtime_error("recompute: no RV history");
        return econ::martingale_forecast(*last_rv);
    }
    if (entry->is_deepvol()) {
        const auto cfg = cell_train_config(spec, spec.train_config.granularity, spec.train_config.receptive_days,
                                           entry->label == "deepvol_rv",
                                           0xDEE0 + static_cast<std::size_t>(entry - spec.models.data()));
        const auto train_tickers =
            spec.kind == StudyKind::generalisation ? spec.train_tickers : truncated.tickers;
        const DeepvolRun dv = train_deepvol(ctx, train_tickers, cfg);
        if (dv.failed) throw std::runtime_error("recompute: training failed: " + dv.error);
        // anchor: the last truncated date; predict() targets anchor+1, which
        // no longer exists here, so run the window assembly directly
        const int T = cfg.receptive_days;
        std::vector<double> window, rv_aux;
        const std::size_t last = truncated.dates.size() - 1;
        for (int k = T - 1; k >= 0; --k) {
            const auto& cell = truncated.cell(*ti, last - static_cast<std::size_t>(k));
            if (!cell) throw std::runtime_error("recompute: window day missing");
            const auto& ir = cell->intraday.at(cfg.granularity);
            window.insert(window.end(), ir.returns.begin(), ir.returns.end());
            rv_aux.push_back(cell->rv);
        }
        return dv.network.forward(window, cfg.fusion ? rv_aux : std::vector<double>{});
    }
    const auto fit = fit_classical(ctx, *entry, *ti, spec.min_fit_observations);
    const TickerSeries& s = ctx.series[*ti];
    return econ::forecast_one_step(fit, s.returns, s.rv);
}

}  // namespace volcast::harness
