// volcast - volatility forecasting toolkit command line
//
// Subcommands: simulate, ingest, fit, train, study, report. Every command
// accepts --config <json>; explicit flags override config values, and the
// effective configuration is echoed next to the outputs as meta.json so any
// run can be reproduced from its metadata alone.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "volcast/deepnet.hpp"
#include "volcast/econometrics.hpp"
#include "volcast/harness.hpp"
#include "volcast/marketdata.hpp"
#include "volcast/metrics.hpp"
#include "volcast/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace volcast;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitModelFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_config_file(const std::string& path, const std::string& command,
                      const std::set<std::string>& allowed_keys) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw UsageError("config parse error in " + path + ": " + e.what());
    }
    if (j.value("schema", "") != std::string("volcast_run_v1")) {
        throw UsageError("config must carry schema \"volcast_run_v1\"");
    }
    if (j.value("command", "") != command) {
        throw UsageError("config command '" + j.value("command", "") + "' does not match subcommand '" + command +
                         "'");
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        // wall_seconds / library_config appear in persisted meta.json files,
        // which double as configs for reproducing a run
        if (key == "schema" || key == "command" || key == "wall_seconds" || key == "library_config") continue;
        if (!allowed_keys.count(key)) {
            throw UsageError("unknown config key '" + key + "' for command '" + command + "'");
        }
    }
    j.erase("wall_seconds");
    j.erase("library_config");
    return j;
}

void write_meta(const std::string& path, const json& effective) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write meta file: " + path);
    out << effective.dump(2) << '\n';
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> split_ints(const std::string& text) {
    std::vector<int> out;
    for (const auto& s : split_csv(text)) out.push_back(std::stoi(s));
    return out;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const json& cfg) {
    synth::SimSpec spec;
    spec.n_days = cfg.value("days", 250);
    spec.n_tickers = cfg.value("tickers", 1);
    spec.bars_per_day = cfg.value("bars_per_day", 78);
    synth::GarchTruth truth;
    truth.omega = cfg.value("omega", 0.05);
    truth.alpha = cfg.value("alpha", 0.10);
    truth.beta = cfg.value("beta", 0.85);
    spec.params = {truth};
    spec.diurnal = cfg.value("diurnal", false);
    spec.seed = cfg.value("seed", std::uint64_t{1});
    if (cfg.contains("start_date")) spec.start_date = Date::parse(cfg.at("start_date").get<std::string>());
    const std::string out_path = cfg.value("out", "");
    if (out_path.empty()) throw UsageError("simulate: --out is required");

    try {
        spec.validate();
    } catch (const std::exception& e) {
        throw UsageError(std::string("simulate: ") + e.what());
    }
    const auto result = synth::simulate(spec);
    marketdata::write_bars_csv(out_path, result.series);
    if (cfg.contains("truth")) synth::write_truth_csv(cfg.at("truth").get<std::string>(), result.truth);

    char digest[24];
    std::snprintf(digest, sizeof(digest), "%016llx",
                  static_cast<unsigned long long>(file_digest(out_path)));
    std::cout << "simulated " << spec.n_tickers << " tickers x " << spec.n_days << " days x " << spec.bars_per_day
              << " bars/day (omega=" << truth.omega << ", alpha=" << truth.alpha << ", beta=" << truth.beta
              << ", diurnal=" << (spec.diurnal ? "on" : "off") << ", seed=" << spec.seed << ")\n"
              << "wrote " << out_path << " digest=" << digest << "\n";
    write_meta(out_path + ".meta.json", cfg);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

int cmd_ingest(const json& cfg) {
    const std::string bars_path = cfg.value("bars", "");
    const std::string out_path = cfg.value("out", "");
    if (bars_path.empty() || out_path.empty()) throw UsageError("ingest: --bars and --out are required");
    if (!fs::exists(bars_path)) throw UsageError("ingest: input file does not exist: " + bars_path);

    Session session;
    session.open_minute = cfg.value("session_open", 9 * 60 + 30);
    session.close_minute = cfg.value("session_close", 16 * 60);

    marketdata::PanelBuildOptions options;
    if (cfg.contains("granularities")) options.granularities = cfg.at("granularities").get<std::vector<int>>();

    const auto loaded = marketdata::load_bars(bars_path, session);
    if (loaded.dropped_out_of_session > 0) {
        std::cout << "warning: dropped " << loaded.dropped_out_of_session << " out-of-session bars\n";
    }
    auto panel = marketdata::build_panel(loaded.series, options);
    char digest[24];
    std::snprintf(digest, sizeof(digest), "%016llx", static_cast<unsigned long long>(file_digest(bars_path)));
    panel.source_digest = digest;
    marketdata::save_panel(panel, out_path);

    for (std::size_t ti = 0; ti < panel.tickers.size(); ++ti) {
        std::size_t present = 0;
        for (std::size_t di = 0; di < panel.dates.size(); ++di) {
            if (panel.cell(ti, di)) ++present;
        }
        std::cout << panel.tickers[ti] << ": " << present << " days, " << panel.dates.size() - present
                  << " missing\n";
    }
    std::cout << "wrote " << out_path << " (" << panel.tickers.size() << " tickers x " << panel.dates.size()
              << " dates, source digest " << digest << ")\n";
    write_meta(out_path + ".meta.json", cfg);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const json& cfg) {
    const std::string panel_path = cfg.value("panel", "");
    const std::string out_path = cfg.value("out", "");
    const std::string model = cfg.value("model", "");
    if (panel_path.empty() || out_path.empty() || model.empty()) {
        throw UsageError("fit: --panel, --model and --out are required");
    }
    if (!fs::exists(panel_path)) throw UsageError("fit: panel file does not exist: " + panel_path);

    econ::ModelSpec spec;
    try {
        spec.kind = econ::model_kind_from_string(model);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    spec.p = cfg.value("p", 1);
    spec.q = cfg.value("q", 1);
    if (spec.kind == econ::ModelKind::martingale) throw UsageError("fit: the martingale has nothing to fit");

    const auto panel = marketdata::load_panel(panel_path);
    const std::string ticker = cfg.value("ticker", panel.tickers.front());
    const auto ti = panel.ticker_index(ticker);
    if (!ti) throw UsageError("fit: unknown ticker '" + ticker + "'");
    const Date train_end = cfg.contains("train_end") ? Date::parse(cfg.at("train_end").get<std::string>())
                                                     : panel.dates.back();

    std::vector<double> returns, rv;
    for (std::size_t di = 0; di < panel.dates.size(); ++di) {
        if (panel.dates[di] > train_end) break;
        const auto& cell = panel.cell(*ti, di);
        if (!cell || !cell->daily_return) continue;
        returns.push_back(*cell->daily_return);
        rv.push_back(cell->rv);
    }
    econ::FitOptions options;
    options.min_observations = cfg.value("min_observations", std::size_t{100});
    const auto fit = econ::fit(spec, returns, spec.kind == econ::ModelKind::heavy ? rv : std::vector<double>{},
                               options);
    econ::save_fit(fit, out_path);

    std::cout << econ::to_string(spec.kind) << "(" << spec.p << "," << spec.q << ") on " << ticker << ": T="
              << fit.sample_size << " loglik=" << format_double(fit.loglik)
              << " converged=" << (fit.converged ? "yes" : "no") << "\n  omega=" << format_double(fit.params.omega);
    for (std::size_t i = 0; i < fit.params.alpha.size(); ++i)
        std::cout << " alpha" << i + 1 << "=" << format_double(fit.params.alpha[i]);
    for (std::size_t j = 0; j < fit.params.beta.size(); ++j)
        std::cout << " beta" << j + 1 << "=" << format_double(fit.params.beta[j]);
    if (spec.kind == econ::ModelKind::figarch) std::cout << " d=" << format_double(fit.params.d);
    if (spec.kind == econ::ModelKind::aparch) std::cout << " delta=" << format_double(fit.params.delta);
    std::cout << "\nwrote " << out_path << "\n";
    write_meta(out_path + ".meta.json", cfg);
    return fit.converged ? kExitOk : kExitModelFailure;
}

// ---------------------------------------------------------------------------
// train / study shared config
// ---------------------------------------------------------------------------

deepnet::TrainConfig train_config_from_json(const json& cfg) {
    deepnet::TrainConfig t;
    t.receptive_days = cfg.value("receptive_field", 1);
    t.granularity = cfg.value("granularity", 5);
    t.learning_rate = cfg.value("learning_rate", 1e-3);
    t.batch_size = cfg.value("batch_size", 64);
    t.max_epochs = cfg.value("max_epochs", 200);
    t.patience = cfg.value("patience", 10);
    t.validation_fraction = cfg.value("validation_fraction", 0.2);
    t.seed = cfg.value("seed", std::uint64_t{1});
    t.loss = deepnet::loss_kind_from_string(cfg.value("loss", "qlike"));
    t.channels = cfg.value("channels", 8);
    t.kernel_width = cfg.value("kernel_width", 2);
    t.layers = cfg.value("layers", 0);
    t.fusion = cfg.value("fusion", false);
    return t;
}

int cmd_train(const json& cfg) {
    const std::string panel_path = cfg.value("panel", "");
    const std::string out_dir = cfg.value("out", "");
    if (panel_path.empty() || out_dir.empty()) throw UsageError("train: --panel and --out are required");
    if (!fs::exists(panel_path)) throw UsageError("train: panel file does not exist: " + panel_path);

    const auto panel = marketdata::load_panel(panel_path);
    deepnet::TrainConfig tc = train_config_from_json(cfg);
    try {
        tc.validate();
    } catch (const std::exception& e) {
        throw UsageError(std::string("train: ") + e.what());
    }
    const Date train_end = cfg.contains("train_end") ? Date::parse(cfg.at("train_end").get<std::string>())
                                                     : panel.dates.back();

    const auto samples = deepnet::build_samples(panel, panel.tickers, panel.dates.front(), train_end, tc);
    if (samples.empty()) throw UsageError("train: no usable samples in the training range");
    std::cout << "training on " << samples.size() << " samples, input length "
              << samples.front().window.size() << " (" << tc.receptive_days << " days x "
              << samples.front().window.size() / static_cast<std::size_t>(tc.receptive_days)
              << " returns)\n";

    const auto result = deepnet::train(samples, tc);
    fs::create_directories(out_dir);
    deepnet::save_network(result.network, (fs::path(out_dir) / "network.json").string());
    json history;
    history["train_loss"] = result.history.train_loss;
    history["val_loss"] = result.history.val_loss;
    history["best_epoch"] = result.history.best_epoch;
    std::ofstream((fs::path(out_dir) / "history.json").string()) << history.dump(2) << '\n';
    write_meta((fs::path(out_dir) / "meta.json").string(), cfg);
    std::cout << "best validation loss " << format_double(result.history.val_loss.empty()
                                                              ? 0.0
                                                              : result.history.val_loss[static_cast<std::size_t>(
                                                                    result.history.best_epoch)])
              << " at epoch " << result.history.best_epoch << "\nwrote " << out_dir << "/network.json\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// study
// ---------------------------------------------------------------------------

harness::StudySpec study_spec_from_json(const json& cfg) {
    harness::StudySpec spec;
    spec.kind = harness::study_kind_from_string(cfg.value("kind", "oos"));
    if (!cfg.contains("train_end")) throw UsageError("study: --train-end is required");
    spec.train_end = Date::parse(cfg.at("train_end").get<std::string>());
    if (cfg.contains("test_end")) spec.test_end = Date::parse(cfg.at("test_end").get<std::string>());
    spec.seed = cfg.value("seed", std::uint64_t{1});
    spec.threads = cfg.value("threads", 0);
    spec.min_fit_observations = cfg.value("min_fit_observations", std::size_t{100});
    spec.train_config = train_config_from_json(cfg);

    for (const auto& label : split_csv(cfg.value("models", "martingale,garch,heavy,deepvol"))) {
        if (label == "deepvol") {
            spec.models.push_back(harness::ModelEntry::deepvol(false));
        } else if (label == "deepvol_rv") {
            spec.models.push_back(harness::ModelEntry::deepvol(true));
        } else if (label == "martingale") {
            spec.models.push_back(harness::ModelEntry::martingale());
        } else {
            try {
                spec.models.push_back(harness::ModelEntry::classical(label, cfg.value("p", 1), cfg.value("q", 1)));
            } catch (const std::exception& e) {
                throw UsageError(e.what());
            }
        }
    }
    if (cfg.contains("oracle_garch")) {
        const auto parts = cfg.at("oracle_garch").get<std::vector<double>>();
        if (parts.size() != 3) throw UsageError("study: oracle_garch needs [omega, alpha, beta]");
        econ::ParamVector params;
        params.omega = parts[0];
        params.alpha = {parts[1]};
        params.beta = {parts[2]};
        spec.models.push_back(harness::ModelEntry::oracle("garch_true", {econ::ModelKind::garch, 1, 1}, params));
    }
    if (cfg.contains("grid")) {
        for (const auto& cell : split_csv(cfg.at("grid").get<std::string>())) {
            const auto colon = cell.find(':');
            if (colon == std::string::npos) throw UsageError("study: grid cells look like '5:1,5:2'");
            spec.grid.push_back({std::stoi(cell.substr(0, colon)), std::stoi(cell.substr(colon + 1))});
        }
    }
    if (cfg.contains("rf_list")) spec.linearity_fields = split_ints(cfg.at("rf_list").get<std::string>());
    if (cfg.contains("train_tickers")) spec.train_tickers = split_csv(cfg.at("train_tickers").get<std::string>());
    if (cfg.contains("test_tickers")) spec.test_tickers = split_csv(cfg.at("test_tickers").get<std::string>());
    return spec;
}

int cmd_study(const json& cfg) {
    const std::string panel_path = cfg.value("panel", "");
    const std::string out_dir = cfg.value("out", "");
    if (panel_path.empty() || out_dir.empty()) throw UsageError("study: --panel and --out are required");
    if (!fs::exists(panel_path)) throw UsageError("study: panel file does not exist: " + panel_path);

    const auto panel = marketdata::load_panel(panel_path);
    harness::StudySpec spec = study_spec_from_json(cfg);

    harness::StudyResult result;
    try {
        result = harness::run_study(panel, spec);
    } catch (const std::exception& e) {
        throw UsageError(std::string("study: ") + e.what());
    }
    fs::create_directories(out_dir);
    harness::write_study_result(result, out_dir);
    json meta = cfg;
    meta["wall_seconds"] = result.wall_seconds;
    meta["library_config"] = json::parse(result.config_echo);
    write_meta((fs::path(out_dir) / "meta.json").string(), meta);

    bool any_failed = false;
    for (const auto& run : result.runs) {
        if (run.failed) {
            any_failed = true;
            std::cout << run.label << ": FAILED (" << run.error << ")\n";
        } else if (run.report) {
            std::cout << run.label << ": n=" << run.report->n << " mae=" << format_double(run.report->mae)
                      << " rmse=" << format_double(run.report->rmse) << " qlike=" << format_double(run.report->qlike)
                      << "\n";
        }
    }
    std::cout << "wrote " << out_dir << " (" << result.n_records << " records, "
              << format_double(result.wall_seconds) << "s)\n";
    return any_failed ? kExitModelFailure : kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const json& cfg) {
    const std::string run_dir = cfg.value("run", "");
    if (run_dir.empty()) throw UsageError("report: --run is required");
    const fs::path forecasts_dir = fs::path(run_dir) / "forecasts";
    if (!fs::exists(forecasts_dir)) throw UsageError("report: no forecasts directory under " + run_dir);

    std::map<std::string, ForecastSet> sets;
    for (const auto& entry : fs::directory_iterator(forecasts_dir)) {
        if (entry.path().extension() != ".csv") continue;
        std::ifstream in(entry.path());
        std::string line;
        std::getline(in, line);  // header
        ForecastSet set;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string ticker, date, forecast, proxy;
            std::getline(ss, ticker, ',');
            std::getline(ss, date, ',');
            std::getline(ss, forecast, ',');
            std::getline(ss, proxy, ',');
            set.push_back({ticker, Date::parse(date), std::stod(forecast), std::stod(proxy)});
        }
        if (!set.empty()) sets[entry.path().stem().string()] = std::move(set);
    }
    if (sets.empty()) throw UsageError("report: no forecast files found");

    std::vector<metrics::MetricsReport> reports;
    for (const auto& [label, set] : sets) reports.push_back(metrics::evaluate(set, label));
    std::cout << metrics::reports_to_csv(reports);

    std::vector<std::string> refs;
    for (const auto& r : split_csv(cfg.value("refs", ""))) refs.push_back(r);
    if (!refs.empty()) {
        std::cout << "\n" << metrics::improvement_to_csv(metrics::improvement_table(reports, refs));
    }

    if (cfg.contains("plot")) {
        // per-date forecast series for one ticker, one column per model
        std::string ticker = cfg.value("ticker", "");
        if (ticker.empty()) {
            std::set<std::string> tickers;
            for (const auto& [label, set] : sets)
                for (const auto& rec : set) tickers.insert(rec.ticker);
            if (tickers.size() != 1) throw UsageError("report: --ticker is required with multi-ticker runs");
            ticker = *tickers.begin();
        }
        std::map<Date, std::map<std::string, double>> by_date;
        std::map<Date, double> proxies;
        for (const auto& [label, set] : sets) {
            for (const auto& rec : set) {
                if (rec.ticker != ticker) continue;
                by_date[rec.date][label] = rec.forecast;
                proxies[rec.date] = rec.proxy;
            }
        }
        std::ofstream out(cfg.at("plot").get<std::string>());
        out << "date,proxy";
        for (const auto& [label, set] : sets) out << ',' << label;
        out << '\n';
        for (const auto& [date, values] : by_date) {
            out << date.to_string() << ',' << format_double(proxies[date]);
            for (const auto& [label, set] : sets) {
                out << ',';
                const auto it = values.find(label);
                if (it != values.end()) out << format_double(it->second);
            }
            out << '\n';
        }
        std::cout << "wrote plot series to " << cfg.at("plot").get<std::string>() << " for " << ticker << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

struct CommandSpec {
    std::string name;
    std::set<std::string> keys;
    int (*run)(const json&);
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volcast - volatility forecasting from intraday bars"};
    app.require_subcommand(1);

    json cfg;  // effective config assembled from --config then flags
    std::string config_path;

    const std::vector<CommandSpec> commands = {
        {"simulate",
         {"days", "tickers", "bars_per_day", "omega", "alpha", "beta", "diurnal", "seed", "start_date", "out",
          "truth"},
         cmd_simulate},
        {"ingest", {"bars", "granularities", "session_open", "session_close", "out"}, cmd_ingest},
        {"fit", {"panel", "model", "p", "q", "ticker", "train_end", "min_observations", "out"}, cmd_fit},
        {"train",
         {"panel", "train_end", "out", "receptive_field", "granularity", "learning_rate", "batch_size", "max_epochs",
          "patience", "validation_fraction", "seed", "loss", "channels", "kernel_width", "layers", "fusion"},
         cmd_train},
        {"study",
         {"panel", "kind", "train_end", "test_end", "models", "p", "q", "oracle_garch", "grid", "rf_list",
          "train_tickers", "test_tickers", "seed", "threads", "min_fit_observations", "out", "receptive_field",
          "granularity", "learning_rate", "batch_size", "max_epochs", "patience", "validation_fraction", "loss",
          "channels", "kernel_width", "layers", "fusion"},
         cmd_study},
        {"report", {"run", "refs", "plot", "ticker"}, cmd_report},
    };

    // flag registration: every key maps to one string/number/bool option;
    // values land directly in the json config so config files and flags share
    // one schema
    std::map<std::string, std::map<std::string, std::string>> string_values;
    std::map<std::string, std::map<std::string, bool>> flag_values;
    const std::set<std::string> bool_keys = {"diurnal", "fusion"};

    for (const auto& command : commands) {
        CLI::App* sub = app.add_subcommand(command.name, command.name + " subcommand");
        sub->add_option("--config", config_path, "JSON config file (flags override its values)");
        for (const auto& key : command.keys) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            if (bool_keys.count(key)) {
                sub->add_flag(flag, flag_values[command.name][key], key);
            } else {
                sub->add_option(flag, string_values[command.name][key], key);
            }
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    const auto command = std::find_if(commands.begin(), commands.end(),
                                      [&](const CommandSpec& c) { return c.name == name; });
    CLI::App* sub = app.get_subcommands().front();

    try {
        if (!config_path.empty()) {
            cfg = load_config_file(config_path, name, command->keys);
        }
        cfg["schema"] = "volcast_run_v1";
        cfg["command"] = name;
        // keys with free-form text values; everything else is numeric
        static const std::set<std::string> text_keys = {
            "bars", "out", "truth", "panel", "model", "ticker", "train_end", "test_end", "start_date",
            "models", "grid", "rf_list", "train_tickers", "test_tickers", "kind", "loss", "run", "refs", "plot"};
        for (const auto& [key, value] : string_values[name]) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            if (sub->count(flag) == 0) continue;
            if (text_keys.count(key)) {
                cfg[key] = value;
                continue;
            }
            if (key == "granularities" || key == "oracle_garch") {
                json parsed = json::array();
                for (const auto& item : split_csv(value)) parsed.push_back(json::parse(item, nullptr, false));
                bool all_numbers = true;
                for (const auto& item : parsed) all_numbers = all_numbers && item.is_number();
                if (!all_numbers) throw UsageError("expected a comma-separated number list for --" + key);
                cfg[key] = parsed;
                continue;
            }
            const json parsed = json::parse(value, nullptr, false);
            if (parsed.is_discarded() || !parsed.is_number()) {
                throw UsageError("expected a numeric value for --" + key + ", got '" + value + "'");
            }
            cfg[key] = parsed;
        }
        for (const auto& [key, value] : flag_values[name]) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            if (sub->count(flag) > 0) cfg[key] = value;
        }
        return command->run(cfg);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitModelFailure;
    }
}
