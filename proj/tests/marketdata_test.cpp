#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "volcast/marketdata.hpp"
#include "volcast/synth.hpp"

using namespace volcast;
using namespace volcast::marketdata;

namespace {

Bar bar(const std::string& ticker, const std::string& iso, double price) {
    return {ticker, parse_timestamp(iso), price};
}

BarSeries series_of(const std::string& ticker, std::vector<Bar> bars) {
    BarSeries s;
    s.ticker = ticker;
    s.bars = std::move(bars);
    return s;
}

}  // namespace

TEST_CASE("load_bars ingests a well-formed file") {
    const std::string csv =
        "ticker,timestamp,price\n"
        "AAA,2020-01-06T14:31:00Z,100.0\n"
        "AAA,2020-01-06T14:32:00Z,101.0\n"
        "AAA,2020-01-06T14:33:00Z,100.5\n";
    Session session;
    session.open_minute = 14 * 60 + 30;  // bars above sit just after a 14:30 open
    session.close_minute = 21 * 60;
    const auto loaded = load_bars_text(csv, session);
    REQUIRE(loaded.series.size() == 1);
    CHECK(loaded.series[0].ticker == "AAA");
    CHECK(loaded.series[0].bars.size() == 3);
    CHECK(loaded.dropped_out_of_session == 0);
    CHECK(loaded.series[0].bars[1].price == doctest::Approx(101.0));
}

TEST_CASE("load_bars drops out-of-session bars with a count") {
    const std::string csv =
        "ticker,timestamp,price\n"
        "AAA,2020-01-06T12:00:00Z,100.0\n"
        "AAA,2020-01-06T17:00:00Z,101.0\n";  // 17:00 is outside 09:30-16:00
    const auto loaded = load_bars_text(csv);  // default session
    REQUIRE(loaded.series.size() == 1);
    CHECK(loaded.series[0].bars.size() == 1);
    CHECK(loaded.dropped_out_of_session == 1);
}

TEST_CASE("load_bars rejects duplicate timestamps naming the row") {
    const std::string csv =
        "ticker,timestamp,price\n"
        "AAA,2020-01-06T12:00:00Z,100.0\n"
        "AAA,2020-01-06T12:00:00Z,101.0\n";
    CHECK_THROWS_WITH_AS(load_bars_text(csv), doctest::Contains("row 3"), std::runtime_error);
}

TEST_CASE("load_bars rejects malformed rows and bad prices") {
    CHECK_THROWS_AS(load_bars_text("ticker,timestamp,price\nAAA,2020-01-06T12:00:00Z\n"), std::runtime_error);
    CHECK_THROWS_WITH_AS(load_bars_text("ticker,timestamp,price\nAAA,2020-01-06T12:00:00Z,zero\n"),
                         doctest::Contains("price"), std::runtime_error);
    CHECK_THROWS_AS(load_bars_text("ticker,timestamp,price\nAAA,2020-01-06T12:00:00Z,-5\n"), std::runtime_error);
    CHECK_THROWS_AS(load_bars_text("nope\n"), std::runtime_error);
}

TEST_CASE("resample keeps the last price per interval") {
    // five 1-minute bars inside one 5-minute interval collapse to one bar
    auto s = series_of("AAA", {bar("AAA", "2020-01-06T09:31:00Z", 1.0), bar("AAA", "2020-01-06T09:32:00Z", 2.0),
                               bar("AAA", "2020-01-06T09:33:00Z", 3.0), bar("AAA", "2020-01-06T09:34:00Z", 4.0),
                               bar("AAA", "2020-01-06T09:35:00Z", 5.0)});
    const auto out = resample(s, 5);
    REQUIRE(out.bars.size() == 1);
    CHECK(out.bars[0].price == doctest::Approx(5.0));
    CHECK(second_of_day(out.bars[0].timestamp) == (9 * 60 + 35) * 60);
}

TEST_CASE("resample forward-fills interior empty intervals") {
    auto s = series_of("AAA", {bar("AAA", "2020-01-06T09:35:00Z", 4.0),
                               bar("AAA", "2020-01-06T09:45:00Z", 6.0)});  // nothing in 09:35-09:40
    const auto out = resample(s, 5);
    REQUIRE(out.bars.size() == 3);
    CHECK(out.bars[0].price == doctest::Approx(4.0));
    CHECK(out.bars[1].price == doctest::Approx(4.0));  // carried forward
    CHECK(out.bars[2].price == doctest::Approx(6.0));
}

TEST_CASE("resample backfills a day whose first interval is empty") {
    auto s = series_of("AAA", {bar("AAA", "2020-01-06T09:42:00Z", 7.0)});
    const auto out = resample(s, 5);  // bar lands in interval 3
    REQUIRE(out.bars.size() == 3);
    CHECK(out.bars[0].price == doctest::Approx(7.0));
    CHECK(out.bars[1].price == doctest::Approx(7.0));
}

TEST_CASE("resample rejects unsupported granularities") {
    auto s = series_of("AAA", {bar("AAA", "2020-01-06T09:35:00Z", 4.0)});
    CHECK_THROWS_WITH_AS(resample(s, 7), doctest::Contains("unsupported granularity"), std::invalid_argument);
}

TEST_CASE("resample is idempotent") {
    synth::SimSpec spec;
    spec.n_tickers = 1;
    spec.n_days = 3;
    spec.bars_per_day = 390;
    spec.seed = 11;
    const auto sim = synth::simulate(spec);
    for (int g : {5, 15, 30}) {
        const auto once = resample(sim.series[0], g);
        const auto twice = resample(once, g);
        REQUIRE(once.bars.size() == twice.bars.size());
        for (std::size_t i = 0; i < once.bars.size(); ++i) {
            CHECK(once.bars[i].timestamp == twice.bars[i].timestamp);
            CHECK(once.bars[i].price == twice.bars[i].price);  // exact
        }
    }
}

TEST_CASE("intraday returns follow the log formula") {
    const Date d = Date::parse("2020-01-06");
    SUBCASE("constant prices give zero returns") {
        const auto r = intraday_returns("AAA", d, 5,
                                        {bar("AAA", "2020-01-06T09:35:00Z", 100.0),
                                         bar("AAA", "2020-01-06T09:40:00Z", 100.0),
                                         bar("AAA", "2020-01-06T09:45:00Z", 100.0)});
        REQUIRE(r.returns.size() == 2);
        CHECK(r.returns[0] == doctest::Approx(0.0));
        CHECK(r.returns[1] == doctest::Approx(0.0));
    }
    SUBCASE("up and down moves") {
        const auto up = intraday_returns("AAA", d, 5,
                                         {bar("AAA", "2020-01-06T09:35:00Z", 100.0),
                                          bar("AAA", "2020-01-06T09:40:00Z", 101.0)});
        CHECK(up.returns[0] == doctest::Approx(0.995033).epsilon(1e-6));
        CHECK(up.returns[0] == doctest::Approx(100.0 * std::log(101.0 / 100.0)));
        const auto down = intraday_returns("AAA", d, 5,
                                           {bar("AAA", "2020-01-06T09:35:00Z", 100.0),
                                            bar("AAA", "2020-01-06T09:40:00Z", 99.0)});
        CHECK(down.returns[0] == doctest::Approx(-1.005034).epsilon(1e-6));
    }
    SUBCASE("fewer than two bars is an error") {
        CHECK_THROWS_AS(intraday_returns("AAA", d, 5, {bar("AAA", "2020-01-06T09:35:00Z", 100.0)}),
                        std::invalid_argument);
    }
}

TEST_CASE("realised variance is the sum of squares") {
    IntradayReturns r;
    r.granularity_minutes = 5;
    SUBCASE("zeros") {
        r.returns = {0.0, 0.0, 0.0};
        CHECK(realised_variance(r) == doctest::Approx(0.0));
    }
    SUBCASE("brute-force oracle") {
        r.returns = {1.0, -2.0, 0.5};
        double expect = 0.0;
        for (double x : r.returns) expect += x * x;
        CHECK(expect == doctest::Approx(5.25));
        CHECK(realised_variance(r) == doctest::Approx(5.25));
    }
    SUBCASE("single element") {
        r.returns = {3.0};
        CHECK(realised_variance(r) == doctest::Approx(9.0));
    }
    SUBCASE("empty errors") {
        r.returns.clear();
        CHECK_THROWS_AS(realised_variance(r), std::invalid_argument);
    }
    SUBCASE("concatenation additivity and permutation invariance") {
        std::mt19937_64 rng(7);
        std::normal_distribution<double> normal(0.0, 1.0);
        IntradayReturns a, b, joined, shuffled;
        for (int i = 0; i < 40; ++i) a.returns.push_back(normal(rng));
        for (int i = 0; i < 25; ++i) b.returns.push_back(normal(rng));
        joined.returns = a.returns;
        joined.returns.insert(joined.returns.end(), b.returns.begin(), b.returns.end());
        CHECK(realised_variance(joined) ==
              doctest::Approx(realised_variance(a) + realised_variance(b)).epsilon(1e-12));
        shuffled.returns = joined.returns;
        std::shuffle(shuffled.returns.begin(), shuffled.returns.end(), rng);
        CHECK(realised_variance(shuffled) == doctest::Approx(realised_variance(joined)).epsilon(1e-12));
    }
}

TEST_CASE("daily return handles the first-day boundary") {
    CHECK(daily_return(100.0, 100.0).value() == doctest::Approx(0.0));
    CHECK(daily_return(102.0, 100.0).value() == doctest::Approx(1.980263).epsilon(1e-6));
    CHECK_FALSE(daily_return(100.0, std::nullopt).has_value());
}

TEST_CASE("five-minute and one-minute log returns telescope to the same sum over a shared span") {
    // log returns telescope: the coarse sum equals the fine sum between the
    // same two anchor prices. The grids share every anchor from the first
    // five-minute bar onward (the fine grid starts four bars earlier).
    synth::SimSpec spec;
    spec.n_tickers = 1;
    spec.n_days = 2;
    spec.bars_per_day = 390;
    spec.seed = 3;
    const auto sim = synth::simulate(spec);
    const auto by_day_1 = resample_days(sim.series[0], 1);
    const auto by_day_5 = resample_days(sim.series[0], 5);
    REQUIRE(by_day_1.size() == by_day_5.size());
    for (std::size_t d = 0; d < by_day_1.size(); ++d) {
        CHECK(by_day_1[d].empty_intervals == 0);
        CHECK(by_day_5[d].empty_intervals == 0);
        const auto r1 = intraday_returns("t", by_day_1[d].date, 1, by_day_1[d].bars);
        const auto r5 = intraday_returns("t", by_day_5[d].date, 5, by_day_5[d].bars);
        REQUIRE(by_day_1[d].bars[4].price == by_day_5[d].bars[0].price);  // shared anchor
        double s1 = 0.0, s5 = 0.0;
        for (std::size_t i = 4; i < r1.returns.size(); ++i) s1 += r1.returns[i];
        for (double x : r5.returns) s5 += x;
        CHECK(s1 == doctest::Approx(s5).epsilon(1e-9));
    }
}

TEST_CASE("build_panel assembles a dense grid") {
    synth::SimSpec spec;
    spec.n_tickers = 2;
    spec.n_days = 3;
    spec.bars_per_day = 78;
    spec.seed = 5;
    auto sim = synth::simulate(spec);

    SUBCASE("all cells present for complete data") {
        const auto panel = build_panel(sim.series, {{5}, 0.10});
        CHECK(panel.tickers.size() == 2);
        CHECK(panel.dates.size() == 3);
        for (std::size_t ti = 0; ti < 2; ++ti) {
            for (std::size_t di = 0; di < 3; ++di) REQUIRE(panel.cell(ti, di).has_value());
        }
        // first day has no close-to-close return
        CHECK_FALSE(panel.cell(0, 0)->daily_return.has_value());
        CHECK(panel.cell(0, 1)->daily_return.has_value());
    }

    SUBCASE("a fully absent day is marked missing") {
        // delete the second day of ticker 0
        auto& bars = sim.series[0].bars;
        const Date gone = spec.start_date + 1;
        bars.erase(std::remove_if(bars.begin(), bars.end(),
                                  [&](const Bar& b) { return date_of(b.timestamp) == gone; }),
                   bars.end());
        const auto panel = build_panel(sim.series, {{5}, 0.10});
        CHECK_FALSE(panel.cell(*panel.ticker_index("SYN000"), 1).has_value());
        CHECK(panel.cell(*panel.ticker_index("SYN001"), 1).has_value());
        // the day after the gap has no usable previous close
        CHECK_FALSE(panel.cell(*panel.ticker_index("SYN000"), 2)->daily_return.has_value());
    }

    SUBCASE("rv equals the realised-variance oracle on every cell") {
        const auto panel = build_panel(sim.series, {{5}, 0.10});
        for (std::size_t ti = 0; ti < 2; ++ti) {
            for (std::size_t di = 0; di < 3; ++di) {
                const auto& cell = panel.cell(ti, di);
                CHECK(cell->rv == doctest::Approx(realised_variance(cell->intraday.at(5))).epsilon(1e-10));
            }
        }
    }

    SUBCASE("missing 5-minute granularity is rejected") {
        CHECK_THROWS_WITH_AS(build_panel(sim.series, {{15}, 0.10}), doctest::Contains("5-minute"),
                             std::invalid_argument);
        CHECK_THROWS_AS(build_panel(sim.series, {{5, 7}, 0.10}), std::invalid_argument);
    }
}

TEST_CASE("a day with too many empty intervals is marked missing") {
    synth::SimSpec spec;
    spec.n_tickers = 1;
    spec.n_days = 2;
    spec.bars_per_day = 78;
    spec.seed = 9;
    auto sim = synth::simulate(spec);
    // keep only the first 60 bars of day two: 18 of 78 intervals empty (> 10%)
    auto& bars = sim.series[0].bars;
    const Date second = spec.start_date + 1;
    std::size_t kept = 0;
    bars.erase(std::remove_if(bars.begin(), bars.end(),
                              [&](const Bar& b) {
                                  if (date_of(b.timestamp) != second) return false;
                                  return ++kept > 60;
                              }),
               bars.end());
    const auto panel = build_panel(sim.series, {{5}, 0.10});
    CHECK(panel.cell(0, 0).has_value());
    CHECK_FALSE(panel.cell(0, 1).has_value());
}

TEST_CASE("panel json round-trips exactly") {
    synth::SimSpec spec;
    spec.n_tickers = 2;
    spec.n_days = 4;
    spec.bars_per_day = 78;
    spec.seed = 21;
    const auto sim = synth::simulate(spec);
    auto panel = build_panel(sim.series, {{5, 15}, 0.10});
    panel.source_digest = "deadbeef";

    const auto path = std::filesystem::temp_directory_path() / "volcast_panel_roundtrip.json";
    save_panel(panel, path.string());
    const auto loaded = load_panel(path.string());
    std::filesystem::remove(path);

    REQUIRE(loaded.tickers == panel.tickers);
    REQUIRE(loaded.dates.size() == panel.dates.size());
    CHECK(loaded.granularities == panel.granularities);
    CHECK(loaded.source_digest == panel.source_digest);
    for (std::size_t i = 0; i < panel.cells.size(); ++i) {
        REQUIRE(loaded.cells[i].has_value() == panel.cells[i].has_value());
        if (!panel.cells[i]) continue;
        CHECK(loaded.cells[i]->rv == panel.cells[i]->rv);  // bit-exact via shortest round-trip decimals
        CHECK(loaded.cells[i]->daily_return == panel.cells[i]->daily_return);
        CHECK(loaded.cells[i]->intraday.at(5).returns == panel.cells[i]->intraday.at(5).returns);
    }
}
