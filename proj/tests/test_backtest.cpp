#include <doctest.h>

#include "mvdfl/backtest.hpp"
#include "mvdfl/error.hpp"
#include "test_util.hpp"

using namespace mvdfl;

namespace {

ReturnsPanel random_panel(Index t, Index n, std::uint64_t seed) {
    ReturnsPanel p;
    std::mt19937_64 rng(seed);
    p.values = testutil::random_normal(rng, t, n, 0.01);
    std::chrono::sys_days day{Date{std::chrono::year{2019}, std::chrono::March, std::chrono::day{1}}};
    for (Index r = 0; r < t; ++r) p.dates.emplace_back(day + std::chrono::days{r});
    for (Index c = 0; c < n; ++c) p.tickers.push_back("A" + std::to_string(c));
    return p;
}

Strategy fixed_weights(const Vector& w) {
    return Strategy(StrategyKind::Pfl, [w](const Matrix&) { return StrategyDecision{w, std::nullopt}; });
}

// Textbook GMVP via a linear solve on the sample covariance.
Vector reference_gmvp(const Matrix& window) {
    const Matrix s = testutil::loop_cov(window);
    const Vector x = s.ldlt().solve(Vector::Ones(s.rows()));
    return x / x.sum();
}

}  // namespace

TEST_SUITE("backtest") {
    TEST_CASE("equal weight and rebalance schedule") {
        const auto p = random_panel(100, 4, 1);
        const auto rep = run_backtest(make_equal_weight(), p, 10, 7);
        REQUIRE(rep.weights.rows() == 12);
        CHECK((rep.weights.array() - 0.25).abs().maxCoeff() == 0.0);
        CHECK(rep.daily_returns.size() == 84);
        CHECK(rep.rebalance_dates.front() == p.dates[9]);
        CHECK(rep.rebalance_dates.back() == p.dates[86]);
        CHECK(rep.return_dates.front() == p.dates[10]);
        CHECK(rep.return_dates.back() == p.dates[93]);
        CHECK(rep.daily_returns(0) == doctest::Approx(p.values.row(10).mean()).epsilon(1e-14));
        CHECK(rep.covariances.empty());
        CHECK_THROWS_AS(run_backtest(make_equal_weight(), p, 95, 7), Error);
    }

    TEST_CASE("historical strategy matches an independent GMVP recompute") {
        const auto p = random_panel(200, 5, 2);
        const Index din = 30, dout = 10;
        const auto rep = run_backtest(make_estimator_strategy(StrategyKind::Historical), p, din, dout);
        for (Index k = 0; k < rep.weights.rows(); ++k) {
            const Index anchor = din - 1 + k * dout;
            const Vector w = reference_gmvp(p.values.middleRows(anchor - din + 1, din));
            CHECK((rep.weights.row(k).transpose() - w).cwiseAbs().maxCoeff() < 1e-8);
            for (Index d = 1; d <= dout; ++d) {
                CHECK(rep.daily_returns(k * dout + d - 1) ==
                      doctest::Approx(p.values.row(anchor + d).dot(rep.weights.row(k))).epsilon(1e-14));
            }
        }
        CHECK(rep.covariances.size() == static_cast<std::size_t>(rep.weights.rows()));
    }

    TEST_CASE("no look-ahead: future rows never reach a decision") {
        auto p = random_panel(150, 4, 3);
        const Index din = 20, dout = 10;
        const auto clean = run_backtest(make_estimator_strategy(StrategyKind::LwDiagonal), p, din, dout);
        // Poison every row after the hold block of rebalance k; decisions up to k must not change.
        const Index k = 5;
        const Index last_used = din - 1 + k * dout + dout;
        auto poisoned = p;
        std::mt19937_64 noise(9);
        poisoned.values.bottomRows(p.n_rows() - last_used - 1) =
            testutil::random_normal(noise, p.n_rows() - last_used - 1, 4, 1e3);
        const auto dirty = run_backtest(make_estimator_strategy(StrategyKind::LwDiagonal), poisoned, din, dout);
        CHECK(dirty.weights.topRows(k + 1) == clean.weights.topRows(k + 1));
        CHECK(dirty.daily_returns.head((k + 1) * dout) == clean.daily_returns.head((k + 1) * dout));

        // Every window ends exactly at its rebalance row.
        std::vector<Index> seen;
        const Strategy probe(StrategyKind::EW, [&](const Matrix& window) {
            for (Index r = 0; r < p.n_rows(); ++r)
                if (p.values.row(r) == window.row(window.rows() - 1)) seen.push_back(r);
            return StrategyDecision{Vector::Constant(4, 0.25), std::nullopt};
        });
        const auto rep = run_backtest(probe, p, din, dout);
        REQUIRE(seen.size() == static_cast<std::size_t>(rep.weights.rows()));
        for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == din - 1 + static_cast<Index>(i) * dout);
    }

    TEST_CASE("annualized volatility closed form") {
        Vector r(6);
        r << 0.01, -0.01, 0.01, -0.01, 0.01, -0.01;
        CHECK(annualized_volatility(r) == doctest::Approx(0.01 * std::sqrt(6.0 / 5.0) * std::sqrt(252.0)));
        CHECK(annualized_volatility(Vector::Constant(5, 0.3)) == 0.0);
        CHECK_THROWS_AS(annualized_volatility(Vector::Ones(1)), Error);
    }

    TEST_CASE("suite statistics over seeds and failure reporting") {
        const auto p = random_panel(120, 3, 4);
        Vector w1(3), w2(3), w3(3);
        w1 << 1, 0, 0;
        w2 << 0, 1, 0;
        w3 << 0.5, 0.5, 0;
        StrategySpec learned{"PFL", StrategyKind::Pfl, {}, {0, 1, 2}};
        for (const Vector& w : {w1, w2, w3}) learned.instances.push_back([w] { return fixed_weights(w); });
        StrategySpec broken{"DFL", StrategyKind::Dfl, {}, {0, 1}};
        broken.instances.push_back([w1] { return fixed_weights(w1); });
        broken.instances.push_back([]() -> Strategy { throw Error(ErrorKind::Io, "missing checkpoint, seed 1"); });
        StrategySpec ew{"EW", StrategyKind::EW, {[] { return make_equal_weight(); }}, {}};

        const auto table = run_suite({ew, learned, broken}, p, 10, 10);
        CHECK_FALSE(table.ok());
        const auto& row = table.rows[1];
        std::vector<double> expected;
        for (const Vector& w : {w1, w2, w3}) expected.push_back(run_backtest(fixed_weights(w), p, 10, 10).annualized_volatility);
        const double mean = (expected[0] + expected[1] + expected[2]) / 3.0;
        double ss = 0.0;
        for (double v : expected) ss += (v - mean) * (v - mean);
        CHECK(row.mean == doctest::Approx(mean).epsilon(1e-14));
        CHECK(row.stddev == doctest::Approx(std::sqrt(ss / 2.0)).epsilon(1e-12));
        CHECK(table.rows[0].error.empty());
        CHECK_FALSE(table.rows[0].has_std);
        CHECK(std::isnan(table.rows[2].per_seed[1]));
        CHECK(std::isnan(table.rows[2].mean));

        const auto dir = testutil::scratch_dir("suite");
        write_vol_table_csv(table, dir / "vol.csv");
        write_weights_history_csv(table, p.tickers, dir / "w.csv");
        const std::string vol = testutil::slurp(dir / "vol.csv");
        CHECK(vol.find("DFL,2,FAILED,,FAILED,") != std::string::npos);
        CHECK(vol.find("EW,1,") != std::string::npos);
        const std::string hist = testutil::slurp(dir / "w.csv");
        CHECK(hist.find("strategy,seed,date,A0,A1,A2") != std::string::npos);
        CHECK(hist.find("PFL,2,") != std::string::npos);
    }

    TEST_CASE("delta ablation grid records missing cells") {
        const auto grid = delta_ablation({5, 21}, {5, 21, 63}, [](Index din, Index dout) {
            if (dout == 63) throw Error(ErrorKind::InsufficientHistory, "too short");
            return static_cast<double>(din * 100 + dout);
        });
        CHECK(grid.volatility(0, 1) == 2105.0);
        CHECK(grid.volatility(1, 0) == 521.0);
        CHECK(std::isnan(grid.volatility(2, 0)));
        const auto dir = testutil::scratch_dir("ablation");
        write_ablation_csv(grid, dir / "a.csv");
        CHECK(testutil::slurp(dir / "a.csv").find("63,missing,missing") != std::string::npos);
    }

    TEST_CASE("strategy names round trip") {
        for (auto k : {StrategyKind::EW, StrategyKind::Historical, StrategyKind::LwDiagonal,
                       StrategyKind::LwConstantCorrelation, StrategyKind::Oas, StrategyKind::Pfl, StrategyKind::Dfl})
            CHECK(strategy_kind_from_string(to_string(k)) == k);
        CHECK_THROWS_AS(strategy_kind_from_string("MVO"), Error);
        CHECK_THROWS_AS(make_estimator_strategy(StrategyKind::Dfl), Error);
    }
}
