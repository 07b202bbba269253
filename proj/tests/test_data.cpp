#include <doctest.h>

#include "mvdfl/covariance.hpp"
#include "mvdfl/data.hpp"
#include "mvdfl/error.hpp"
#include "test_util.hpp"

using namespace mvdfl;

namespace {

ReturnsPanel ramp_panel(Index t, Index n) {
    ReturnsPanel p;
    p.values.resize(t, n);
    std::mt19937_64 rng(3);
    p.values = testutil::random_normal(rng, t, n, 0.01);
    std::chrono::sys_days day{Date{std::chrono::year{2020}, std::chrono::January, std::chrono::day{1}}};
    for (Index r = 0; r < t; ++r) p.dates.emplace_back(day + std::chrono::days{r});
    for (Index c = 0; c < n; ++c) p.tickers.push_back("T" + std::to_string(c));
    return p;
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::State;
}

}  // namespace

TEST_SUITE("data") {
    TEST_CASE("iso dates round trip") {
        const Date d = parse_iso_date("2021-03-09");
        CHECK(format_iso_date(d) == "2021-03-09");
        CHECK(kind_of([] { parse_iso_date("2021-02-30"); }) == ErrorKind::Ingestion);
        CHECK(kind_of([] { parse_iso_date("21-3-9"); }) == ErrorKind::Ingestion);
    }

    TEST_CASE("three-row csv with two tickers") {
        const auto p = parse_returns_csv("date,A,B\n2020-01-02,0.01,0.02\n2020-01-03,-0.01,0.00\n2020-01-06,0.02,-0.01\n");
        CHECK(p.n_rows() == 3);
        CHECK(p.n_assets() == 2);
        CHECK(p.tickers == std::vector<std::string>{"A", "B"});
        CHECK(p.values(2, 1) == doctest::Approx(-0.01));
    }

    TEST_CASE("a ticker with a missing value is excluded") {
        const auto p = parse_returns_csv(
            "date,A,B,C\n2020-01-02,0.01,NA,0.3\n2020-01-03,-0.01,0.02,0.1\n2020-01-06,0.02,-0.01,0.2\n");
        CHECK(p.tickers == std::vector<std::string>{"A", "C"});
        const auto q = parse_returns_csv(
            "date,A,B,C\n2020-01-02,0.01,0.5,0.3\n2020-01-03,-0.01,,0.1\n2020-01-06,0.02,-0.01,0.2\n");
        CHECK(q.tickers == std::vector<std::string>{"A", "C"});
    }

    TEST_CASE("unsorted dates are re-sorted") {
        const auto p = parse_returns_csv("date,A,B\n2020-01-06,3,30\n2020-01-02,1,10\n2020-01-03,2,20\n");
        CHECK(format_iso_date(p.dates[0]) == "2020-01-02");
        CHECK(format_iso_date(p.dates[2]) == "2020-01-06");
        CHECK(p.values(0, 0) == 1.0);
        CHECK(p.values(2, 1) == 30.0);
    }

    TEST_CASE("ingestion errors carry location") {
        try {
            parse_returns_csv("date,A,B\n2020-01-02,0.1,0.2\n2020-01-03,abc,0.1\n", "f.csv");
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Ingestion);
            const std::string msg = e.what();
            CHECK(msg.find("row 3") != std::string::npos);
            CHECK(msg.find("column 2") != std::string::npos);
        }
        CHECK(kind_of([] { parse_returns_csv("date,A,B\n2020-01-02,1,2\n2020-01-02,2,1\n"); }) ==
              ErrorKind::Ingestion);
        CHECK(kind_of([] { parse_returns_csv("date,A,B\n2020-13-02,1,2\n"); }) == ErrorKind::Ingestion);
    }

    TEST_CASE("fewer than two usable assets") {
        CHECK(kind_of([] { parse_returns_csv("date,A,B\n2020-01-02,1,NA\n2020-01-03,2,1\n"); }) ==
              ErrorKind::UniverseTooSmall);
    }

    TEST_CASE("constant columns are dropped") {
        const auto p = parse_returns_csv("date,A,B,C\n2020-01-02,1,5,2\n2020-01-03,2,5,1\n2020-01-06,3,5,0\n");
        CHECK(p.tickers == std::vector<std::string>{"A", "C"});
    }

    TEST_CASE("csv round trip is exact") {
        const auto p = ramp_panel(20, 3);
        const auto dir = testutil::scratch_dir("data_rt");
        write_returns_csv(p, dir / "r.csv");
        const auto q = load_returns(dir / "r.csv");
        CHECK(q.tickers == p.tickers);
        CHECK(q.dates == p.dates);
        CHECK(q.values == p.values);
    }

    TEST_CASE("filter_universe drops the later of a perfectly correlated pair") {
        ReturnsPanel p = ramp_panel(50, 3);
        p.values.col(2) = 2.0 * p.values.col(0);
        const auto q = filter_universe(p, 0.95);
        CHECK(q.tickers == std::vector<std::string>{"T0", "T1"});
    }

    TEST_CASE("filter_universe keeps independent columns (textbook correlation oracle)") {
        ReturnsPanel p = ramp_panel(1000, 6);
        const Eigen::MatrixXd s = testutil::loop_cov(p.values);
        for (Index i = 0; i < 6; ++i)
            for (Index j = i + 1; j < 6; ++j) CHECK(s(i, j) / std::sqrt(s(i, i) * s(j, j)) < 0.95);
        CHECK(filter_universe(p, 0.95).n_assets() == 6);
        CHECK(filter_universe(p, 1.0).n_assets() == 6);
    }

    TEST_CASE("filter_universe rejects bad thresholds and tiny results") {
        ReturnsPanel p = ramp_panel(30, 2);
        CHECK(kind_of([&] { filter_universe(p, 0.0); }) == ErrorKind::InvalidConfig);
        CHECK(kind_of([&] { filter_universe(p, 1.5); }) == ErrorKind::InvalidConfig);
        p.values.col(1) = 3.0 * p.values.col(0);
        CHECK(kind_of([&] { filter_universe(p, 0.95); }) == ErrorKind::UniverseTooSmall);
    }

    TEST_CASE("make_windows counts and anchors") {
        const auto p = ramp_panel(10, 2);
        const auto w1 = make_windows(p, 3, 2, 1);
        REQUIRE(w1.size() == 6);
        for (std::size_t k = 0; k < w1.size(); ++k) CHECK(w1[k].anchor_row == static_cast<Index>(k) + 2);
        CHECK(make_windows(p, 3, 2, 2).size() == 3);
        CHECK(kind_of([&] { make_windows(p, 8, 3, 1); }) == ErrorKind::InsufficientHistory);
    }

    TEST_CASE("window contents: disjoint ranges and textbook covariance target") {
        const auto p = ramp_panel(40, 3);
        for (const auto& w : make_windows(p, 5, 4, 3)) {
            CHECK(w.x_in == p.values.middleRows(w.anchor_row - 4, 5));
            const Eigen::MatrixXd oracle = testutil::loop_cov(p.values.middleRows(w.anchor_row + 1, 4));
            CHECK((w.sigma_true - oracle).cwiseAbs().maxCoeff() < 1e-15);
            CHECK(w.anchor_date == p.dates[static_cast<std::size_t>(w.anchor_row)]);
        }
    }

    TEST_CASE("stride subsampling property") {
        const auto p = ramp_panel(60, 2);
        const auto all = make_windows(p, 7, 5, 1);
        const auto sub = make_windows(p, 7, 5, 4);
        REQUIRE(sub.size() == (all.size() + 3) / 4);
        for (std::size_t k = 0; k < sub.size(); ++k) {
            CHECK(sub[k].anchor_row == all[4 * k].anchor_row);
            CHECK(sub[k].sigma_true == all[4 * k].sigma_true);
        }
    }

    TEST_CASE("split fractions") {
        const auto p = ramp_panel(100, 2);
        const auto s = split_panel(p, SplitSpec{});
        CHECK(s.train.n_rows() == 60);
        CHECK(s.valid.n_rows() == 20);
        CHECK(s.test.n_rows() == 20);
        CHECK(s.valid.dates.front() > s.train.dates.back());
        CHECK(s.test.dates.front() > s.valid.dates.back());
        CHECK(kind_of([] { SplitSpec(0.5, 0.2, 0.2); }) == ErrorKind::InvalidConfig);
        CHECK(kind_of([] { SplitSpec(1.2, -0.2, 0.0); }) == ErrorKind::InvalidConfig);
    }

    TEST_CASE("synthetic identity regime converges") {
        SyntheticConfig sc;
        sc.regimes = {{Matrix::Identity(3, 3), 10000}};
        const auto p = generate_synthetic(3, 10000, 11, sc);
        const Matrix s = testutil::loop_cov(p.values);
        CHECK((s - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.05);
        for (const auto& d : p.dates) CHECK(std::chrono::weekday{std::chrono::sys_days{d}}.iso_encoding() <= 5);
    }

    TEST_CASE("synthetic regimes are visible segment-wise and deterministic") {
        Matrix a = Matrix::Identity(4, 4), b = Matrix::Identity(4, 4);
        a.diagonal() << 0.01, 0.01, 1.0, 1.0;
        b.diagonal() << 1.0, 1.0, 0.01, 0.01;
        SyntheticConfig sc;
        sc.regimes = {{a, 500}, {b, 500}};
        const auto p = generate_synthetic(4, 2000, 5, sc);
        const auto sched = regime_schedule(2000, sc);
        CHECK(sched[0] == 0);
        CHECK(sched[500] == 1);
        CHECK(sched[1000] == 0);
        const Matrix s0 = testutil::loop_cov(p.values.middleRows(0, 500));
        const Matrix s1 = testutil::loop_cov(p.values.middleRows(500, 500));
        CHECK(s0(0, 0) < 0.05);
        CHECK(s0(2, 2) > 0.8);
        CHECK(s1(0, 0) > 0.8);
        CHECK(s1(3, 3) < 0.05);
        const auto q = generate_synthetic(4, 2000, 5, sc);
        CHECK(q.values == p.values);
    }

    TEST_CASE("synthetic rejects non-SPD regimes") {
        Matrix bad = Matrix::Identity(2, 2);
        bad(1, 1) = -1.0;
        SyntheticConfig sc;
        sc.regimes = {{bad, 10}};
        CHECK(kind_of([&] { generate_synthetic(2, 10, 1, sc); }) == ErrorKind::InvalidConfig);
        sc.regimes = {{Matrix::Identity(3, 3), 10}};
        CHECK(kind_of([&] { generate_synthetic(2, 10, 1, sc); }) == ErrorKind::InvalidConfig);
    }
}
