#include "mvdfl/backtest.hpp"

#include <cmath>
#include <limits>

#include "mvdfl/covariance.hpp"
#include "mvdfl/csv.hpp"
#include "mvdfl/error.hpp"

namespace mvdfl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string csv_safe(std::string s) {
    for (auto& ch : s) {
        if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    }
    return s;
}

}  // namespace

std::string_view to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::EW: return "EW";
        case StrategyKind::Historical: return "Historical";
        case StrategyKind::LwDiagonal: return "LW-D";
        case StrategyKind::LwConstantCorrelation: return "LW-CC";
        case StrategyKind::Oas: return "OAS";
        case StrategyKind::Pfl: return "PFL";
        case StrategyKind::Dfl: return "DFL";
    }
    return "?";
}

StrategyKind strategy_kind_from_string(std::string_view name) {
    for (auto k : {StrategyKind::EW, StrategyKind::Historical, StrategyKind::LwDiagonal,
                   StrategyKind::LwConstantCorrelation, StrategyKind::Oas, StrategyKind::Pfl, StrategyKind::Dfl}) {
        if (to_string(k) == name) return k;
    }
    throw Error(ErrorKind::InvalidConfig, "unknown strategy '" + std::string(name) + "'");
}

bool is_learned(StrategyKind kind) { return kind == StrategyKind::Pfl || kind == StrategyKind::Dfl; }

Strategy make_equal_weight() {
    return Strategy(StrategyKind::EW, [](const Matrix& window) {
        const Index n = window.cols();
        return StrategyDecision{Vector::Constant(n, 1.0 / static_cast<double>(n)), std::nullopt};
    });
}

Strategy make_estimator_strategy(StrategyKind kind, const GmvpOptions& opts) {
    std::function<Matrix(const Matrix&)> estimate;
    switch (kind) {
        case StrategyKind::Historical: estimate = [](const Matrix& x) { return sample_cov(x).values; }; break;
        case StrategyKind::LwDiagonal: estimate = [](const Matrix& x) { return lw_diagonal(x).estimate.values; }; break;
        case StrategyKind::LwConstantCorrelation:
            estimate = [](const Matrix& x) { return lw_constant_correlation(x).estimate.values; };
            break;
        case StrategyKind::Oas: estimate = [](const Matrix& x) { return oas(x).estimate.values; }; break;
        default:
            throw Error(ErrorKind::InvalidConfig, std::string(to_string(kind)) + " is not an estimator strategy");
    }
    return Strategy(kind, [estimate, opts](const Matrix& window) {
        Matrix cov = estimate(window);
        Vector w = solve_gmvp(cov, opts).values;
        return StrategyDecision{std::move(w), std::move(cov)};
    });
}

Strategy make_learned_strategy(StrategyKind kind, ForecasterParams params, const GmvpOptions& opts) {
    if (!is_learned(kind)) {
        throw Error(ErrorKind::InvalidConfig, std::string(to_string(kind)) + " is not a learned strategy");
    }
    return Strategy(kind, [params = std::move(params), opts](const Matrix& window) {
        ForwardResult fwd = forward(params, window);
        Vector w = solve_gmvp(fwd.sigma, opts).values;
        return StrategyDecision{std::move(w), std::move(fwd.sigma)};
    });
}

double annualized_volatility(const Vector& daily_returns) {
    const Index m = daily_returns.size();
    if (m < 2) throw Error(ErrorKind::InsufficientObservations, "need at least 2 daily returns");
    const double mean = daily_returns.mean();
    const double var = (daily_returns.array() - mean).square().sum() / static_cast<double>(m - 1);
    return std::sqrt(var) * std::sqrt(kTradingDaysPerYear);
}

BacktestReport run_backtest(const Strategy& strategy, const ReturnsPanel& panel, Index delta_in, Index delta_out) {
    if (delta_in < 1 || delta_out < 1) throw Error(ErrorKind::InvalidConfig, "window lengths must be positive");
    const Index t_rows = panel.n_rows();
    const Index n = panel.n_assets();
    if (delta_in + delta_out > t_rows) {
        throw Error(ErrorKind::InsufficientHistory, "test panel too short for one rebalance");
    }
    const Index n_rebalances = (t_rows - delta_in - delta_out) / delta_out + 1;

    BacktestReport rep;
    rep.weights.resize(n_rebalances, n);
    rep.daily_returns.resize(n_rebalances * delta_out);
    Index k = 0;
    for (Index anchor = delta_in - 1; anchor + delta_out <= t_rows - 1; anchor += delta_out, ++k) {
        const Date date = panel.dates[static_cast<std::size_t>(anchor)];
        StrategyDecision decision;
        try {
            decision = strategy.decide(panel.values.middleRows(anchor - delta_in + 1, delta_in));
        } catch (const Error& e) {
            throw Error(e.kind(), std::string(to_string(strategy.kind())) + " failed at rebalance " +
                                      format_iso_date(date) + ": " + e.what());
        }
        if (decision.weights.size() != n || !decision.weights.allFinite()) {
            throw Error(ErrorKind::NonFinite, std::string(to_string(strategy.kind())) +
                                                  " produced invalid weights at " + format_iso_date(date));
        }
        rep.rebalance_dates.push_back(date);
        rep.weights.row(k) = decision.weights.transpose();
        if (decision.covariance) rep.covariances.push_back(std::move(*decision.covariance));
        for (Index d = 1; d <= delta_out; ++d) {
            rep.daily_returns((k * delta_out) + d - 1) = panel.values.row(anchor + d).dot(decision.weights);
            rep.return_dates.push_back(panel.dates[static_cast<std::size_t>(anchor + d)]);
        }
    }
    rep.annualized_volatility = annualized_volatility(rep.daily_returns);
    return rep;
}

bool SuiteTable::ok() const {
    for (const auto& r : rows) {
        if (!r.error.empty()) return false;
    }
    return true;
}

SuiteTable run_suite(const std::vector<StrategySpec>& strategies, const ReturnsPanel& panel, Index delta_in,
                     Index delta_out) {
    SuiteTable table;
    for (const auto& spec : strategies) {
        SuiteRow row;
        row.name = spec.name;
        row.kind = spec.kind;
        row.seeds = spec.seeds;
        row.has_std = is_learned(spec.kind);
        double sum = 0.0;
        int good = 0;
        for (std::size_t s = 0; s < spec.instances.size(); ++s) {
            try {
                const Strategy strategy = spec.instances[s]();
                BacktestReport rep = run_backtest(strategy, panel, delta_in, delta_out);
                row.per_seed.push_back(rep.annualized_volatility);
                sum += rep.annualized_volatility;
                ++good;
                row.reports.push_back(std::move(rep));
            } catch (const std::exception& e) {
                row.per_seed.push_back(kNaN);
                row.reports.emplace_back();
                if (!row.error.empty()) row.error += " | ";
                row.error += e.what();
            }
        }
        if (spec.instances.empty()) row.error = "no strategy instances";
        if (good > 0 && row.error.empty()) {
            row.mean = sum / good;
            double ss = 0.0;
            for (double v : row.per_seed) ss += (v - row.mean) * (v - row.mean);
            row.stddev = good > 1 ? std::sqrt(ss / (good - 1)) : 0.0;
        } else {
            row.mean = kNaN;
            row.stddev = kNaN;
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

AblationGrid delta_ablation(const std::vector<Index>& delta_in, const std::vector<Index>& delta_out,
                            const std::function<double(Index, Index)>& evaluate) {
    AblationGrid grid{delta_in, delta_out,
                      Matrix::Constant(static_cast<Index>(delta_out.size()), static_cast<Index>(delta_in.size()), kNaN)};
    for (std::size_t o = 0; o < delta_out.size(); ++o) {
        for (std::size_t i = 0; i < delta_in.size(); ++i) {
            try {
                grid.volatility(static_cast<Index>(o), static_cast<Index>(i)) = evaluate(delta_in[i], delta_out[o]);
            } catch (const std::exception&) {
                // infeasible cell stays missing
            }
        }
    }
    return grid;
}

void write_vol_table_csv(const SuiteTable& table, const std::filesystem::path& path) {
    bool any_std = false;
    for (const auto& r : table.rows) any_std = any_std || r.has_std;
    CsvWriter csv(path);
    csv.row({"#schema=vol_table/1"});
    std::vector<std::string> header{"strategy", "n_seeds", "annualized_volatility"};
    if (any_std) header.emplace_back("std");
    header.insert(header.end(), {"status", "error"});
    csv.row(header);
    for (const auto& r : table.rows) {
        csv.cell(r.name).cell(r.per_seed.size());
        if (r.error.empty()) {
            csv.cell(r.mean);
        } else {
            csv.cell("FAILED");
        }
        if (any_std) {
            if (r.has_std && r.error.empty()) {
                csv.cell(r.stddev);
            } else {
                csv.cell("");
            }
        }
        csv.cell(r.error.empty() ? "ok" : "FAILED").cell(csv_safe(r.error)).end_row();
    }
}

void write_weights_history_csv(const SuiteTable& table, const std::vector<std::string>& tickers,
                               const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"#schema=weights_history/1"});
    std::vector<std::string> header{"strategy", "seed", "date"};
    header.insert(header.end(), tickers.begin(), tickers.end());
    csv.row(header);
    for (const auto& r : table.rows) {
        for (std::size_t s = 0; s < r.reports.size(); ++s) {
            const auto& rep = r.reports[s];
            for (Index k = 0; k < rep.weights.rows(); ++k) {
                csv.cell(r.name);
                if (r.has_std && s < r.seeds.size()) {
                    csv.cell(static_cast<long>(r.seeds[s]));
                } else {
                    csv.cell("");
                }
                csv.cell(format_iso_date(rep.rebalance_dates[static_cast<std::size_t>(k)]));
                for (Index c = 0; c < rep.weights.cols(); ++c) csv.cell(rep.weights(k, c));
                csv.end_row();
            }
        }
    }
}

void write_ablation_csv(const AblationGrid& grid, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"#schema=ablation_grid/1"});
    std::vector<std::string> header{"delta_out\\delta_in"};
    for (Index d : grid.delta_in) header.push_back(std::to_string(d));
    csv.row(header);
    for (std::size_t o = 0; o < grid.delta_out.size(); ++o) {
        csv.cell(static_cast<long>(grid.delta_out[o]));
        for (std::size_t i = 0; i < grid.delta_in.size(); ++i) {
            const double v = grid.volatility(static_cast<Index>(o), static_cast<Index>(i));
            if (std::isnan(v)) {
                csv.cell("missing");
            } else {
                csv.cell(v);
            }
        }
        csv.end_row();
    }
}

}  // namespace mvdfl
