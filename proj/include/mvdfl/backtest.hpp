#pragma once

/**
 * @file backtest.hpp
 * @brief Rolling buy-and-hold evaluation of weight-producing strategies.
 *
 * At each rebalance row t the strategy sees only rows (t - delta_in, t]; the
 * resulting weights are applied unchanged to the daily returns of rows
 * t+1 .. t+delta_out (no intra-block drift, no transaction costs). Only full
 * hold blocks are evaluated. Volatility is annualized with sqrt(252).
 */

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mvdfl/data.hpp"
#include "mvdfl/forecaster.hpp"
#include "mvdfl/gmvp.hpp"

namespace mvdfl {

inline constexpr double kTradingDaysPerYear = 252.0;

enum class StrategyKind { EW, Historical, LwDiagonal, LwConstantCorrelation, Oas, Pfl, Dfl };

std::string_view to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(std::string_view name);
bool is_learned(StrategyKind kind);

struct StrategyDecision {
    Vector weights;
    std::optional<Matrix> covariance;  // the estimate behind the weights, if any
};

class Strategy {
public:
    using Rule = std::function<StrategyDecision(const Matrix& window)>;

    Strategy(StrategyKind kind, Rule rule) : kind_(kind), rule_(std::move(rule)) {}

    StrategyKind kind() const { return kind_; }
    StrategyDecision decide(const Matrix& window) const { return rule_(window); }

private:
    StrategyKind kind_;
    Rule rule_;
};

Strategy make_equal_weight();
/// Historical / LW-D / LW-CC / OAS: GMVP of the estimator applied to the window.
Strategy make_estimator_strategy(StrategyKind kind, const GmvpOptions& opts = {});
/// PFL / DFL: GMVP of a frozen forecaster's prediction.
Strategy make_learned_strategy(StrategyKind kind, ForecasterParams params, const GmvpOptions& opts = {});

struct BacktestReport {
    std::vector<Date> rebalance_dates;
    Matrix weights;  // rebalances x N
    std::vector<Matrix> covariances;  // per rebalance, empty for EW
    std::vector<Date> return_dates;
    Vector daily_returns;
    double annualized_volatility = 0.0;
};

BacktestReport run_backtest(const Strategy& strategy, const ReturnsPanel& panel, Index delta_in, Index delta_out);

/// Sample standard deviation (1/(m-1)) times sqrt(252).
double annualized_volatility(const Vector& daily_returns);

struct StrategySpec {
    std::string name;
    StrategyKind kind = StrategyKind::EW;
    /// One entry per seed for learned strategies; one entry otherwise.
    /// A factory that throws marks the cell as failed.
    std::vector<std::function<Strategy()>> instances;
    std::vector<std::uint64_t> seeds;
};

struct SuiteRow {
    std::string name;
    StrategyKind kind = StrategyKind::EW;
    std::vector<double> per_seed;  // NaN for a failed seed
    std::vector<std::uint64_t> seeds;
    double mean = 0.0;
    double stddev = 0.0;  // sample std over seeds; 0 for one seed
    bool has_std = false;
    std::string error;    // non-empty when any seed failed
    std::vector<BacktestReport> reports;
};

struct SuiteTable {
    std::vector<SuiteRow> rows;
    bool ok() const;
};

SuiteTable run_suite(const std::vector<StrategySpec>& strategies, const ReturnsPanel& panel, Index delta_in,
                     Index delta_out);

struct AblationGrid {
    std::vector<Index> delta_in;
    std::vector<Index> delta_out;
    Matrix volatility;  // rows delta_out, cols delta_in; NaN = missing
};

/// `evaluate(delta_in, delta_out)` returns the annualized volatility of one
/// cell; a throwing cell is recorded as missing.
AblationGrid delta_ablation(const std::vector<Index>& delta_in, const std::vector<Index>& delta_out,
                            const std::function<double(Index, Index)>& evaluate);

void write_vol_table_csv(const SuiteTable& table, const std::filesystem::path& path);
void write_weights_history_csv(const SuiteTable& table, const std::vector<std::string>& tickers,
                               const std::filesystem::path& path);
void write_ablation_csv(const AblationGrid& grid, const std::filesystem::path& path);

}  // namespace mvdfl
