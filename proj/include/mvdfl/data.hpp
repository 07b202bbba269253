#pragma once

/**
 * @file data.hpp
 * @brief Return-panel ingestion, universe filtering, splitting and windowing.
 *
 * A ReturnsPanel is the T x N matrix of daily simple returns together with
 * its date index and ticker list. Everything downstream (training windows,
 * backtests, analyses) is sliced out of a panel.
 *
 * CSV layout: header `date,TICKER1,...`, ISO-8601 dates, decimal returns
 * (0.01 = 1%). Empty cells, `NA`, `NaN` and `null` count as missing; any
 * ticker with a missing value is excluded, never imputed.
 */

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mvdfl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Date = std::chrono::year_month_day;

Date parse_iso_date(std::string_view text);
std::string format_iso_date(const Date& date);

struct ReturnsPanel {
    std::vector<Date> dates;
    std::vector<std::string> tickers;
    Matrix values;  // rows = dates, cols = tickers

    Index n_rows() const { return values.rows(); }
    Index n_assets() const { return values.cols(); }

    /// Contiguous row range [first, first + count).
    ReturnsPanel rows(Index first, Index count) const;
    /// Keep the listed columns in the given order.
    ReturnsPanel columns(const std::vector<Index>& keep) const;

    /// Throws Ingestion if dates are not strictly increasing or values are
    /// non-finite, UniverseTooSmall for N < 2 (when `min_assets` is 2).
    void validate(Index min_assets = 2) const;
};

struct WindowSample {
    Matrix x_in;        // delta_in x N
    Matrix sigma_true;  // N x N sample covariance of the next delta_out rows
    Date anchor_date;   // date of the last input row
    Index anchor_row = 0;
};

struct SplitSpec {
    double train_frac = 0.6;
    double valid_frac = 0.2;
    double test_frac = 0.2;

    SplitSpec() = default;
    /// Throws InvalidConfig unless fractions are nonnegative and sum to 1 (1e-12).
    SplitSpec(double train, double valid, double test);
};

struct PanelSplit {
    ReturnsPanel train;
    ReturnsPanel valid;
    ReturnsPanel test;
};

ReturnsPanel load_returns(const std::filesystem::path& path);
ReturnsPanel parse_returns_csv(std::string_view text, std::string_view source = "<memory>");
void write_returns_csv(const ReturnsPanel& panel, const std::filesystem::path& path);

/// Drops the later-listed ticker of every pair with corr >= threshold (signed),
/// scanning columns in order.
ReturnsPanel filter_universe(const ReturnsPanel& panel, double corr_threshold);

std::vector<WindowSample> make_windows(const ReturnsPanel& panel, Index delta_in, Index delta_out,
                                       Index stride);

/// Segment lengths floor(T * frac); the flooring remainder goes to training.
PanelSplit split_panel(const ReturnsPanel& panel, const SplitSpec& spec);

struct Regime {
    Matrix covariance;
    Index length = 0;
};

/// Regimes are cycled in order until T rows are filled.
struct SyntheticConfig {
    std::vector<Regime> regimes;
    Date start_date{std::chrono::year{2010}, std::chrono::January, std::chrono::day{4}};
};

/// Zero-mean Gaussian returns with the active regime's covariance, on a
/// weekday calendar starting at `start_date`.
ReturnsPanel generate_synthetic(Index n_assets, Index n_rows, std::uint64_t seed,
                                const SyntheticConfig& config);

/// Regime index active at each row of a synthetic panel.
std::vector<Index> regime_schedule(Index n_rows, const SyntheticConfig& config);

}  // namespace mvdfl
