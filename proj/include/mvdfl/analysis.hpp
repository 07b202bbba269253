#pragma once

// Structural analyses of learned and classical allocations: block reordering
// of precision matrices, variance attribution, volatility-rank precision and
// weight-distribution envelopes.

#include <filesystem>
#include <string>
#include <vector>

#include "mvdfl/data.hpp"

namespace mvdfl {

struct Permutation {
    std::vector<Index> order;  // order[position] = original index
    /// Positions where a new block starts (advisory).
    std::vector<Index> block_starts;

    bool is_bijection() const;
};

/// Bidirectional block construction on a precision matrix. Ties go to the
/// lowest index. Requires N >= 3.
Permutation bbc_reorder(const Matrix& precision);

/// Boundary at the largest drop in the mean of the leading k x k block of
/// A[order][order], k >= 2.
std::vector<Index> detect_blocks(const Matrix& precision, const std::vector<Index>& order);

Matrix apply_permutation(const Matrix& m, const std::vector<Index>& order);

struct AttributionReport {
    double diagonal_term = 0.0;
    double offdiag_term = 0.0;
    double positive_region = 0.0;  // both weights >= 0
    double mixed_region = 0.0;     // opposite signs
    double negative_region = 0.0;  // both weights < 0
    std::vector<Index> order;      // assets by descending signed weight
    Index zero_crossing = 0;       // count of nonnegative weights (first negative position)
};

AttributionReport attribution(const Vector& weights, const Matrix& sigma_true);

/// Per rebalance: |k lowest-training-volatility assets intersect k largest
/// weights| / k, averaged over rebalances.
double volatility_rank_precision(const ReturnsPanel& train_panel, const Matrix& weights_history, Index k);

struct WeightEnvelope {
    Vector median;
    Vector lower;
    Vector upper;
};

/// Per asset: median over rebalances and the min/max of the weights lying
/// within the [lower_pct, upper_pct] percentiles (linear interpolation).
WeightEnvelope weight_distribution(const Matrix& weights_history, double lower_pct, double upper_pct);

/// Linear-interpolation percentile (pct in [0, 100]).
double percentile(std::vector<double> values, double pct);

}  // namespace mvdfl
