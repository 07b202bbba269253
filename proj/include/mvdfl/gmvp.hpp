#pragma once

/**
 * @file gmvp.hpp
 * @brief Differentiable global minimum-variance portfolio layer.
 *
 * Forward: w*(S) = P 1 / (1' P 1) with P the ridge inverse of the
 * spectrally truncated estimate. Backward: with D = 1' P 1,
 *
 *     dw = -P dS w + D w (w' dS w)
 *     J  = -(w' kron P) + D w (w kron w)'          (N x N^2, vec stacks columns)
 *
 * and for the regret loss with F = 2 S_true w the upstream gradient on S is
 * reshape(F' J) = -(P F) w' + D (F' w) w w'.
 *
 * The ridge is treated as a constant in the backward pass and truncation is
 * straight-through: derivatives are taken at the truncated matrix.
 */

#include <optional>

#include <Eigen/Dense>

#include "mvdfl/covariance.hpp"

namespace mvdfl {

struct GmvpOptions {
    double eps = kDefaultTruncation;
    /// Fixed ridge; when unset, ridge_scale * trace / N of the truncated matrix.
    std::optional<double> ridge;
    double ridge_scale = kDefaultRidgeScale;
};

struct PortfolioWeights {
    Vector values;
};

struct GmvpSolution {
    PortfolioWeights weights;
    Matrix precision;
    double budget = 0.0;  // D = 1' P 1
    double ridge = 0.0;
    Index truncated = 0;  // eigenpairs dropped
};

struct RegretValue {
    double regret = 0.0;
    double achieved_variance = 0.0;
    double oracle_variance = 0.0;
};

struct DecisionJacobian {
    Matrix jacobian;  // N x N^2
    double budget = 0.0;
    Vector weights;
    Matrix precision;
};

GmvpSolution solve_gmvp_detailed(const Matrix& sigma_hat, const GmvpOptions& opts = {});
PortfolioWeights solve_gmvp(const Matrix& sigma_hat, const GmvpOptions& opts = {});

/// w' S_true w minus the oracle GMVP variance under S_true.
RegretValue regret(const PortfolioWeights& w, const Matrix& sigma_true, const GmvpOptions& opts = {});
/// Same, with a precomputed oracle variance.
RegretValue regret(const PortfolioWeights& w, const Matrix& sigma_true, double oracle_variance);

double portfolio_variance(const Vector& w, const Matrix& sigma);

/// 2 S_true w.
Vector grad_loss_wrt_weights(const PortfolioWeights& w, const Matrix& sigma_true);

DecisionJacobian decision_jacobian(const Matrix& sigma_hat, const GmvpOptions& opts = {});
DecisionJacobian decision_jacobian(const GmvpSolution& solution);

/// Unsymmetrized dL/dS as an N x N matrix (reshape of F' J).
Matrix grad_loss_wrt_sigma(const Matrix& sigma_hat, const Matrix& sigma_true, const GmvpOptions& opts = {});
Matrix grad_loss_wrt_sigma(const GmvpSolution& solution, const Matrix& sigma_true);

/// Column-major vec and its inverse.
Vector vec(const Matrix& m);
Matrix unvec(const Vector& v, Index rows, Index cols);

inline Matrix symmetrize(const Matrix& g) { return 0.5 * (g + g.transpose()); }

}  // namespace mvdfl
