#pragma once

// Classical covariance estimators, PSD repair and ridge inversion.
//
// Sample covariance uses the unbiased 1/(m-1) normalization. Shrinkage
// intensities follow the closed forms of the original publications
// (Ledoit-Wolf 2003/2004, Chen et al. 2010); those formulas are stated for
// the 1/m covariance, so the intensity is computed there and then applied to
// the 1/(m-1) sample matrix and its target.

#include <Eigen/Dense>

namespace mvdfl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct CovarianceMatrix {
    Matrix values;
    Index n_obs = 0;
};

struct PrecisionMatrix {
    Matrix values;
    double source_ridge = 0.0;
};

enum class ShrinkageTarget { ScaledIdentity, ConstantCorrelation };

struct ShrinkageResult {
    CovarianceMatrix estimate;
    double intensity = 0.0;
    ShrinkageTarget target_kind = ShrinkageTarget::ScaledIdentity;
    Matrix target;
    Matrix sample;
};

inline constexpr double kDefaultTruncation = 1e-6;
inline constexpr double kDefaultRidgeScale = 1e-8;

CovarianceMatrix sample_cov(const Matrix& x);

/// Ledoit-Wolf shrinkage toward mu * I, mu = trace(S) / N.
ShrinkageResult lw_diagonal(const Matrix& x);
/// Ledoit-Wolf shrinkage toward the constant-correlation matrix.
ShrinkageResult lw_constant_correlation(const Matrix& x);
/// Oracle approximating shrinkage toward mu * I.
ShrinkageResult oas(const Matrix& x);

/// Rebuild from eigenpairs with lambda >= eps * lambda_max.
/// `dropped`, when given, receives the number of discarded eigenpairs.
CovarianceMatrix truncated_reconstruct(const CovarianceMatrix& sigma, double eps,
                                       Index* dropped = nullptr);

/// Exact inverse of (sigma + ridge * I).
PrecisionMatrix invert_with_ridge(const CovarianceMatrix& sigma, double ridge);

/// kDefaultRidgeScale * trace(sigma) / N.
double default_ridge(const Matrix& sigma, double scale = kDefaultRidgeScale);

bool is_symmetric(const Matrix& m, double rel_tol = 1e-12);
/// Smallest eigenvalue >= -tol * lambda_max.
bool is_psd(const Matrix& m, double rel_tol = 1e-10);

}  // namespace mvdfl
