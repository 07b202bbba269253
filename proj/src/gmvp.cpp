#include "mvdfl/gmvp.hpp"

#include <cmath>
#include <string>

#include "mvdfl/error.hpp"

namespace mvdfl {

namespace {

void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() == 0) {
        throw Error(ErrorKind::Shape, std::string(what) + " must be square and non-empty");
    }
}

}  // namespace

GmvpSolution solve_gmvp_detailed(const Matrix& sigma_hat, const GmvpOptions& opts) {
    require_square(sigma_hat, "covariance");
    if (!sigma_hat.allFinite()) throw Error(ErrorKind::NonFinite, "covariance has non-finite entries");

    GmvpSolution sol;
    const CovarianceMatrix trunc = truncated_reconstruct({sigma_hat, 0}, opts.eps, &sol.truncated);
    sol.ridge = opts.ridge ? *opts.ridge : default_ridge(trunc.values, opts.ridge_scale);
    sol.precision = invert_with_ridge(trunc, sol.ridge).values;

    const Vector row_sums = sol.precision.rowwise().sum();
    sol.budget = row_sums.sum();
    const double scale = sol.precision.cwiseAbs().sum();
    if (!(std::abs(sol.budget) > 1e-14 * scale)) {
        throw Error(ErrorKind::DegenerateBudget, "1' P 1 vanishes");
    }
    sol.weights.values = row_sums / sol.budget;
    return sol;
}

PortfolioWeights solve_gmvp(const Matrix& sigma_hat, const GmvpOptions& opts) {
    return solve_gmvp_detailed(sigma_hat, opts).weights;
}

double portfolio_variance(const Vector& w, const Matrix& sigma) { return w.dot(sigma * w); }

RegretValue regret(const PortfolioWeights& w, const Matrix& sigma_true, double oracle_variance) {
    require_square(sigma_true, "true covariance");
    if (w.values.size() != sigma_true.rows()) {
        throw Error(ErrorKind::Shape, "weights and covariance dimensions differ");
    }
    RegretValue r;
    r.achieved_variance = portfolio_variance(w.values, sigma_true);
    r.oracle_variance = oracle_variance;
    r.regret = r.achieved_variance - r.oracle_variance;
    return r;
}

RegretValue regret(const PortfolioWeights& w, const Matrix& sigma_true, const GmvpOptions& opts) {
    require_square(sigma_true, "true covariance");
    if (w.values.size() != sigma_true.rows()) {
        throw Error(ErrorKind::Shape, "weights and covariance dimensions differ");
    }
    const Vector oracle = solve_gmvp(sigma_true, opts).values;
    return regret(w, sigma_true, portfolio_variance(oracle, sigma_true));
}

Vector grad_loss_wrt_weights(const PortfolioWeights& w, const Matrix& sigma_true) {
    require_square(sigma_true, "true covariance");
    if (w.values.size() != sigma_true.rows()) {
        throw Error(ErrorKind::Shape, "weights and covariance dimensions differ");
    }
    return 2.0 * (sigma_true * w.values);
}

DecisionJacobian decision_jacobian(const GmvpSolution& solution) {
    const Vector& w = solution.weights.values;
    const Matrix& p = solution.precision;
    const Index n = w.size();
    DecisionJacobian out;
    out.budget = solution.budget;
    out.weights = w;
    out.precision = p;
    out.jacobian.resize(n, n * n);
    // Column k*n + j corresponds to entry (j, k) of the covariance.
    for (Index k = 0; k < n; ++k) {
        for (Index j = 0; j < n; ++j) {
            out.jacobian.col(k * n + j) = -w(k) * p.col(j) + (solution.budget * w(k) * w(j)) * w;
        }
    }
    return out;
}

DecisionJacobian decision_jacobian(const Matrix& sigma_hat, const GmvpOptions& opts) {
    return decision_jacobian(solve_gmvp_detailed(sigma_hat, opts));
}

Matrix grad_loss_wrt_sigma(const GmvpSolution& solution, const Matrix& sigma_true) {
    const Vector f = grad_loss_wrt_weights(solution.weights, sigma_true);
    const Vector& w = solution.weights.values;
    return -(solution.precision * f) * w.transpose() + (solution.budget * f.dot(w)) * (w * w.transpose());
}

Matrix grad_loss_wrt_sigma(const Matrix& sigma_hat, const Matrix& sigma_true, const GmvpOptions& opts) {
    return grad_loss_wrt_sigma(solve_gmvp_detailed(sigma_hat, opts), sigma_true);
}

Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unvec(const Vector& v, Index rows, Index cols) {
    if (v.size() != rows * cols) throw Error(ErrorKind::Shape, "vec length does not match shape");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace mvdfl
