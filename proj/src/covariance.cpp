#include "mvdfl/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "mvdfl/error.hpp"

namespace mvdfl {

namespace {

void require_observations(const Matrix& x) {
    if (x.rows() < 2) {
        throw Error(ErrorKind::InsufficientObservations,
                    "need at least 2 rows, got " + std::to_string(x.rows()));
    }
    if (x.cols() < 1) {
        throw Error(ErrorKind::Shape, "return matrix has no columns");
    }
}

Matrix centered(const Matrix& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    return x.rowwise() - mean;
}

ShrinkageResult assemble(const Matrix& sample, const Matrix& target, double intensity,
                         ShrinkageTarget kind, Index n_obs) {
    ShrinkageResult out;
    out.intensity = std::clamp(intensity, 0.0, 1.0);
    out.target_kind = kind;
    out.sample = sample;
    out.target = target;
    out.estimate.values = out.intensity * target + (1.0 - out.intensity) * sample;
    out.estimate.n_obs = n_obs;
    return out;
}

}  // namespace

CovarianceMatrix sample_cov(const Matrix& x) {
    require_observations(x);
    const Matrix xc = centered(x);
    Matrix s = (xc.transpose() * xc) / static_cast<double>(x.rows() - 1);
    // Exact symmetry regardless of the GEMM kernel's summation order.
    s = 0.5 * (s + s.transpose()).eval();
    return {std::move(s), x.rows()};
}

ShrinkageResult lw_diagonal(const Matrix& x) {
    require_observations(x);
    const Index m = x.rows();
    const Index n = x.cols();
    const double dm = static_cast<double>(m);
    const double dn = static_cast<double>(n);

    const Matrix xc = centered(x);
    const Matrix s_mle = (xc.transpose() * xc) / dm;

    // Ledoit & Wolf (2004) intensity with the normalized Frobenius norm
    // ||A||^2 = tr(A A') / N.
    const double mu = s_mle.trace() / dn;
    const double d2 = (s_mle - mu * Matrix::Identity(n, n)).squaredNorm() / dn;
    double b2_bar = 0.0;
    for (Index t = 0; t < m; ++t) {
        const Vector row = xc.row(t).transpose();
        b2_bar += (row * row.transpose() - s_mle).squaredNorm() / dn;
    }
    b2_bar /= dm * dm;
    const double b2 = std::min(b2_bar, d2);
    const double intensity = d2 > 0.0 ? b2 / d2 : 0.0;

    const Matrix sample = sample_cov(x).values;
    const Matrix target = (sample.trace() / dn) * Matrix::Identity(n, n);
    return assemble(sample, target, intensity, ShrinkageTarget::ScaledIdentity, m);
}

ShrinkageResult lw_constant_correlation(const Matrix& x) {
    require_observations(x);
    const Index m = x.rows();
    const Index n = x.cols();
    const double dm = static_cast<double>(m);

    const Matrix xc = centered(x);
    const Matrix s_mle = (xc.transpose() * xc) / dm;
    const Vector var = s_mle.diagonal();
    const Vector sd = var.array().sqrt();

    double r_bar = 0.0;
    if (n > 1) {
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) {
                if (i != j && sd(i) > 0.0 && sd(j) > 0.0) r_bar += s_mle(i, j) / (sd(i) * sd(j));
            }
        }
        r_bar /= static_cast<double>(n * (n - 1));
    }

    auto target_from = [&](const Matrix& s) {
        const Vector sdev = s.diagonal().array().sqrt();
        Matrix f = r_bar * (sdev * sdev.transpose());
        f.diagonal() = s.diagonal();
        return f;
    };
    const Matrix f_mle = target_from(s_mle);

    // Ledoit & Wolf (2003) estimators of pi, rho and gamma.
    const Matrix x2 = xc.array().square();
    const Matrix cross = xc.transpose() * xc;
    const Matrix pi_mat =
        (x2.transpose() * x2) / dm - 2.0 * cross.cwiseProduct(s_mle) / dm + s_mle.cwiseProduct(s_mle);
    const double pi_hat = pi_mat.sum();

    const Matrix x3 = xc.array().cube();
    Matrix theta = (x3.transpose() * xc) / dm;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) theta(i, j) -= var(i) * s_mle(i, j);
    }
    double rho_hat = pi_mat.diagonal().sum();
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            if (i != j && sd(i) > 0.0) rho_hat += r_bar * (sd(j) / sd(i)) * theta(i, j);
        }
    }
    const double gamma = (s_mle - f_mle).squaredNorm();

    double intensity = 0.0;
    if (gamma > 1e-30 * std::max(1.0, s_mle.squaredNorm())) {
        const double kappa = (pi_hat - rho_hat) / gamma;
        intensity = kappa / dm;
    }

    const Matrix sample = sample_cov(x).values;
    return assemble(sample, target_from(sample), intensity, ShrinkageTarget::ConstantCorrelation, m);
}

ShrinkageResult oas(const Matrix& x) {
    require_observations(x);
    const Index m = x.rows();
    const Index n = x.cols();
    const double dm = static_cast<double>(m);
    const double dn = static_cast<double>(n);

    const Matrix xc = centered(x);
    const Matrix s_mle = (xc.transpose() * xc) / dm;
    const double tr = s_mle.trace();
    const double tr_s2 = s_mle.squaredNorm();  // tr(S^2) for symmetric S

    // Chen, Wiesel, Eldar & Hero (2010) oracle-approximating intensity.
    const double num = (1.0 - 2.0 / dn) * tr_s2 + tr * tr;
    const double den = (dm + 1.0 - 2.0 / dn) * (tr_s2 - tr * tr / dn);
    double intensity = 1.0;
    if (den > 1e-300) intensity = std::min(num / den, 1.0);

    const Matrix sample = sample_cov(x).values;
    const Matrix target = (sample.trace() / dn) * Matrix::Identity(n, n);
    return assemble(sample, target, intensity, ShrinkageTarget::ScaledIdentity, m);
}

CovarianceMatrix truncated_reconstruct(const CovarianceMatrix& sigma, double eps, Index* dropped) {
    if (!(eps > 0.0 && eps < 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "truncation eps must lie in (0, 1)");
    }
    const Matrix& s = sigma.values;
    if (s.rows() != s.cols() || s.rows() == 0) {
        throw Error(ErrorKind::Shape, "covariance must be square and non-empty");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    if (eig.info() != Eigen::Success) {
        throw Error(ErrorKind::DegenerateCovariance, "eigendecomposition failed");
    }
    const Vector& lambda = eig.eigenvalues();  // ascending
    const double lambda_max = lambda(lambda.size() - 1);
    if (!(lambda_max > 0.0)) {
        throw Error(ErrorKind::DegenerateCovariance, "largest eigenvalue is not positive");
    }
    const double cutoff = eps * lambda_max;
    Index first_kept = 0;
    while (first_kept < lambda.size() && lambda(first_kept) < cutoff) ++first_kept;
    if (dropped) *dropped = first_kept;
    if (first_kept == 0) return sigma;

    const Index kept = lambda.size() - first_kept;
    const Matrix v = eig.eigenvectors().rightCols(kept);
    Matrix rebuilt = v * lambda.tail(kept).asDiagonal() * v.transpose();
    rebuilt = 0.5 * (rebuilt + rebuilt.transpose()).eval();
    return {std::move(rebuilt), sigma.n_obs};
}

PrecisionMatrix invert_with_ridge(const CovarianceMatrix& sigma, double ridge) {
    const Matrix& s = sigma.values;
    if (s.rows() != s.cols() || s.rows() == 0) {
        throw Error(ErrorKind::Shape, "covariance must be square and non-empty");
    }
    if (!(ridge >= 0.0)) throw Error(ErrorKind::InvalidConfig, "ridge must be nonnegative");
    const Index n = s.rows();
    Matrix a = s;
    a.diagonal().array() += ridge;

    Matrix inv;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success) {
        inv = llt.solve(Matrix::Identity(n, n));
    } else {
        Eigen::FullPivLU<Matrix> lu(a);
        if (!lu.isInvertible()) {
            throw Error(ErrorKind::SingularMatrix, "covariance + ridge is singular");
        }
        inv = lu.inverse();
    }
    if (!inv.allFinite()) throw Error(ErrorKind::SingularMatrix, "inverse is not finite");
    inv = 0.5 * (inv + inv.transpose()).eval();
    return {std::move(inv), ridge};
}

double default_ridge(const Matrix& sigma, double scale) {
    if (sigma.rows() == 0) return 0.0;
    return scale * std::max(0.0, sigma.trace()) / static_cast<double>(sigma.rows());
}

bool is_symmetric(const Matrix& m, double rel_tol) {
    if (m.rows() != m.cols()) return false;
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

bool is_psd(const Matrix& m, double rel_tol) {
    if (m.rows() != m.cols()) return false;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    const Vector& lambda = eig.eigenvalues();
    const double lmax = std::max(lambda.cwiseAbs().maxCoeff(), 0.0);
    return lambda(0) >= -rel_tol * lmax;
}

}  // namespace mvdfl
