#include "mvdfl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mvdfl/csv.hpp"
#include "mvdfl/error.hpp"

namespace mvdfl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector kron(const Vector& a, const Vector& b) {
    Vector out(a.size() * b.size());
    for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

double spectral_gap(const Vector& spectrum, double lambda) {
    const double scale = std::max(spectrum.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    return (spectrum.array() - lambda).abs().minCoeff() / scale;
}

double eigen_residual(const Matrix& op, double op_norm, const Vector& v, double lambda) {
    const double denom = std::max(op_norm * v.norm(), std::numeric_limits<double>::min());
    return (op * v - lambda * v).norm() / denom;
}

Vector symmetric_spectrum(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

bool denominator_degenerate(const SpectralDiagnostics& d) {
    const double D = d.budget;
    const double scale = D * D * d.a * d.a * std::abs(d.b) + std::abs(D) * d.a * d.c;
    return std::abs(d.denominator) <= kDenominatorTolerance * scale;
}

double collinearity_angle(const Vector& w, const Vector& pw) {
    const double wn = w.norm();
    const double along = w.dot(pw) / wn;
    const Vector rest = pw - (w.dot(pw) / (wn * wn)) * w;
    return std::atan2(rest.norm(), std::abs(along));
}

bool repeated(const SpectralDiagnostics& d) {
    const double scale = std::max({std::abs(d.lambda[0]), std::abs(d.lambda[1]), std::numeric_limits<double>::min()});
    return std::abs(d.lambda[0] - d.lambda[1]) <= kEigenTolerance * scale;
}

bool prop_degenerate(const SpectralDiagnostics& d) {
    return !d.real_spectrum || denominator_degenerate(d) ||
           collinearity_angle(d.weights, d.precision_weights) < kCollinearAngle || repeated(d);
}

}  // namespace

Eigen::Vector2d characteristic_coefficients(const Eigen::Matrix2d& m) {
    return {m.trace(), m.determinant()};
}

SpectralDiagnostics compute_diagnostics(const Matrix& sigma_hat, const GmvpOptions& opts) {
    const GmvpSolution sol = solve_gmvp_detailed(sigma_hat, opts);
    SpectralDiagnostics d;
    d.weights = sol.weights.values;
    d.precision = sol.precision;
    d.budget = sol.budget;
    d.precision_weights = d.precision * d.weights;
    d.a = d.weights.squaredNorm();
    d.b = d.weights.dot(d.precision_weights);
    d.c = d.precision_weights.squaredNorm();

    const double D = d.budget, a = d.a, b = d.b, c = d.c;
    const double m11 = D * D * a * a * a - D * a * b;
    d.denominator = D * D * a * a * b - D * a * c;
    d.denominator_literal = D * D * a * a * b - a * c;
    d.r1_rep << m11, d.denominator, -D * a * a, -D * a * b;
    d.r2_rep << -D * a * b, -D * a * a, d.denominator, m11;

    const double tr = d.r1_rep.trace();
    const double det = d.r1_rep.determinant();
    const double disc = tr * tr - 4.0 * det;
    d.real_spectrum = disc >= 0.0;
    const double root = std::sqrt(std::max(disc, 0.0));
    // Larger root first; the smaller one via Vieta to avoid cancellation.
    const double big = tr >= 0.0 ? 0.5 * (tr + root) : 0.5 * (tr - root);
    const double small = big != 0.0 ? det / big : 0.0;
    d.lambda = {std::max(big, small), std::min(big, small)};

    const Vector u = kron(d.weights, d.weights);
    const Vector v = kron(d.weights, d.precision_weights);
    for (int k = 0; k < 2; ++k) {
        const double num = d.lambda[k] - m11;
        d.coefficient[k] = num / d.denominator;
        d.coefficient_literal[k] = num / d.denominator_literal;
        d.x[k] = d.weights + d.coefficient[k] * d.precision_weights;
        d.x_literal[k] = d.weights + d.coefficient_literal[k] * d.precision_weights;
        d.y[k] = u + d.coefficient[k] * v;
        d.y_literal[k] = v + d.coefficient_literal[k] * u;
        d.q[k] = kNaN;
    }
    return d;
}

Matrix r1_operator(const SpectralDiagnostics& d) {
    const Vector& w = d.weights;
    const Vector& pw = d.precision_weights;
    const double D = d.budget;
    return D * D * d.a * d.a * (w * w.transpose()) - D * d.a * (pw * w.transpose() + w * pw.transpose());
}

Matrix r2_operator(const SpectralDiagnostics& d) {
    const Vector u = kron(d.weights, d.weights);
    const Vector v = kron(d.weights, d.precision_weights);
    const double D = d.budget;
    return D * D * d.a * (u * u.transpose()) - D * (v * u.transpose() + u * v.transpose());
}

Prop1Result verify_prop1(const SpectralDiagnostics& d, const DecisionJacobian& jac) {
    Prop1Result r;
    const Eigen::Vector2d c1 = characteristic_coefficients(d.r1_rep);
    const Eigen::Vector2d c2 = characteristic_coefficients(d.r2_rep);
    for (int i = 0; i < 2; ++i) {
        const double scale = std::max({std::abs(c1(i)), std::abs(c2(i)), std::numeric_limits<double>::min()});
        r.charpoly_residual = std::max(r.charpoly_residual, std::abs(c1(i) - c2(i)) / scale);
    }

    const Matrix r1 = r1_operator(d);
    const Matrix r2 = r2_operator(d);
    const double r1_norm = symmetric_spectrum(r1).cwiseAbs().maxCoeff();
    const double r2_norm = symmetric_spectrum(r2).cwiseAbs().maxCoeff();

    const Matrix& J = jac.jacobian;
    const Matrix jjt = J * J.transpose();
    const Matrix jtj = J.transpose() * J;
    const Vector jjt_spec = symmetric_spectrum(jjt);
    const Vector jtj_spec = symmetric_spectrum(jtj);
    const double jjt_norm = jjt_spec.cwiseAbs().maxCoeff();
    const double jtj_norm = jtj_spec.cwiseAbs().maxCoeff();

    r.degenerate = prop_degenerate(d);
    bool ops_ok = r.charpoly_residual <= kCharPolyTolerance;
    bool claim_ok = true;
    for (int k = 0; k < 2; ++k) {
        r.r1_residual[k] = eigen_residual(r1, r1_norm, d.x[k], d.lambda[k]);
        r.r2_residual[k] = eigen_residual(r2, r2_norm, d.y[k], d.lambda[k]);
        r.jjt_spectrum_gap[k] = spectral_gap(jjt_spec, d.lambda[k]);
        r.jtj_spectrum_gap[k] = spectral_gap(jtj_spec, d.lambda[k]);
        r.jjt_residual[k] = eigen_residual(jjt, jjt_norm, d.x[k], d.lambda[k]);
        r.jtj_residual[k] = eigen_residual(jtj, jtj_norm, d.y[k], d.lambda[k]);
        ops_ok = ops_ok && r.r1_residual[k] <= kEigenTolerance && r.r2_residual[k] <= kEigenTolerance;
        claim_ok = claim_ok && r.jjt_spectrum_gap[k] <= kEigenTolerance && r.jtj_spectrum_gap[k] <= kEigenTolerance &&
                   r.jjt_residual[k] <= kEigenTolerance && r.jtj_residual[k] <= kEigenTolerance;
    }
    r.operator_pass = ops_ok;
    r.pass = claim_ok;
    return r;
}

Prop2Result verify_prop2(const SpectralDiagnostics& d, const DecisionJacobian& jac) {
    Prop2Result r;
    const Matrix& J = jac.jacobian;
    const Matrix jjt = J * J.transpose();
    const Matrix jtj = J.transpose() * J;
    const double jjt_norm = symmetric_spectrum(jjt).cwiseAbs().maxCoeff();
    const double jtj_norm = symmetric_spectrum(jtj).cwiseAbs().maxCoeff();
    const Matrix r1 = r1_operator(d);
    const Matrix r2 = r2_operator(d);
    const double r1_norm = symmetric_spectrum(r1).cwiseAbs().maxCoeff();
    const double r2_norm = symmetric_spectrum(r2).cwiseAbs().maxCoeff();

    r.degenerate = prop_degenerate(d);
    bool lit = true, cor = true;
    for (int k = 0; k < 2; ++k) {
        r.x_literal_residual[k] = eigen_residual(jjt, jjt_norm, d.x_literal[k], d.lambda[k]);
        r.x_residual[k] = eigen_residual(jjt, jjt_norm, d.x[k], d.lambda[k]);
        r.y_literal_residual[k] = eigen_residual(jtj, jtj_norm, d.y_literal[k], d.lambda[k]);
        r.y_residual[k] = eigen_residual(jtj, jtj_norm, d.y[k], d.lambda[k]);
        r.x_literal_r1_residual[k] = eigen_residual(r1, r1_norm, d.x_literal[k], d.lambda[k]);
        r.y_literal_r2_residual[k] = eigen_residual(r2, r2_norm, d.y_literal[k], d.lambda[k]);
        lit = lit && r.x_literal_residual[k] <= kEigenTolerance && r.y_literal_residual[k] <= kEigenTolerance;
        cor = cor && r.x_residual[k] <= kEigenTolerance && r.y_residual[k] <= kEigenTolerance;
    }
    r.literal_pass = lit;
    r.corrected_pass = cor;
    r.pass = lit || cor;
    return r;
}

Prop3Result verify_prop3(const SpectralDiagnostics& d, const DecisionJacobian& jac, const Matrix& sigma_true) {
    Prop3Result r;
    const Vector F = 2.0 * sigma_true * d.weights;
    const Vector g = jac.jacobian.transpose() * F;  // (F' J)'
    r.degenerate = prop_degenerate(d);

    double worst_linear = 0.0, worst_sqrt = 0.0;
    for (int k = 0; k < 2; ++k) {
        const double lambda = d.lambda[k];
        const Vector x_hat = d.x[k].normalized();
        const Vector y_hat = d.y[k].normalized();
        r.projection[k] = g.dot(y_hat);
        r.f_dot_x[k] = F.dot(x_hat);
        r.q[k] = lambda * F.dot(d.x[k]);

        const auto rel = [&](double pred) {
            const double s = std::max({std::abs(r.projection[k]), std::abs(pred), std::numeric_limits<double>::min()});
            return std::abs(r.projection[k] - pred) / s;
        };
        r.residual_linear[k] = rel(lambda * r.f_dot_x[k]);
        // sqrt(lambda) is undefined for the negative eigenvalue; that candidate is not applicable there.
        r.residual_sqrt[k] = lambda >= 0.0 ? rel(std::sqrt(lambda) * r.f_dot_x[k]) : kNaN;
        worst_linear = std::max(worst_linear, r.residual_linear[k]);
        worst_sqrt = std::isnan(r.residual_sqrt[k]) ? std::numeric_limits<double>::infinity()
                                                    : std::max(worst_sqrt, r.residual_sqrt[k]);

        const double ratio = std::abs(r.projection[k]) / std::abs(r.f_dot_x[k]);
        const double log_l = std::log(std::abs(lambda));
        r.fitted_exponent[k] =
            (std::isfinite(ratio) && ratio > 0.0 && std::abs(log_l) > 1e-12) ? std::log(ratio) / log_l : kNaN;
    }
    r.best_exponent = worst_sqrt < worst_linear ? 0.5 : 1.0;
    r.pass = std::min(worst_linear, worst_sqrt) <= kProjectionTolerance;
    return r;
}

AssumptionAudit assumption_audit(const SpectralDiagnostics& d) {
    AssumptionAudit a;
    const Matrix p2 = d.precision * d.precision;
    const Vector sv = Eigen::JacobiSVD<Matrix>(p2).singularValues();
    const double cutoff = 1e-12 * sv.maxCoeff();
    a.precision_squared_kernel_dim = (sv.array() <= cutoff).count();
    a.kernel_assumption_holds = a.precision_squared_kernel_dim >= 2;

    const Matrix r1 = r1_operator(d);
    const Matrix r2 = r2_operator(d);
    a.r1_minus_identity_min_sv =
        Eigen::BDCSVD<Matrix>(r1 - Matrix::Identity(r1.rows(), r1.cols())).singularValues().minCoeff();
    a.r2_minus_identity_min_sv =
        Eigen::BDCSVD<Matrix>(r2 - Matrix::Identity(r2.rows(), r2.cols())).singularValues().minCoeff();
    a.collinearity_angle = collinearity_angle(d.weights, d.precision_weights);
    a.collinear = a.collinearity_angle < kCollinearAngle;
    return a;
}

std::uint64_t theory_instance_seed(std::uint64_t base_seed, Index n_assets, Index instance) {
    // splitmix64 over the combined key
    std::uint64_t z = base_seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(n_assets + 1)) ^
                      (0xBF58476D1CE4E5B9ULL * static_cast<std::uint64_t>(instance + 1));
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

TheoryInstance random_theory_instance(std::uint64_t seed, Index n_assets) {
    if (n_assets < 2) throw Error(ErrorKind::InvalidConfig, "theory instance needs at least 2 assets");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto draw = [&] {
        Matrix A(n_assets, n_assets);
        for (Index j = 0; j < n_assets; ++j)
            for (Index i = 0; i < n_assets; ++i) A(i, j) = normal(rng);
        Matrix s = A * A.transpose() / static_cast<double>(n_assets);
        s.diagonal().array() += 0.5;
        return symmetrize(s);
    };
    TheoryInstance inst;
    inst.sigma_hat = draw();
    inst.sigma_true = draw();
    return inst;
}

CertificationRow certify(std::uint64_t seed, Index n_assets, const TheoryInstance& instance, const GmvpOptions& opts) {
    CertificationRow row;
    row.seed = seed;
    row.n_assets = n_assets;
    row.diagnostics = compute_diagnostics(instance.sigma_hat, opts);
    const DecisionJacobian jac = decision_jacobian(instance.sigma_hat, opts);
    row.prop1 = verify_prop1(row.diagnostics, jac);
    row.prop2 = verify_prop2(row.diagnostics, jac);
    row.prop3 = verify_prop3(row.diagnostics, jac, instance.sigma_true);
    row.diagnostics.q = row.prop3.q;
    row.audit = assumption_audit(row.diagnostics);

    std::vector<std::string> flags;
    const SpectralDiagnostics& d = row.diagnostics;
    if (!d.real_spectrum) flags.emplace_back("complex-spectrum");
    if (row.audit.collinear) flags.emplace_back("collinear");
    if (denominator_degenerate(d)) flags.emplace_back("denominator");
    if (repeated(d)) flags.emplace_back("repeated-eigenvalue");
    if (d.lambda[1] < 0.0) flags.emplace_back("negative-eigenvalue");
    if (!row.audit.kernel_assumption_holds) flags.emplace_back("kernel-assumption");
    for (std::size_t i = 0; i < flags.size(); ++i) row.flags += (i ? "|" : "") + flags[i];
    return row;
}

CertificationRow certify(std::uint64_t seed, Index n_assets) {
    return certify(seed, n_assets, random_theory_instance(seed, n_assets));
}

std::vector<CertificationRow> run_certification(Index n_instances, const std::vector<Index>& n_assets_list,
                                                std::uint64_t base_seed) {
    if (n_instances < 1) throw Error(ErrorKind::InvalidConfig, "n_instances must be positive");
    std::vector<CertificationRow> rows;
    for (Index n : n_assets_list)
        for (Index i = 0; i < n_instances; ++i) rows.push_back(certify(theory_instance_seed(base_seed, n, i), n));
    return rows;
}

void write_theory_report_csv(const std::vector<CertificationRow>& rows, const std::filesystem::path& path) {
    CsvWriter out(path);
    out.row({"seed", "n_assets", "a", "b", "c", "budget", "lambda_1", "lambda_2",
             "charpoly_residual", "r1_residual", "r2_residual", "jjt_gap", "jtj_gap", "jjt_residual", "jtj_residual",
             "operator_pass", "prop1_pass",
             "x_literal_residual", "x_residual", "y_literal_residual", "y_residual",
             "x_literal_r1_residual", "y_literal_r2_residual", "prop2_literal_pass", "prop2_corrected_pass",
             "projection_1", "projection_2", "q_1", "q_2", "residual_linear", "residual_sqrt",
             "fitted_exponent_1", "fitted_exponent_2", "best_exponent", "prop3_pass",
             "kernel_dim", "r1_minus_i_min_sv", "r2_minus_i_min_sv", "collinearity_angle", "flags"});
    const auto max2 = [](const std::array<double, 2>& v) { return std::fmax(v[0], v[1]); };
    for (const auto& r : rows) {
        const auto& d = r.diagnostics;
        out.cell(std::to_string(r.seed)).cell(static_cast<long>(r.n_assets));
        out.cell(d.a).cell(d.b).cell(d.c).cell(d.budget).cell(d.lambda[0]).cell(d.lambda[1]);
        out.cell(r.prop1.charpoly_residual).cell(max2(r.prop1.r1_residual)).cell(max2(r.prop1.r2_residual));
        out.cell(max2(r.prop1.jjt_spectrum_gap)).cell(max2(r.prop1.jtj_spectrum_gap));
        out.cell(max2(r.prop1.jjt_residual)).cell(max2(r.prop1.jtj_residual));
        out.cell(r.prop1.operator_pass ? 1 : 0).cell(r.prop1.pass ? 1 : 0);
        out.cell(max2(r.prop2.x_literal_residual)).cell(max2(r.prop2.x_residual));
        out.cell(max2(r.prop2.y_literal_residual)).cell(max2(r.prop2.y_residual));
        out.cell(max2(r.prop2.x_literal_r1_residual)).cell(max2(r.prop2.y_literal_r2_residual));
        out.cell(r.prop2.literal_pass ? 1 : 0).cell(r.prop2.corrected_pass ? 1 : 0);
        out.cell(r.prop3.projection[0]).cell(r.prop3.projection[1]).cell(r.prop3.q[0]).cell(r.prop3.q[1]);
        out.cell(max2(r.prop3.residual_linear)).cell(max2(r.prop3.residual_sqrt));
        out.cell(r.prop3.fitted_exponent[0]).cell(r.prop3.fitted_exponent[1]).cell(r.prop3.best_exponent);
        out.cell(r.prop3.pass ? 1 : 0);
        out.cell(static_cast<long>(r.audit.precision_squared_kernel_dim));
        out.cell(r.audit.r1_minus_identity_min_sv).cell(r.audit.r2_minus_identity_min_sv);
        out.cell(r.audit.collinearity_angle).cell(r.flags);
        out.end_row();
    }
}

}  // namespace mvdfl
