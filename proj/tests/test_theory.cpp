#include <doctest.h>

#include "mvdfl/theory.hpp"
#include "test_util.hpp"

using namespace mvdfl;

namespace {

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

GmvpOptions no_ridge() {
    GmvpOptions o;
    o.ridge = 0.0;
    return o;
}

}  // namespace

TEST_SUITE("theory") {
    TEST_CASE("scalar diagnostics match their definitions") {
        std::mt19937_64 rng(1);
        const Matrix s = testutil::random_spd(rng, 5);
        const auto d = compute_diagnostics(s, no_ridge());
        const Matrix p = s.inverse();
        const Vector w = p * Vector::Ones(5) / p.sum();
        CHECK((d.weights - w).norm() < 1e-12);
        CHECK(d.budget == doctest::Approx(p.sum()).epsilon(1e-12));
        CHECK(d.a == doctest::Approx(w.squaredNorm()).epsilon(1e-12));
        CHECK(d.b == doctest::Approx(w.dot(p * w)).epsilon(1e-12));
        CHECK(d.c == doctest::Approx((p * w).squaredNorm()).epsilon(1e-12));
    }

    TEST_CASE("Gram identities of the decision Jacobian") {
        std::mt19937_64 rng(2);
        for (int k = 0; k < 10; ++k) {
            const Index n = 3 + k % 4;
            const Matrix s = testutil::random_spd(rng, n);
            const auto d = compute_diagnostics(s, no_ridge());
            const Matrix j = decision_jacobian(s, no_ridge()).jacobian;
            const Matrix p2 = d.precision * d.precision;
            CHECK(rel(j * j.transpose() - d.a * p2, r1_operator(d)) < 1e-9);
            const Matrix ww = d.weights * d.weights.transpose();
            CHECK(rel(j.transpose() * j - kron(ww, p2), r2_operator(d)) < 1e-9);
        }
    }

    TEST_CASE("two-dimensional representations of the remainders") {
        std::mt19937_64 rng(3);
        for (int k = 0; k < 10; ++k) {
            const auto d = compute_diagnostics(testutil::random_spd(rng, 6), no_ridge());
            Matrix basis1(6, 2);
            basis1 << d.weights, d.precision_weights;
            CHECK(rel(r1_operator(d) * basis1, basis1 * d.r1_rep) < 1e-10);
            const Vector u = kron(d.weights, d.weights);
            const Vector v = kron(d.weights, d.precision_weights);
            Matrix basis2(36, 2);
            basis2 << v, u;
            CHECK(rel(r2_operator(d) * basis2, basis2 * d.r2_rep) < 1e-10);
            const auto c1 = characteristic_coefficients(d.r1_rep);
            const auto c2 = characteristic_coefficients(d.r2_rep);
            CHECK(std::abs(c1(0) - c2(0)) <= 1e-12 * std::abs(c1(0)));
            CHECK(std::abs(c1(1) - c2(1)) <= 1e-12 * std::abs(c1(1)));
        }
    }

    TEST_CASE("remainder eigenvalues: closed form vs dense solver, and R1 is indefinite") {
        std::mt19937_64 rng(4);
        for (int k = 0; k < 20; ++k) {
            const auto d = compute_diagnostics(testutil::random_spd(rng, 5), no_ridge());
            REQUIRE(d.real_spectrum);
            Eigen::SelfAdjointEigenSolver<Matrix> es(r1_operator(d));
            const Vector mu = es.eigenvalues();
            const double scale = mu.cwiseAbs().maxCoeff();
            CHECK(std::abs(mu(0) - d.lambda[1]) < 1e-10 * scale);
            CHECK(std::abs(mu(4) - d.lambda[0]) < 1e-10 * scale);
            // det = D^2 a^2 (b^2 - ac) <= 0 by Cauchy-Schwarz on (w, Pw).
            const double det = characteristic_coefficients(d.r1_rep)(1);
            CHECK(det == doctest::Approx(d.budget * d.budget * d.a * d.a * (d.b * d.b - d.a * d.c)).epsilon(1e-10));
            CHECK(d.lambda[0] > 0.0);
            CHECK(d.lambda[1] < 0.0);
        }
    }

    TEST_CASE("corrected vectors are remainder eigenvectors") {
        std::mt19937_64 rng(5);
        const auto row = certify(7, 5, random_theory_instance(7, 5), no_ridge());
        CHECK(row.prop1.operator_pass);
        CHECK(row.prop1.charpoly_residual < kCharPolyTolerance);
        for (int i = 0; i < 2; ++i) {
            CHECK(row.prop1.r1_residual[static_cast<std::size_t>(i)] < kEigenTolerance);
            CHECK(row.prop1.r2_residual[static_cast<std::size_t>(i)] < kEigenTolerance);
            const auto& d = row.diagnostics;
            const Matrix r1 = r1_operator(d);
            const Vector& x = d.x[static_cast<std::size_t>(i)];
            CHECK((r1 * x - d.lambda[static_cast<std::size_t>(i)] * x).norm() < 1e-9 * r1.norm() * x.norm());
        }
        (void)rng;
    }

    TEST_CASE("loss-gradient projection is linear in the true covariance") {
        std::mt19937_64 rng(7);
        const Matrix s = testutil::random_spd(rng, 5);
        const Matrix t = testutil::random_spd(rng, 5);
        const auto d = compute_diagnostics(s, no_ridge());
        const auto jac = decision_jacobian(s, no_ridge());
        const auto base = verify_prop3(d, jac, t);
        const auto scaled = verify_prop3(d, jac, 3.0 * t);
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(scaled.projection[k] == doctest::Approx(3.0 * base.projection[k]).epsilon(1e-12));
            CHECK(scaled.q[k] == doctest::Approx(3.0 * base.q[k]).epsilon(1e-12));
        }
        // The negative eigenvalue has no square root; only the linear candidate is scored.
        CHECK(std::isfinite(base.residual_sqrt[0]));
        CHECK(std::isnan(base.residual_sqrt[1]));
        CHECK(std::isfinite(base.residual_linear[1]));
        CHECK_FALSE(base.degenerate);
    }

    TEST_CASE("identity estimate is flagged degenerate") {
        TheoryInstance inst{Matrix::Identity(4, 4), Matrix::Identity(4, 4)};
        const auto row = certify(0, 4, inst, no_ridge());
        CHECK(row.audit.collinear);
        CHECK(row.audit.collinearity_angle < kCollinearAngle);
        CHECK(row.flags.find("collinear") != std::string::npos);
        CHECK(row.prop1.degenerate);
    }

    TEST_CASE("assumption audit on positive definite estimates") {
        std::mt19937_64 rng(6);
        const auto d = compute_diagnostics(testutil::random_spd(rng, 5), no_ridge());
        const auto audit = assumption_audit(d);
        CHECK(audit.precision_squared_kernel_dim == 0);
        CHECK_FALSE(audit.kernel_assumption_holds);
        CHECK_FALSE(audit.collinear);
        CHECK(audit.collinearity_angle > 1e-3);
    }

    TEST_CASE("certification is seeded and the report has one row per instance") {
        const auto a = run_certification(3, {4, 6}, 11);
        const auto b = run_certification(3, {4, 6}, 11);
        REQUIRE(a.size() == 6);
        CHECK(a[0].n_assets == 4);
        CHECK(a[5].n_assets == 6);
        CHECK(theory_instance_seed(11, 4, 0) != theory_instance_seed(11, 4, 1));
        CHECK(theory_instance_seed(11, 4, 0) != theory_instance_seed(11, 6, 0));
        const auto dir = testutil::scratch_dir("theory");
        write_theory_report_csv(a, dir / "a.csv");
        write_theory_report_csv(b, dir / "b.csv");
        const std::string text = testutil::slurp(dir / "a.csv");
        CHECK(text == testutil::slurp(dir / "b.csv"));
        CHECK(std::count(text.begin(), text.end(), '\n') == 7);
        CHECK(text.rfind("seed,n_assets,", 0) == 0);
    }
}
