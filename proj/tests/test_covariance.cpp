#include <doctest.h>

#include "mvdfl/covariance.hpp"
#include "mvdfl/error.hpp"
#include "test_util.hpp"

using namespace mvdfl;

namespace {

// Deterministic closed-form sample; reference intensities below were computed
// independently (scikit-learn for LW-D, a port of Ledoit and Wolf's covCor routine
// for LW-CC, and the published OAS expression) on exactly this matrix.
Matrix closed_form_sample(Index m, Index n) {
    Matrix x(m, n);
    for (Index t = 0; t < m; ++t) {
        for (Index j = 0; j < n; ++j) {
            const double dt = static_cast<double>(t), dj = static_cast<double>(j);
            x(t, j) = 0.01 * (std::sin(1.3 * dt + 0.7 * dj * dj) + 0.5 * std::cos(0.37 * dt * (dj + 1.0)) +
                              0.2 * std::sin(0.11 * dt));
        }
    }
    return x;
}

struct Reference {
    Index m, n;
    double lw_d, lw_cc, oas;
};

constexpr Reference kReferences[] = {
    {50, 10, 0.052356626749978034, 0.04624644835327458, 0.0897354921365163},
    {30, 4, 0.08248887324457899, 0.05800473856974466, 0.12381413758573859},
    {200, 6, 0.017165922936423425, 0.013185631474329657, 0.029430900698451855},
};

void check_reconstruction(const ShrinkageResult& r) {
    CHECK(r.intensity >= 0.0);
    CHECK(r.intensity <= 1.0);
    const Matrix rebuilt = r.intensity * r.target + (1.0 - r.intensity) * r.sample;
    CHECK((rebuilt - r.estimate.values).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, r.sample.cwiseAbs().maxCoeff()));
    CHECK(is_symmetric(r.estimate.values));
    CHECK(is_psd(r.estimate.values));
}

}  // namespace

TEST_SUITE("covariance") {
    TEST_CASE("sample covariance hand cases") {
        Matrix x(2, 2);
        x << 1, 0, -1, 0;
        const Matrix s = sample_cov(x).values;
        CHECK(s(0, 0) == doctest::Approx(2.0));
        CHECK(s(0, 1) == 0.0);
        CHECK(s(1, 1) == 0.0);
        const Matrix same = Matrix::Ones(5, 3);
        CHECK(sample_cov(same).values.cwiseAbs().maxCoeff() == 0.0);
        CHECK_THROWS_AS(sample_cov(Matrix::Ones(1, 3)), Error);
    }

    TEST_CASE("sample covariance matches the textbook loop and converges") {
        std::mt19937_64 rng(1);
        const Matrix x = testutil::random_normal(rng, 1000, 3);
        const Matrix s = sample_cov(x).values;
        CHECK((s - testutil::loop_cov(x)).cwiseAbs().maxCoeff() < 1e-13);
        CHECK((s - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.15);
        CHECK(s == s.transpose());
    }

    TEST_CASE("shrinkage intensities match independent references") {
        for (const auto& ref : kReferences) {
            CAPTURE(ref.m);
            const Matrix x = closed_form_sample(ref.m, ref.n);
            const auto d = lw_diagonal(x);
            const auto c = lw_constant_correlation(x);
            const auto o = oas(x);
            CHECK(testutil::rel_err(d.intensity, ref.lw_d) < 1e-9);
            CHECK(testutil::rel_err(c.intensity, ref.lw_cc) < 1e-9);
            CHECK(testutil::rel_err(o.intensity, ref.oas) < 1e-9);
            check_reconstruction(d);
            check_reconstruction(c);
            check_reconstruction(o);
        }
    }

    TEST_CASE("shrinkage targets") {
        std::mt19937_64 rng(2);
        const Matrix x = testutil::random_normal(rng, 40, 5);
        const auto d = lw_diagonal(x);
        const double mu = d.sample.trace() / 5.0;
        CHECK((d.target - mu * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-15);
        CHECK(d.target_kind == ShrinkageTarget::ScaledIdentity);

        const auto c = lw_constant_correlation(x);
        CHECK(c.target_kind == ShrinkageTarget::ConstantCorrelation);
        CHECK((c.target.diagonal() - c.sample.diagonal()).cwiseAbs().maxCoeff() == 0.0);
        // Every off-diagonal target correlation is the same number.
        const Vector sd = c.target.diagonal().array().sqrt();
        const double r01 = c.target(0, 1) / (sd(0) * sd(1));
        for (Index i = 0; i < 5; ++i)
            for (Index j = 0; j < 5; ++j)
                if (i != j) CHECK(c.target(i, j) / (sd(i) * sd(j)) == doctest::Approx(r01).epsilon(1e-12));
    }

    TEST_CASE("constant-correlation target equals the sample for N = 2") {
        std::mt19937_64 rng(3);
        const Matrix x = testutil::random_normal(rng, 30, 2);
        const auto c = lw_constant_correlation(x);
        CHECK((c.target - c.sample).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((c.estimate.values - c.sample).cwiseAbs().maxCoeff() < 1e-15);
    }

    TEST_CASE("OAS edge cases") {
        std::mt19937_64 rng(4);
        const Matrix small = testutil::random_normal(rng, 6, 6);
        CHECK(oas(small).intensity > 0.5);
        const Matrix one = testutil::random_normal(rng, 20, 1);
        const auto r = oas(one);
        CHECK(r.estimate.values(0, 0) == doctest::Approx(sample_cov(one).values(0, 0)).epsilon(1e-14));
    }

    TEST_CASE("large identity sample: every estimator near I") {
        std::mt19937_64 rng(5);
        const Matrix x = testutil::random_normal(rng, 100000, 4);
        for (const auto& r : {lw_diagonal(x), lw_constant_correlation(x), oas(x)}) {
            CHECK((r.estimate.values - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.02);
        }
        // The scaled-identity target is the truth here, so shrinkage is heavy.
        CHECK(lw_diagonal(x).intensity > 0.5);
    }

    TEST_CASE("truncated reconstruction") {
        Matrix d = Matrix::Zero(3, 3);
        d.diagonal() << 1.0, 0.5, 1e-9;
        Index dropped = -1;
        const auto out = truncated_reconstruct({d, 10}, 1e-6, &dropped);
        CHECK(dropped == 1);
        Matrix expected = Matrix::Zero(3, 3);
        expected(0, 0) = 1.0;
        expected(1, 1) = 0.5;
        CHECK((out.values - expected).cwiseAbs().maxCoeff() < 1e-15);

        const auto id = truncated_reconstruct({Matrix::Identity(4, 4), 3}, 0.5, &dropped);
        CHECK(dropped == 0);
        CHECK(id.values == Matrix::Identity(4, 4));

        std::mt19937_64 rng(6);
        const Matrix s = testutil::random_spd(rng, 6);
        CHECK((truncated_reconstruct({s, 1}, 1e-6).values - s).cwiseAbs().maxCoeff() < 1e-10);

        // Idempotent for fixed eps.
        Matrix low = testutil::random_spd(rng, 5);
        Eigen::SelfAdjointEigenSolver<Matrix> es(low);
        Vector lam = es.eigenvalues();
        lam(0) = 1e-12;
        lam(1) = 1e-11;
        low = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
        const Matrix once = truncated_reconstruct({low, 1}, 1e-6).values;
        const Matrix twice = truncated_reconstruct({once, 1}, 1e-6).values;
        CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-14);

        CHECK_THROWS_AS(truncated_reconstruct({Matrix::Zero(2, 2), 1}, 1e-6), Error);
        CHECK_THROWS_AS(truncated_reconstruct({s, 1}, 0.0), Error);
    }

    TEST_CASE("ridge inversion") {
        const auto p = invert_with_ridge({2.0 * Matrix::Identity(3, 3), 1}, 0.0);
        CHECK((p.values - 0.5 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);

        Matrix d = Matrix::Zero(2, 2);
        d(0, 0) = 1.0;
        const auto q = invert_with_ridge({d, 1}, 1e-8);
        CHECK(q.values(0, 0) == doctest::Approx(1.0 / (1.0 + 1e-8)));
        CHECK(q.values(1, 1) == doctest::Approx(1e8));
        CHECK(q.source_ridge == 1e-8);

        std::mt19937_64 rng(7);
        for (int k = 0; k < 20; ++k) {
            const Matrix s = testutil::random_spd(rng, 6);
            const double ridge = default_ridge(s);
            const auto inv = invert_with_ridge({s, 1}, ridge);
            const Matrix prod = (s + ridge * Matrix::Identity(6, 6)) * inv.values;
            CHECK((prod - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
            CHECK(inv.values == inv.values.transpose());
        }
        CHECK(default_ridge(Matrix::Identity(4, 4) * 3.0) == doctest::Approx(3e-8));
        CHECK_THROWS_AS(invert_with_ridge({Matrix::Zero(2, 2), 1}, 0.0), Error);
        CHECK_THROWS_AS(invert_with_ridge({Matrix::Identity(2, 2), 1}, -1.0), Error);
    }
}
