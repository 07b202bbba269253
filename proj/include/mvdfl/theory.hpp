#pragma once

/**
 * @file theory.hpp
 * @brief Numerical certification of the spectral structure of the GMVP
 * decision Jacobian J = dw/dS.
 *
 * With w the GMVP weights, P = S^-1, D = 1'P1, a = w'w, b = w'Pw,
 * c = w'P^2 w:
 *
 *     J J' = a P^2 + R1,   R1 = D^2 a^2 ww' - D a (Pw w' + w w'P)
 *     J'J  = (ww') kron P^2 + R2
 *
 * R1 acts on span{w, Pw} with matrix [[D^2a^3-Dab, D^2a^2b-Dac], [-Da^2, -Dab]]
 * and R2 acts on span{w kron Pw, w kron w} with
 * [[-Dab, -Da^2], [D^2a^2b-Dac, D^2a^3-Dab]]. Both share trace and determinant.
 *
 * Each claim is measured twice where the closed-form statement admits two
 * readings: the literal expression and the one re-derived from the 2x2
 * representation. Nothing here asserts; every check becomes a report field.
 */

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvdfl/gmvp.hpp"

namespace mvdfl {

struct SpectralDiagnostics {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double budget = 0.0;  // D
    Vector weights;
    Vector precision_weights;  // P w
    Matrix precision;
    Eigen::Matrix2d r1_rep;
    Eigen::Matrix2d r2_rep;
    bool real_spectrum = true;
    std::array<double, 2> lambda{};
    /// (lambda - (D^2a^3 - Dab)) / (D^2a^2b - Dac), from the first row of r1_rep.
    std::array<double, 2> coefficient{};
    /// Same numerator over D^2a^2b - ac, as printed in the closed-form statement.
    std::array<double, 2> coefficient_literal{};
    std::array<Vector, 2> x;          // w + coefficient * Pw
    std::array<Vector, 2> x_literal;  // w + coefficient_literal * Pw
    std::array<Vector, 2> y;          // w kron x = (w kron w) + coefficient (w kron Pw)
    std::array<Vector, 2> y_literal;  // (w kron Pw) + coefficient_literal (w kron w)
    std::array<double, 2> q{};        // lambda * F'x (filled when S_true is supplied)
    double denominator = 0.0;         // D^2a^2b - Dac
    double denominator_literal = 0.0; // D^2a^2b - ac
};

/// Trace and determinant of a 2x2 matrix (characteristic polynomial
/// lambda^2 - trace lambda + det).
Eigen::Vector2d characteristic_coefficients(const Eigen::Matrix2d& m);

SpectralDiagnostics compute_diagnostics(const Matrix& sigma_hat, const GmvpOptions& opts = {});

/// Explicit R1 (N x N) and R2 (N^2 x N^2) operators.
Matrix r1_operator(const SpectralDiagnostics& d);
Matrix r2_operator(const SpectralDiagnostics& d);

struct Prop1Result {
    double charpoly_residual = 0.0;            // max relative coefficient gap, R1 vs R2
    std::array<double, 2> r1_residual{};       // ||R1 x - lambda x|| / (||R1|| ||x||)
    std::array<double, 2> r2_residual{};       // ||R2 y - lambda y|| / (||R2|| ||y||)
    std::array<double, 2> jjt_spectrum_gap{};  // min |mu - lambda| / max |mu| over eig(JJ')
    std::array<double, 2> jtj_spectrum_gap{};
    std::array<double, 2> jjt_residual{};      // ||JJ'x - lambda x|| / (||JJ'|| ||x||)
    std::array<double, 2> jtj_residual{};
    bool degenerate = false;
    bool operator_pass = false;  // R1/R2 eigen identities and char-poly identity
    bool pass = false;           // eigenvalues in spectra of JJ' and J'J, invariant directions
};

struct Prop2Result {
    std::array<double, 2> x_literal_residual{};  // vs JJ'
    std::array<double, 2> x_residual{};
    std::array<double, 2> y_literal_residual{};  // vs J'J
    std::array<double, 2> y_residual{};
    std::array<double, 2> x_literal_r1_residual{};  // vs R1 only
    std::array<double, 2> y_literal_r2_residual{};
    bool degenerate = false;
    bool literal_pass = false;
    bool corrected_pass = false;
    bool pass = false;  // x, y invariant under JJ', J'J
};

struct Prop3Result {
    std::array<double, 2> projection{};       // (F J) . y_hat
    std::array<double, 2> f_dot_x{};          // F' x_hat
    std::array<double, 2> q{};                // lambda * F'x (unnormalized x)
    std::array<double, 2> residual_linear{};  // vs lambda * F'x_hat
    std::array<double, 2> residual_sqrt{};    // vs sqrt(lambda) * F'x_hat; NaN when lambda < 0
    std::array<double, 2> fitted_exponent{};  // log(|proj| / |F'x_hat|) / log|lambda|
    double best_exponent = 1.0;               // 1 or 0.5, whichever fits better
    bool degenerate = false;
    bool pass = false;
};

struct AssumptionAudit {
    Index precision_squared_kernel_dim = 0;
    bool kernel_assumption_holds = false;
    double r1_minus_identity_min_sv = 0.0;
    double r2_minus_identity_min_sv = 0.0;
    double collinearity_angle = 0.0;  // radians between w and Pw
    bool collinear = false;
};

inline constexpr double kEigenTolerance = 1e-8;
inline constexpr double kCharPolyTolerance = 1e-10;
inline constexpr double kProjectionTolerance = 1e-6;
inline constexpr double kCollinearAngle = 1e-6;
inline constexpr double kDenominatorTolerance = 1e-12;

Prop1Result verify_prop1(const SpectralDiagnostics& d, const DecisionJacobian& jac);
Prop2Result verify_prop2(const SpectralDiagnostics& d, const DecisionJacobian& jac);
Prop3Result verify_prop3(const SpectralDiagnostics& d, const DecisionJacobian& jac, const Matrix& sigma_true);
AssumptionAudit assumption_audit(const SpectralDiagnostics& d);

struct CertificationRow {
    std::uint64_t seed = 0;
    Index n_assets = 0;
    SpectralDiagnostics diagnostics;
    Prop1Result prop1;
    Prop2Result prop2;
    Prop3Result prop3;
    AssumptionAudit audit;
    std::string flags;
};

struct TheoryInstance {
    Matrix sigma_hat;
    Matrix sigma_true;
};

/// Well-conditioned SPD pair: A A'/N + I/2 for independent Gaussian A.
TheoryInstance random_theory_instance(std::uint64_t seed, Index n_assets);

CertificationRow certify(std::uint64_t seed, Index n_assets, const TheoryInstance& instance,
                         const GmvpOptions& opts = {});
CertificationRow certify(std::uint64_t seed, Index n_assets);

/// Per-instance seed for (base seed, N, instance index).
std::uint64_t theory_instance_seed(std::uint64_t base_seed, Index n_assets, Index instance);

std::vector<CertificationRow> run_certification(Index n_instances, const std::vector<Index>& n_assets_list,
                                                std::uint64_t base_seed);

void write_theory_report_csv(const std::vector<CertificationRow>& rows, const std::filesystem::path& path);

}  // namespace mvdfl
