#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <memory>

#include "nlskam/errors.hpp"
#include "nlskam/nonresonance.hpp"
#include "nlskam/polynomial.hpp"

namespace nlskam {

/// Solves λX + AX + sign·XB = RHS for Hermitian A, B by double eigen-decomposition.
/// Entries whose projected right-hand side vanishes never see their divisor; the others must
/// satisfy |λ + α_i + sign·β_j| ≥ kappa.
Eigen::MatrixXcd sylvester_block_solve(cplx lambda, const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& B,
                                       const Eigen::MatrixXcd& rhs, int sign, double kappa = 0.0);

/// Generic graded solver for {h, S} = R − Z with h = ⟨ω, r⟩ + Σ_B λ̃_a u_a v_a + ⟨ǔ, A v̌⟩, where
/// B are the low sites and A = Ω + H acts block-diagonally on the remaining (high) sites.
/// Z collects the resonant terms of R: k = 0 and β = υ on low sites, with either no high factor
/// or a pair ǔ_a v̌_b with |a| = |b|.
class GradedSolver {
public:
    GradedSolver(const QuadraticForm& q, const BlockDecomposition& dec, std::vector<int> low_sites,
                 Eigen::VectorXd low_lambda, std::function<double(int)> threshold);

    struct Result {
        Polynomial S;
        Polynomial Z;
        double divisor_margin = std::numeric_limits<double>::infinity();
    };

    /// Throws invalid_argument for terms with more than two high factors.
    Result solve(const Polynomial& R) const;

    /// h as a polynomial.
    Polynomial hamiltonian() const;

private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

struct HomologicalSolution {
    Polynomial s;
    Polynomial h1;             // resonant remainder a₁ + ⟨χ₁, r⟩ + Σ H₁ u v
    cplx a1 = 0.0;
    Eigen::VectorXcd chi1;
    Eigen::MatrixXcd H1;
    double residual = 0.0;
    double divisor_margin = std::numeric_limits<double>::infinity();
};

/// Kolmogorov-type step: {h, s} + T f_low + T {f_high, s}^low = h₁ with T the Fourier/band truncation at Δ′.
HomologicalSolution solve_kam_homological(const QuadraticForm& q, const Polynomial& f_low, const Polynomial& f_high,
                                          const BlockDecomposition& dec, double delta_prime, double kappa);

/// Quadratic part ⟨ω, r⟩ + Σ (Ω + H)_ab u_a v_b as a polynomial.
Polynomial quadratic_hamiltonian(const QuadraticForm& q, int degree_cutoff = kNoCutoff);

struct NfGeneratorStep {
    int j0 = 0;
    Polynomial F;
    Polynomial Zhat;
    double residual = 0.0;
    double divisor_margin = std::numeric_limits<double>::infinity();
};

/// Keeps |k| ≤ Δ̃ and, for pairs ǔ_a v̌_b, |a − b| ≤ Δ̃.
Polynomial truncate_nf(const Polynomial& P, const std::vector<bool>& is_low, double delta_t);

/// Order-j₀ step {h, F} = −T P_top + Ẑ on the layer P_top.
NfGeneratorStep solve_nf_homological(const QuadraticForm& q, const LowModes& low, const Polynomial& P_top,
                                     const BlockDecomposition& dec, const NfThresholds& t, int j0);

}  // namespace nlskam
