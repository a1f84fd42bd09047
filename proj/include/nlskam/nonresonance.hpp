#pragma once

#include <Eigen/Dense>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlskam/lattice.hpp"

namespace nlskam {

/// Potential coefficients w_a, stored in the config's tangential and normal orders.
struct ParameterPoint {
    std::vector<double> tangential;
    std::vector<double> normal;
};

ParameterPoint sample_parameters(const LatticeConfig& cfg, double lo, double hi, std::mt19937_64& rng);

/// h = ⟨ω, r⟩ + Σ (Ω + H)_ab u_a v_b with H Hermitian and block-diagonal.
struct QuadraticForm {
    ConfigPtr config;
    Eigen::VectorXd omega;
    Eigen::VectorXd Omega;
    Eigen::MatrixXcd H;

    Eigen::MatrixXcd normal_matrix() const;
};

/// ω_a = |a|² + w_a on A, Ω_a = |a|² + w_a on L, H = 0.
QuadraticForm frequencies(ConfigPtr cfg, const ParameterPoint& w);

/// Eigen-decomposition of each Hermitian block of Ω + H.
struct BlockEigen {
    std::vector<Eigen::VectorXd> values;
    std::vector<Eigen::MatrixXcd> vectors;
};

BlockEigen block_eigensystems(const QuadraticForm& q, const BlockDecomposition& dec, double tol = 1e-10);
std::vector<std::vector<double>> block_spectra(const QuadraticForm& q, const BlockDecomposition& dec);

struct MelnikovViolation {
    std::vector<int> k;
    std::vector<int> l;  // low-mode index (normal-form checks only)
    std::string kind;    // sd1 .. sd4
    int block_a = -1;
    int block_b = -1;
    double value = 0.0;
    double threshold = 0.0;
};

struct MelnikovReport {
    bool passed = true;
    double worst_margin = std::numeric_limits<double>::infinity();
    long tested = 0;
    long n_violations = 0;
    std::vector<MelnikovViolation> violations;
    std::string threshold_mode = "literal";
    double literal_log10_threshold = 0.0;
};

struct MelnikovOptions {
    /// Test a divisor only when the corresponding monomial can carry zero momentum.
    bool momentum_filter = false;
    bool stop_at_first = false;
    std::size_t max_recorded = 256;
};

/// All k ∈ Z^n with |k|₁ ≤ radius in a fixed order.
std::vector<std::vector<int>> enumerate_fourier(int n, int radius, bool include_zero);

MelnikovReport check_melnikov_kam(const QuadraticForm& q, const BlockDecomposition& dec, double kappa,
                                  double delta_prime, const MelnikovOptions& opt = {});

/// Low-mode data for the normal-form conditions: B = {|a| ≤ N}.
struct LowModes {
    std::vector<int> sites;      // normal indices in B
    Eigen::VectorXd lambda;      // λ̃_a for a ∈ B
    std::vector<int> high_blocks;
};

/// Requires H to be diagonal on B.
LowModes low_modes(const QuadraticForm& q, const BlockDecomposition& dec, double N, double tol = 1e-12);

struct NfThresholds {
    double kappa_t = 0.5;
    double delta_t = 4.0;
    int M = 2;
    double N = 2.0;
    int d = 1;
    double c0 = 0.05;  // enforced exponent c0 (|l|+4)² in place of (4d)^{4d} (|l|+4)²
};

/// κ̃ / (4^M N^{c0 (|l|+4)²}).
double nf_threshold(const NfThresholds& t, int l_norm);
/// log10 of κ̃ / (4^M N^{(4d)^{4d} (|l|+4)²}).
double nf_literal_log10_threshold(const NfThresholds& t, int l_norm);

MelnikovReport check_melnikov_nf(const QuadraticForm& q, const BlockDecomposition& dec, const LowModes& low,
                                 const NfThresholds& t, const MelnikovOptions& opt = {});

struct MeasureEstimate {
    double kappa = 0.0;
    double delta_prime = 0.0;
    double fraction = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_samples = 0;
    int n_excluded = 0;
    unsigned long seed = 0;
};

/// Wilson 95% interval for a binomial proportion.
std::pair<double, double> wilson_interval(int successes, int n, double z = 1.959963984540054);

MeasureEstimate estimate_excluded_measure(ConfigPtr cfg, double delta, double kappa, double delta_prime, int n_samples,
                                          double box_lo, double box_hi, unsigned long seed,
                                          const MelnikovOptions& opt = {});

struct AssumptionConstants {
    double c1 = 1.0, c2 = 1.0, c3 = 0.5, c4 = 1.0, c5 = 1.0;
};

struct AssumptionCheck {
    std::string name;
    double value = 0.0;  // measured quantity
    double bound = 0.0;
    bool holds = true;
};

/// Measured (as3)–(as9)-type quantities. dH_norm is ‖∂_w H‖ supplied by the caller.
std::vector<AssumptionCheck> check_assumptions(const QuadraticForm& q, const AssumptionConstants& c, double dH_norm,
                                               double Lambda, double gamma);

nlohmann::json to_json(const MelnikovReport& r);
nlohmann::json to_json(const std::vector<AssumptionCheck>& checks);

}  // namespace nlskam
