#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlskam/homological.hpp"
#include "nlskam/norms.hpp"

namespace nlskam {

/// User-level inputs of the iteration schedule.
struct ScheduleOptions {
    double epsilon = 1e-3;
    double rho = 0.5;
    double sigma = 0.5;  // μ = σ²
    double gamma = 1.0;
    double p = 4.0;
    double delta = 1.0;  // Δ₀
    /// Replaces the literal κ_m = ε_m^{1/400} when set.
    std::optional<double> kappa;
    double delta_cap = 4.0;
    double delta_prime_cap = 8.0;
    /// Replaces n = ⌊log 1/ε⌋ when set.
    std::optional<int> n_inner;
    int m_max = 3;
    double lambda_const = 1.0;
    double lambda0 = 1.0;
    int degree_cutoff = 5;
    int lie_order_cap = 12;
    bool momentum_filter = true;
    double underflow = 1e-13;
    std::size_t term_budget = 5'000'000;
};

/// Parameters of outer round m together with its inner ladders.
struct RoundSchedule {
    int m = 0;
    double eps = 0.0;        // ε_m
    double eps_next = 0.0;   // ε_{m+1}
    double theta = 0.0;      // ϑ_m
    double rho = 0.0, sigma = 0.0, mu = 0.0, gamma = 0.0;
    double rho_next = 0.0, sigma_next = 0.0, gamma_next = 0.0;
    double Delta = 0.0, Delta_literal = 0.0;
    double delta_prime = 0.0, delta_prime_literal = 0.0;
    double block_diameter = 0.0;
    double Lambda = 0.0;
    double kappa = 0.0, kappa_literal = 0.0;
    double p = 4.0;
    int n_inner = 1;
    std::vector<double> eps_inner;  // ε_j, j = 0..n

    DomainParams domain(int j) const;
};

std::vector<RoundSchedule> make_schedule(const ScheduleOptions& opt, const ConfigPtr& cfg);
double outer_epsilon(double eps_prev);

struct KamState {
    QuadraticForm q;
    Polynomial f;
    cplx energy = 0.0;  // accumulated constants a₁
};

struct StepDiagnostics {
    int round = 0;
    int step = 0;
    double low_before = 0.0;
    double low_after = 0.0;
    double high_after = 0.0;
    double divisor_margin = 0.0;
    double omega_shift = 0.0;
    double H_shift = 0.0;
    double residual = 0.0;
    double conjugacy = 0.0;
    double lie_tail = 0.0;
    double growth = 0.0;  // low_after / low_before
    double wall_time = 0.0;
    std::size_t n_terms = 0;
};

struct StepResult {
    KamState state;
    Polynomial generator;
    StepDiagnostics diag;
};

/// One Kolmogorov step: solve, transform by the time-one map of s, absorb h₁ into the quadratic part.
StepResult kam_inner_step(const KamState& state, const RoundSchedule& round, int j, const BlockDecomposition& dec,
                          const ScheduleOptions& opt);

struct RoundReport {
    int m = 0;
    double eps = 0.0;
    double eps_next = 0.0;
    double low_start = 0.0;
    double low_end = 0.0;
    double kappa = 0.0;
    double Delta = 0.0;
    double delta_prime = 0.0;
    double melnikov_margin = 0.0;
    long melnikov_tested = 0;
    int steps_run = 0;
};

struct KamResult {
    QuadraticForm q0;
    QuadraticForm q_inf;
    Polynomial f_inf;
    cplx energy = 0.0;
    std::vector<Polynomial> generators;
    std::vector<StepDiagnostics> steps;
    std::vector<RoundReport> rounds;
    std::vector<RoundSchedule> schedule;
    double final_block_delta = 0.0;

    Eigen::VectorXd omega_shift() const;
    double H_shift() const;
};

/// Runs m_max outer rounds. Throws ParameterExcluded when a round's conditions fail and ContractionFailure when
/// the first step does not shrink the low jet.
KamResult kam_outer_iterate(const QuadraticForm& q, const Polynomial& f, const ScheduleOptions& opt);

/// Image of a point of the final coordinates under the composed transformation, by integrating each generator's
/// flow for unit time (last generator first).
PhaseState kam_point_map(const KamResult& r, const PhaseState& z, int substeps = 64);
PhaseState kam_point_map(const std::vector<Polynomial>& generators, const PhaseState& z, int substeps = 64);

/// Time-one flow of the Hamiltonian vector field of s by classical Runge–Kutta.
PhaseState hamiltonian_flow(const Polynomial& s, const PhaseState& z, double t, int substeps);

/// max over sample points near the torus of |before(Φ(z)) − after(z) − shift|, Φ the time-one flow of s by RK4.
/// Points have angles uniform on the torus, actions of size radius² and normal coordinates of size radius.
double pointwise_conjugacy(const Polynomial& before, const Polynomial& after, cplx shift, const Polynomial& s,
                           unsigned seed, double radius = 1e-2, int n_points = 3, int substeps = 64);

std::string kam_diagnostics_csv_header();
std::string kam_diagnostics_csv_row(const StepDiagnostics& d, bool with_timing);

nlohmann::json to_json(const RoundSchedule& r);
nlohmann::json to_json(const KamResult& r);

/// Low-mode radius, threshold constant and Fourier cutoff of the normal form, chosen from δ.
struct NfParameters {
    double N = 0.0;
    double kappa_t = 0.0;
    double delta_t = 0.0;
    double delta_t_literal = 0.0;
    double tail_bound = 0.0;   // δ^{M+1}
    double consistency = 0.0;  // N^{p−1} δ^{M+1}
};

NfParameters choose_nf_parameters(double delta, int M, double p, int d, double rho, double gamma_m,
                                  double delta_t_cap = std::numeric_limits<double>::infinity());

struct NfOptions {
    int M = 2;
    NfThresholds thresholds;
    int degree_cutoff = -1;  // M + 3 when negative
    std::size_t term_budget = 5'000'000;
    int lie_order_cap = 12;
};

struct NfLayerDiagnostics {
    int j0 = 0;
    std::size_t n_top = 0;
    std::size_t n_generator = 0;
    std::size_t n_terms = 0;
    double residual = 0.0;
    double divisor_margin = 0.0;
    double conjugacy = 0.0;
    double lie_tail = 0.0;
    double zhat_max = 0.0;
};

struct NormalFormResult {
    Polynomial Z;
    Polynomial P;
    Polynomial R;
    Polynomial Q;
    Polynomial transformed;
    std::vector<Polynomial> generators;
    std::vector<int> low_sites;
    Eigen::VectorXd lambda_t;
    NfThresholds thresholds;
    std::vector<NfLayerDiagnostics> layers;
    double nonresonant_max = 0.0;  // over degree ≤ M+2, ≤ 2 high factors, in band
    double unmodeled_tail = 0.0;
    int M = 2;
    int degree_cutoff = 5;
};

/// Signature test for resonant monomials: k = 0, β = υ on low sites, high part empty or ǔ_a v̌_b with |a| = |b|.
bool is_nf_resonant(const Key& key, const std::vector<bool>& is_low, const LatticeConfig& cfg);
int high_factor_count(const Key& key, const std::vector<bool>& is_low);

/// Normalizes the layers j₀ + 1 = 3 .. M + 2 of h + f, where h = ⟨ω,r⟩ + Σ (Ω+H) u v. Throws SmallDivisorError or
/// DegreeOverflow.
NormalFormResult partial_normal_form(const QuadraticForm& q, const Polynomial& f, const BlockDecomposition& dec,
                                     const NfOptions& opt);

nlohmann::json to_json(const NfParameters& p);
nlohmann::json to_json(const NormalFormResult& r);

}  // namespace nlskam
