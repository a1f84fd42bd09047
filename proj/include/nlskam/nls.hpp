#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlskam/kam.hpp"

namespace nlskam {

/// i u_t = −Δu + V ⋆ u + ε F′(|u|²) u on the retained box.
struct NlsModel {
    int dim = 1;
    std::vector<Site> tangential{{1}};
    int lattice_cutoff = 8;
    std::map<Site, double> V_hat;       // missing sites have V̂ = 0
    std::vector<double> F_taylor{0.0, 0.0, 1.0};  // F(y) = Σ F_n yⁿ
    double eps = 1e-3;
    std::vector<double> q{1.0};         // torus actions, one per tangential site
    int degree_cutoff = 5;

    void validate() const;
    ConfigPtr config() const;
    double potential(const Site& a) const;
};

/// Sets V̂ from a parameter point given in the config's tangential and normal orders.
NlsModel with_potential(NlsModel model, const LatticeConfig& cfg, const ParameterPoint& w);

/// Hamiltonian in Cartesian complex coordinates over every retained site (no action-angle split).
struct CartesianModel {
    ConfigPtr config;  // all sites normal
    Eigen::VectorXd lambda;  // |a|² + V̂(a)
    Polynomial nonlinear;    // ε ∫ F(|u|²)
    Polynomial hamiltonian() const;
};

CartesianModel nls_cartesian(const NlsModel& model);

struct NlsHamiltonian {
    QuadraticForm q;
    Polynomial f;
};

/// Action-angle form on A (u_a = √(r_a+q_a) e^{−iφ_a}), Taylor-expanded in r to the degree cutoff.
NlsHamiltonian build_nls_hamiltonian(const NlsModel& model, const ConfigPtr& cfg);

/// Cartesian amplitudes u_a, ordered as the Cartesian config's sites.
using Field = Eigen::VectorXcd;

/// Converts an action-angle state over cfg to the Cartesian field.
Field to_field(const NlsModel& model, const CartesianModel& cart, const ConfigPtr& cfg, const PhaseState& z);

enum class Scheme { implicit_midpoint, split_step };
Scheme parse_scheme(const std::string& s);
std::string to_string(Scheme s);

/// Equations u̇_a = −i ∂H/∂v_a for H = Σ λ_a u_a v_a + N(u, ū), with N compiled for fast evaluation.
class NlsFlow {
public:
    NlsFlow(const Eigen::VectorXd& lambda, const Polynomial& nonlinear);

    /// −i ∂N/∂v at v = ū.
    Field nonlinear_field(const Field& u) const;
    double energy(const Field& u) const;
    /// One step; throws std::runtime_error when the implicit solve does not converge.
    Field step(const Field& u, double dt, Scheme scheme) const;

    double tol = 1e-14;
    int max_iter = 60;

private:
    struct Term {
        cplx coeff;
        std::vector<std::pair<int, int>> u;  // (site, exponent)
        std::vector<std::pair<int, int>> v;
    };
    Eigen::VectorXd lambda_;
    std::vector<Term> energy_terms_;
    std::vector<std::vector<Term>> field_terms_;
    Field implicit_midpoint(const Field& u, double dt, bool include_linear) const;
    static cplx eval(const Term& t, const Field& u);
};

struct Trajectory {
    std::vector<double> t;
    std::vector<Field> z;
    double energy_drift = 0.0;
    long steps = 0;
};

/// Integrates to t_end, recording states at the requested sample times (rounded to the step grid).
Trajectory integrate(const NlsFlow& flow, const Field& z0, double dt, double t_end, Scheme scheme,
                     const std::vector<double>& sample_times);

/// ⟨a⟩ = max(|a|, 1) weighted distance from a field to the torus {|u_a|² = q_a on A, u = 0 on L}.
double torus_distance(const Field& u, const CartesianModel& cart, const NlsModel& model, double p);

/// Σ a |u_a|², conserved by zero-momentum Hamiltonians.
std::vector<double> field_momentum(const Field& u, const CartesianModel& cart);

struct StabilityOptions {
    double delta = 0.05;
    int M = 2;
    double p = 4.0;
    double dt = 0.02;
    Scheme scheme = Scheme::split_step;
    unsigned seed = 1;
    int n_samples = 200;
    /// Concentrate the perturbation on this site instead of a random direction.
    std::optional<Site> pure_mode;
    double phase0 = 0.0;  // initial torus angle
};

struct StabilityReport {
    double delta = 0.0;
    int M = 0;
    double horizon = 0.0;
    unsigned seed = 0;
    std::string mode;  // "pipeline" or "direct"
    std::vector<std::pair<double, double>> samples;  // (t, distance)
    double initial_distance = 0.0;
    double max_distance = 0.0;
    double torus_offset = 0.0;  // distance of the constructed torus point from the reference torus
    double energy_drift = 0.0;
    double momentum_drift = 0.0;
    long steps = 0;
    bool pass = false;
};

/// Seeds a state at distance δ from the torus (mapped through the KAM generators when given) and integrates
/// the truncated flow to t = δ^{−M}.
StabilityReport stability_experiment(const NlsModel& model, const StabilityOptions& opt,
                                     const std::vector<Polynomial>* kam_generators);

std::string stability_csv_header();
std::string stability_csv_rows(const StabilityReport& r);
nlohmann::json to_json(const StabilityReport& r);

}  // namespace nlskam
