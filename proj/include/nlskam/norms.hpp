#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlskam/polynomial.hpp"

namespace nlskam {

struct DomainParams {
    double rho = 0.5;
    double mu = 0.25;
    double sigma = 0.5;
    double gamma = 0.0;
    double p = 4.0;
};

/// ⟨a⟩ = max(|a|, 1).
double bracket_weight(const Site& a);

/// Lattice matrix A: L×L → gl(2,C) in real normal coordinates (ξ_a, η_a), stored sparsely.
struct LatticeMatrix {
    ConfigPtr config;
    std::map<std::pair<int, int>, Eigen::Matrix2cd> entries;

    explicit LatticeMatrix(ConfigPtr cfg) : config(std::move(cfg)) {}
    Eigen::Matrix2cd at(int a, int b) const;
    void set(int a, int b, const Eigen::Matrix2cd& m);
};

/// π[[a,b],[c,d]] = ½[[a+d, b−c],[c−b, a+d]].
Eigen::Matrix2cd pi_part(const Eigen::Matrix2cd& m);

/// Real quadratic form ½⟨ζ, Aζ⟩ ↔ the k = 0, α = 0, degree-2 normal part of a complex-coordinate polynomial.
LatticeMatrix quadratic_to_matrix(const Polynomial& f);
Polynomial matrix_to_quadratic(const LatticeMatrix& A, int degree_cutoff = kNoCutoff);

/// Σ H_ab u_a v_b as a lattice matrix.
LatticeMatrix hermitian_to_matrix(const Eigen::MatrixXcd& H, ConfigPtr cfg);

double matrix_gamma_norm(const LatticeMatrix& A, double gamma);
LatticeMatrix band_truncate(const LatticeMatrix& A, double delta);

struct LipschitzReport {
    double value = 0.0;
    double gamma_norm = 0.0;
    double plus_sector = 0.0;
    double minus_sector = 0.0;
    bool inconclusive = true;
    int directions_probed = 0;
    int domain_points = 0;
};

LipschitzReport lipschitz_seminorm(const LatticeMatrix& A, double Lambda, double gamma, int probe_shift);

/// Per-layer breakdown of the p-tame vector-field norm.
struct PtameLayer {
    int h = 0;
    double action_part = 0.0;  // |||f_r|||
    double angle_part = 0.0;   // |||f_φ|||
    double normal_part = 0.0;  // max(p-tame, 1-tame) σ^{h−1}
    double total = 0.0;
};

struct PtameReport {
    double value = 0.0;
    std::vector<PtameLayer> layers;
};

struct NormOptions {
    int restarts = 20;
    int iterations = 60;
    unsigned seed = 12345;
};

PtameReport ptame_vfield_report(const Polynomial& f, const DomainParams& dom, const NormOptions& opt = {});
double ptame_vfield_norm(const Polynomial& f, const DomainParams& dom, const NormOptions& opt = {});

/// Same norm with the parameter-derivative terms added: ∂_{w_a} coefficients by forward differences of family(w).
double ptame_vfield_norm(const std::function<Polynomial(const std::vector<double>&)>& family,
                         const std::vector<double>& w, const DomainParams& dom, double step = 1e-6,
                         const NormOptions& opt = {});

struct WeightedReport {
    double value = 0.0;
    double ptame = 0.0;
    bool consistent = true;
    PhasePoint witness;
};

/// Sampled supremum over D(ρ,μ,σ) of |f_r| + |f_φ|/μ + ‖f_ζ‖_p/σ, compared with the p-tame norm.
WeightedReport weighted_vfield_report(const Polynomial& f, const DomainParams& dom, int samples, unsigned seed = 7);
double weighted_vfield_norm(const Polynomial& f, const DomainParams& dom, int samples, unsigned seed = 7);

struct BracketNormReport {
    double lhs = 0.0;
    double norm_f = 0.0;
    double norm_g = 0.0;
    double factor = 0.0;
    double constant = 0.0;
};

BracketNormReport bracket_norm_check(const Polynomial& f, const Polynomial& g, const DomainParams& dom, double tau,
                                     double tau_prime);

nlohmann::json to_json(const PtameReport& r, const DomainParams& dom);
nlohmann::json to_json(const BracketNormReport& r);
nlohmann::json to_json(const LipschitzReport& r);

}  // namespace nlskam
