#pragma once

#include <complex>
#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nlskam/lattice.hpp"

namespace nlskam {

using cplx = std::complex<double>;

inline constexpr double kPruneTol = 1e-14;
inline constexpr int kNoCutoff = 1 << 20;

/// Normal variables are either z = (u, v) = C^{-1}(ξ, η) with C = (1/√2)[[1,1],[−i,i]], or the real pair (ξ, η).
/// In the real convention the u and v slots of a key hold ξ and η.
enum class Coordinates { complex, real };

enum class VarKind { phi, r, u, v };

struct Var {
    VarKind kind;
    int index;
};

/// Canonical monomial key packed as [nA, nL, k_0 .. k_{nA-1}, (code, exponent) ...], codes sorted,
/// where r_i has code i, u_j has code nA + j and v_j has code nA + nL + j.
struct Key {
    std::vector<std::int32_t> data;

    bool operator==(const Key& o) const { return data == o.data; }
    bool operator<(const Key& o) const { return data < o.data; }

    int nA() const { return data[0]; }
    int nL() const { return data[1]; }
    int k(int i) const { return data[2 + i]; }
    int n_factors() const { return (static_cast<int>(data.size()) - 2 - nA()) / 2; }
    int code(int f) const { return data[2 + nA() + 2 * f]; }
    int exponent(int f) const { return data[3 + nA() + 2 * f]; }
    Var var(int f) const;
};

struct KeyHash {
    std::size_t operator()(const Key& key) const noexcept;
};

/// Sparse monomial e^{i⟨k,φ⟩} r^α u^μ v^ν; exponent lists hold (index, exponent) pairs.
struct Monomial {
    std::vector<int> k;
    std::vector<std::pair<int, int>> alpha;
    std::vector<std::pair<int, int>> mu;
    std::vector<std::pair<int, int>> nu;
    cplx coeff{1.0, 0.0};
};

Key make_key(int nA, int nL, const Monomial& m);
Monomial to_monomial(const Key& key, cplx coeff);

int weighted_degree(const Key& key);
int normal_degree(const Key& key);
int action_degree(const Key& key);
int fourier_norm(const Key& key);
Key conjugate_key(const Key& key);

/// −Σ_A k_a a + Σ_L (μ_a − ν_a) a.
Site momentum(const Key& key, const LatticeConfig& cfg);
Site momentum(const Monomial& m, const LatticeConfig& cfg);

class Polynomial {
public:
    using Map = std::unordered_map<Key, cplx, KeyHash>;

    explicit Polynomial(ConfigPtr cfg, int degree_cutoff = kNoCutoff, Coordinates coords = Coordinates::complex);

    const ConfigPtr& config_ptr() const { return cfg_; }
    const LatticeConfig& config() const { return *cfg_; }
    int degree_cutoff() const { return cutoff_; }
    Coordinates coordinates() const { return coords_; }
    int nA() const { return cfg_->n_tangential(); }
    int nL() const { return cfg_->n_normal(); }

    /// Accumulates c into the coefficient of key; terms above the degree cutoff are discarded.
    void add(const Key& key, cplx c);
    void add(const Monomial& m);
    cplx coeff(const Key& key) const;
    cplx coeff(const Monomial& m) const;

    std::size_t size() const { return terms_.size(); }
    bool empty() const { return terms_.empty(); }
    const Map& terms() const { return terms_; }
    std::vector<std::pair<Key, cplx>> sorted_terms() const;

    void prune(double tol = kPruneTol);
    Polynomial with_cutoff(int cutoff) const;
    Polynomial empty_like() const { return Polynomial(cfg_, cutoff_, coords_); }

    /// Keeps the terms satisfying pred(key).
    template <class Pred>
    Polynomial filter(Pred&& pred) const {
        Polynomial out = empty_like();
        for (const auto& [key, c] : terms_)
            if (pred(key)) out.terms_.emplace(key, c);
        return out;
    }

    double max_abs() const;
    double l1() const;
    int max_degree() const;

    Polynomial& operator+=(const Polynomial& o);
    Polynomial& operator-=(const Polynomial& o);
    Polynomial& operator*=(cplx c);

    void check_compatible(const Polynomial& o) const;

private:
    ConfigPtr cfg_;
    int cutoff_;
    Coordinates coords_;
    Map terms_;
};

/// max |Σ cᵢ pᵢ| over coefficients, accumulated without pruning.
double combination_max_abs(std::initializer_list<std::pair<cplx, const Polynomial*>> parts);

Polynomial operator+(Polynomial a, const Polynomial& b);
Polynomial operator-(Polynomial a, const Polynomial& b);
Polynomial operator*(cplx c, Polynomial a);

/// Right action f ↦ {f, s} for a fixed s, indexed once for repeated use.
class BracketOperator {
public:
    explicit BracketOperator(const Polynomial& s);
    Polynomial apply(const Polynomial& f, int cutoff) const;

private:
    struct Entry {
        const Key* key;
        cplx coeff;
        int degree;
        int weight;
    };
    const Polynomial* s_;
    std::vector<std::vector<Entry>> by_action_, by_angle_, by_u_, by_v_;
};

/// {f,g} = Σ_A (f_φ g_r − f_r g_φ) + Σ_L (f_ξ g_η − f_η g_ξ), truncated to weighted degree ≤ cutoff.
Polynomial poisson_bracket(const Polynomial& f, const Polynomial& g, int cutoff = kNoCutoff);

Polynomial product(const Polynomial& f, const Polynomial& g, int cutoff = kNoCutoff);

struct LieResult {
    Polynomial value;
    double tail = 0.0;
    bool converged = true;
    int orders = 0;
};

/// Time-one map of the flow of s: Σ_j ad_s^j f / j! with ad_s f = {f, s}.
LieResult lie_transform(const Polynomial& f, const Polynomial& s, int cutoff, int order_cap = 12,
                        double tail_tol = 1e-10);

/// Low jet: |α| ≤ 1 and weighted degree ≤ 2. The high part is the complement.
bool is_low_key(const Key& key);
std::pair<Polynomial, Polynomial> split_low_high(const Polynomial& f);

/// Keeps |k|₁ ≤ Δ′; quadratic normal terms additionally need |a−b| ≤ Δ′ (u_a v_b) or |a+b| ≤ Δ′ (u_a u_b, v_a v_b).
bool in_fourier_band(const Key& key, const LatticeConfig& cfg, double delta_prime);
Polynomial truncate_fourier(const Polynomial& f_low, double delta_prime);

Polynomial derivative(const Polynomial& f, Var v);

Polynomial to_real(const Polynomial& f);
Polynomial to_complex(const Polynomial& f);

/// max |c(k,α,μ,ν) − conj(c(−k,α,ν,μ))|; zero for Hamiltonians that are real on real phase space.
double reality_defect(const Polynomial& f);

/// Phase point in complex normal coordinates; all entries may be complex.
struct PhasePoint {
    std::vector<cplx> phi, r, u, v;
};

/// Phase point in real normal coordinates (ξ, η), possibly complexified.
struct PhaseState {
    std::vector<cplx> phi, r, xi, eta;
};

PhasePoint to_point(const PhaseState& s);
PhaseState to_state(const PhasePoint& p);

cplx evaluate(const Polynomial& f, const PhasePoint& z);

struct Gradient {
    std::vector<cplx> phi, r, u, v;
};

/// Partial derivatives in the polynomial's own coordinates (u, v slots hold ξ, η for real polynomials).
Gradient gradient(const Polynomial& f, const PhasePoint& z);

struct Tangent {
    std::vector<cplx> phi, r, xi, eta;
};

/// X_f = (∂f/∂r, −∂f/∂φ, ∂f/∂η, −∂f/∂ξ) at a point given in (φ, r, ξ, η).
Tangent vector_field_eval(const Polynomial& f, const PhaseState& state);

nlohmann::json to_json(const Polynomial& f);
Polynomial polynomial_from_json(const nlohmann::json& j, ConfigPtr cfg);

}  // namespace nlskam
