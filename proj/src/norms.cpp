#include "nlskam/norms.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace nlskam {

namespace {

const cplx I(0.0, 1.0);

double op_norm_abs(const Eigen::Matrix2cd& m) {
    const Eigen::Matrix2d a = m.cwiseAbs();
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(a);
    return svd.singularValues()(0);
}

Eigen::Matrix2cd c_inverse() {
    const double h = 1.0 / std::sqrt(2.0);
    Eigen::Matrix2cd m;
    m << h, I * h, h, -I * h;
    return m;
}

Eigen::Matrix2cd c_matrix() {
    const double h = 1.0 / std::sqrt(2.0);
    Eigen::Matrix2cd m;
    m << h, h, -I * h, I * h;
    return m;
}

/// Homogeneous polynomial with nonnegative coefficients over the 2·nL normal variables
/// (u_j ↦ j, v_j ↦ nL + j); each monomial is a sorted variable list with multiplicity.
using NonnegPoly = std::map<std::vector<int>, double>;

std::vector<int> normal_vars(const Key& key) {
    std::vector<int> vars;
    const int nA = key.nA(), nL = key.nL();
    for (int f = 0; f < key.n_factors(); ++f) {
        const Var v = key.var(f);
        if (v.kind == VarKind::r) continue;
        const int x = v.kind == VarKind::u ? v.index : nL + v.index;
        for (int e = 0; e < key.exponent(f); ++e) vars.push_back(x);
    }
    (void)nA;
    return vars;
}

/// Σ_k |c| e^{|k|ρ} per (α, β) class, keyed by the monomial with k zeroed.
using ClassTable = std::map<Key, double>;

ClassTable class_table(const Polynomial& f, double rho) {
    ClassTable t;
    for (const auto& [key, c] : f.terms()) {
        Key cls = key;
        for (int i = 0; i < key.nA(); ++i) cls.data[2 + i] = 0;
        t[cls] += std::abs(c) * std::exp(fourier_norm(key) * rho);
    }
    return t;
}

NonnegPoly to_nonneg(const ClassTable& t, double mu) {
    NonnegPoly p;
    for (const auto& [cls, value] : t) p[normal_vars(cls)] += value * std::pow(mu, action_degree(cls));
    return p;
}

ClassTable add_parameter_sup(const ClassTable& base, const std::vector<ClassTable>& derivs) {
    ClassTable out = base;
    ClassTable sup;
    for (const auto& d : derivs)
        for (const auto& [cls, v] : d) sup[cls] = std::max(sup[cls], v);
    for (const auto& [cls, v] : sup) out[cls] += v;
    return out;
}

double weighted_l2(const Eigen::VectorXd& z, const Eigen::VectorXd& w) { return z.cwiseProduct(w).norm(); }

double poly_value(const NonnegPoly& P, const Eigen::VectorXd& z) {
    double s = 0.0;
    for (const auto& [vars, c] : P) {
        double t = c;
        for (int x : vars) t *= z(x);
        s += t;
    }
    return s;
}

Eigen::VectorXd poly_grad(const NonnegPoly& P, const Eigen::VectorXd& z) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
    for (const auto& [vars, c] : P)
        for (std::size_t i = 0; i < vars.size(); ++i) {
            double t = c;
            for (std::size_t j = 0; j < vars.size(); ++j)
                if (j != i) t *= z(vars[j]);
            g(vars[i]) += t;
        }
    return g;
}

Eigen::VectorXd random_nonneg(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = u(rng) + 1e-3;
    return z;
}

/// Largest singular value of a dense matrix.
double sigma_max(const Eigen::MatrixXd& B) {
    if (B.size() == 0) return 0.0;
    if (B.rows() <= 400 && B.cols() <= 400) {
        Eigen::BDCSVD<Eigen::MatrixXd> svd(B);
        return svd.singularValues()(0);
    }
    Eigen::VectorXd v = Eigen::VectorXd::Ones(B.cols()).normalized();
    double s = 0.0;
    for (int it = 0; it < 500; ++it) {
        Eigen::VectorXd w = B.transpose() * (B * v);
        const double n = w.norm();
        if (n == 0.0) return 0.0;
        v = w / n;
        s = (B * v).norm();
    }
    return s;
}

/// sup over ‖z‖ = 1 (weights w) of a nonnegative homogeneous form of degree h.
double scalar_form_sup(const NonnegPoly& P, int h, const Eigen::VectorXd& w, const NormOptions& opt,
                       std::mt19937_64& rng) {
    if (P.empty()) return 0.0;
    const int n = static_cast<int>(w.size());
    if (h == 0) return P.begin()->second;
    if (h == 1) {
        double s = 0.0;
        for (const auto& [vars, c] : P) s += (c / w(vars[0])) * (c / w(vars[0]));
        return std::sqrt(s);
    }
    if (h == 2) {
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
        for (const auto& [vars, c] : P) {
            if (vars[0] == vars[1]) S(vars[0], vars[0]) += c;
            else {
                S(vars[0], vars[1]) += c / 2;
                S(vars[1], vars[0]) += c / 2;
            }
        }
        const Eigen::MatrixXd B = w.cwiseInverse().asDiagonal() * S * w.cwiseInverse().asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B, Eigen::EigenvaluesOnly);
        return std::max(std::abs(es.eigenvalues()(0)), std::abs(es.eigenvalues()(n - 1)));
    }
    const Eigen::VectorXd winv2 = w.cwiseInverse().cwiseAbs2();
    double best = 0.0;
    for (int r = 0; r < opt.restarts; ++r) {
        Eigen::VectorXd z = r == 0 ? Eigen::VectorXd(w.cwiseInverse()) : random_nonneg(n, rng);
        z /= weighted_l2(z, w);
        for (int it = 0; it < opt.iterations; ++it) {
            best = std::max(best, poly_value(P, z));
            Eigen::VectorXd g = poly_grad(P, z).cwiseProduct(winv2);
            const double gn = weighted_l2(g, w);
            if (gn == 0.0) break;
            z = g / gn;
        }
        best = std::max(best, poly_value(P, z));
    }
    return best;
}

/// Symmetric multilinear evaluation support: each monomial with all orderings of its variables.
struct MultiForm {
    int deg = 0;
    // (output index, ordered variable tuple, weight already divided by deg!)
    std::vector<std::tuple<int, std::vector<int>, double>> terms;
};

MultiForm polarize(const std::vector<NonnegPoly>& G, int deg) {
    MultiForm F;
    F.deg = deg;
    double fact = 1.0;
    for (int i = 2; i <= deg; ++i) fact *= i;
    for (std::size_t x = 0; x < G.size(); ++x)
        for (const auto& [vars, c] : G[x]) {
            std::vector<int> perm = vars;
            std::sort(perm.begin(), perm.end());
            // Distinct permutations of a multiset; each ordering carries c·(multiplicity)/deg!.
            std::map<int, int> mult;
            for (int v : vars) ++mult[v];
            double rep = 1.0;
            for (auto [v, m] : mult)
                for (int i = 2; i <= m; ++i) rep *= i;
            do {
                F.terms.emplace_back(static_cast<int>(x), perm, c * rep / fact);
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
    return F;
}

Eigen::VectorXd multi_eval(const MultiForm& F, const std::vector<Eigen::VectorXd>& z, int n_out) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_out);
    for (const auto& [x, vars, c] : F.terms) {
        double t = c;
        for (int i = 0; i < F.deg; ++i) t *= z[i](vars[i]);
        out(x) += t;
    }
    return out;
}

/// Linear map z^(j) ↦ F(z^(1..deg)) with the other slots fixed.
Eigen::MatrixXd multi_slot(const MultiForm& F, const std::vector<Eigen::VectorXd>& z, int j, int n_out, int n_in) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n_out, n_in);
    for (const auto& [x, vars, c] : F.terms) {
        double t = c;
        for (int i = 0; i < F.deg; ++i)
            if (i != j) t *= z[i](vars[i]);
        L(x, vars[j]) += t;
    }
    return L;
}

/// max of the p-tame and 1-tame ratios of a nonnegative vector-valued form of degree deg.
double vector_form_sup(const std::vector<NonnegPoly>& G, int deg, const Eigen::VectorXd& wp,
                       const Eigen::VectorXd& w1, const NormOptions& opt, std::mt19937_64& rng) {
    const int n = static_cast<int>(wp.size());
    bool any = false;
    for (const auto& g : G) any = any || !g.empty();
    if (!any) return 0.0;
    if (deg == 0) {
        Eigen::VectorXd v(n);
        for (int x = 0; x < n; ++x) v(x) = G[x].empty() ? 0.0 : G[x].begin()->second;
        return std::max(weighted_l2(v, wp), weighted_l2(v, w1));
    }
    if (deg == 1) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
        for (int x = 0; x < n; ++x)
            for (const auto& [vars, c] : G[x]) M(x, vars[0]) += c;
        const double sp = sigma_max(wp.asDiagonal() * M * wp.cwiseInverse().asDiagonal());
        const double s1 = sigma_max(w1.asDiagonal() * M * w1.cwiseInverse().asDiagonal());
        return std::max(sp, s1);
    }
    const MultiForm F = polarize(G, deg);
    auto ratio_p = [&](const std::vector<Eigen::VectorXd>& z) {
        double denom = 0.0;
        for (int j = 0; j < deg; ++j) {
            double t = weighted_l2(z[j], wp);
            for (int i = 0; i < deg; ++i)
                if (i != j) t *= weighted_l2(z[i], w1);
            denom += t;
        }
        denom /= deg;
        return denom > 0 ? weighted_l2(multi_eval(F, z, n), wp) / denom : 0.0;
    };
    auto ratio_1 = [&](const std::vector<Eigen::VectorXd>& z) {
        double denom = 1.0;
        for (int i = 0; i < deg; ++i) denom *= weighted_l2(z[i], w1);
        return denom > 0 ? weighted_l2(multi_eval(F, z, n), w1) / denom : 0.0;
    };
    double best = 0.0;
    for (int which = 0; which < 2; ++which) {
        const Eigen::VectorXd& ws = which == 0 ? wp : w1;
        for (int r = 0; r < opt.restarts; ++r) {
            std::vector<Eigen::VectorXd> z(deg);
            for (int i = 0; i < deg; ++i) {
                z[i] = r == 0 ? Eigen::VectorXd(w1.cwiseInverse()) : random_nonneg(n, rng);
                z[i] /= weighted_l2(z[i], ws);
            }
            for (int sweep = 0; sweep < std::max(4, opt.iterations / 10); ++sweep) {
                for (int j = 0; j < deg; ++j) {
                    const Eigen::MatrixXd L = multi_slot(F, z, j, n, n);
                    const Eigen::MatrixXd B = ws.asDiagonal() * L * ws.cwiseInverse().asDiagonal();
                    Eigen::VectorXd y = z[j].cwiseProduct(ws);
                    for (int it = 0; it < 8; ++it) {
                        Eigen::VectorXd t = B.transpose() * (B * y);
                        const double tn = t.norm();
                        if (tn == 0.0) break;
                        y = t / tn;
                    }
                    z[j] = y.cwiseQuotient(ws);
                    best = std::max({best, ratio_p(z), ratio_1(z)});
                }
            }
        }
    }
    return best;
}

struct LayerInputs {
    std::vector<ClassTable> action, angle, normal;
};

/// Class tables of ∂_r f, ∂_φ f and ∂_{u,v} f for one homogeneous layer.
LayerInputs layer_tables(const Polynomial& fh, double rho) {
    LayerInputs in;
    const int nA = fh.nA(), nL = fh.nL();
    for (int i = 0; i < nA; ++i) {
        in.action.push_back(class_table(derivative(fh, {VarKind::r, i}), rho));
        in.angle.push_back(class_table(derivative(fh, {VarKind::phi, i}), rho));
    }
    in.normal.resize(2 * nL);
    for (int j = 0; j < nL; ++j) {
        in.normal[j] = class_table(derivative(fh, {VarKind::u, j}), rho);
        in.normal[nL + j] = class_table(derivative(fh, {VarKind::v, j}), rho);
    }
    return in;
}

std::map<int, Polynomial> layers_of(const Polynomial& f) {
    std::map<int, Polynomial> out;
    for (const auto& [key, c] : f.terms()) {
        const int h = normal_degree(key);
        auto it = out.find(h);
        if (it == out.end()) it = out.emplace(h, f.empty_like()).first;
        it->second.add(key, c);
    }
    return out;
}

PtameLayer evaluate_layer(int h, const LayerInputs& in, const DomainParams& dom, const Eigen::VectorXd& wp,
                          const Eigen::VectorXd& w1, const NormOptions& opt, std::mt19937_64& rng) {
    PtameLayer L;
    L.h = h;
    for (const auto& t : in.action) L.action_part = std::max(L.action_part, scalar_form_sup(to_nonneg(t, dom.mu), h, w1, opt, rng));
    for (const auto& t : in.angle) L.angle_part = std::max(L.angle_part, scalar_form_sup(to_nonneg(t, dom.mu), h, w1, opt, rng));
    if (h >= 1) {
        std::vector<NonnegPoly> G;
        for (const auto& t : in.normal) G.push_back(to_nonneg(t, dom.mu));
        L.normal_part = vector_form_sup(G, h - 1, wp, w1, opt, rng) * std::pow(dom.sigma, h - 1);
    }
    L.total = L.action_part * std::pow(dom.sigma, h) + L.angle_part * std::pow(dom.sigma, h) / dom.mu +
              L.normal_part / dom.sigma;
    return L;
}

void normal_weights(const LatticeConfig& cfg, double p, Eigen::VectorXd& wp, Eigen::VectorXd& w1) {
    const int nL = cfg.n_normal();
    wp.resize(2 * nL);
    w1.resize(2 * nL);
    for (int j = 0; j < nL; ++j) {
        const double b = bracket_weight(cfg.normal()[j]);
        wp(j) = wp(nL + j) = std::pow(b, p);
        w1(j) = w1(nL + j) = b;
    }
}

}  // namespace

double bracket_weight(const Site& a) { return std::max(norm(a), 1.0); }

Eigen::Matrix2cd LatticeMatrix::at(int a, int b) const {
    auto it = entries.find({a, b});
    return it == entries.end() ? Eigen::Matrix2cd::Zero() : it->second;
}

void LatticeMatrix::set(int a, int b, const Eigen::Matrix2cd& m) {
    if (m.isZero(0.0)) entries.erase({a, b});
    else entries[{a, b}] = m;
}

Eigen::Matrix2cd pi_part(const Eigen::Matrix2cd& m) {
    Eigen::Matrix2cd p;
    const cplx s = 0.5 * (m(0, 0) + m(1, 1));
    const cplx t = 0.5 * (m(0, 1) - m(1, 0));
    p << s, t, -t, s;
    return p;
}

LatticeMatrix quadratic_to_matrix(const Polynomial& f) {
    if (f.coordinates() != Coordinates::complex) throw std::invalid_argument("expected complex coordinates");
    std::map<std::pair<int, int>, Eigen::Matrix2cd> M;
    auto at = [&](int a, int b) -> Eigen::Matrix2cd& {
        auto it = M.find({a, b});
        if (it == M.end()) it = M.emplace(std::make_pair(a, b), Eigen::Matrix2cd::Zero()).first;
        return it->second;
    };
    for (const auto& [key, c] : f.terms()) {
        if (fourier_norm(key) != 0 || action_degree(key) != 0 || normal_degree(key) != 2) continue;
        std::vector<std::pair<int, int>> vars;  // (site, 0 for u / 1 for v)
        for (int fc = 0; fc < key.n_factors(); ++fc) {
            const Var v = key.var(fc);
            for (int e = 0; e < key.exponent(fc); ++e) vars.emplace_back(v.index, v.kind == VarKind::u ? 0 : 1);
        }
        const auto [a, sa] = vars[0];
        const auto [b, sb] = vars[1];
        if (sa != sb) {
            // u_a v_b (vars are sorted with u codes first)
            at(a, b)(0, 1) += c;
            at(b, a)(1, 0) += c;
        } else if (a != b) {
            at(a, b)(sa, sa) += c;
            at(b, a)(sa, sa) += c;
        } else {
            at(a, a)(sa, sa) += 2.0 * c;
        }
    }
    LatticeMatrix A(f.config_ptr());
    const Eigen::Matrix2cd Ci = c_inverse();
    for (const auto& [ab, m] : M) A.set(ab.first, ab.second, Ci.transpose() * m * Ci);
    return A;
}

Polynomial matrix_to_quadratic(const LatticeMatrix& A, int degree_cutoff) {
    Polynomial f(A.config, degree_cutoff);
    const int nA = A.config->n_tangential(), nL = A.config->n_normal();
    const Eigen::Matrix2cd C = c_matrix();
    for (const auto& [ab, m] : A.entries) {
        const auto [a, b] = ab;
        const Eigen::Matrix2cd M = C.transpose() * m * C;
        auto add = [&](int x, int sx, int y, int sy, cplx c) {
            Monomial mono;
            mono.k.assign(nA, 0);
            auto& lx = sx == 0 ? mono.mu : mono.nu;
            lx.emplace_back(x, 1);
            auto& ly = sy == 0 ? mono.mu : mono.nu;
            ly.emplace_back(y, 1);
            mono.coeff = 0.5 * c;
            f.add(make_key(nA, nL, mono), mono.coeff);
        };
        for (int s = 0; s < 2; ++s)
            for (int t = 0; t < 2; ++t) add(a, s, b, t, M(s, t));
    }
    f.prune();
    return f;
}

LatticeMatrix hermitian_to_matrix(const Eigen::MatrixXcd& H, ConfigPtr cfg) {
    const int n = cfg->n_normal();
    if (H.rows() != n || H.cols() != n) throw std::invalid_argument("matrix dimension does not match the lattice");
    std::map<std::pair<int, int>, Eigen::Matrix2cd> M;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            if (H(a, b) == cplx(0.0, 0.0)) continue;
            auto& mab = M.try_emplace({a, b}, Eigen::Matrix2cd::Zero()).first->second;
            mab(0, 1) += H(a, b);
            auto& mba = M.try_emplace({b, a}, Eigen::Matrix2cd::Zero()).first->second;
            mba(1, 0) += H(a, b);
        }
    LatticeMatrix A(cfg);
    const Eigen::Matrix2cd Ci = c_inverse();
    for (const auto& [ab, m] : M) A.set(ab.first, ab.second, Ci.transpose() * m * Ci);
    return A;
}

double matrix_gamma_norm(const LatticeMatrix& A, double gamma) {
    if (gamma < 0) throw std::invalid_argument("gamma must be nonnegative");
    const auto& L = A.config->normal();
    double best = 0.0;
    for (const auto& [ab, m] : A.entries) {
        const Site& a = L[ab.first];
        const Site& b = L[ab.second];
        const Eigen::Matrix2cd P = pi_part(m);
        best = std::max(best, op_norm_abs(P) * std::exp(gamma * distance(a, b)));
        best = std::max(best, op_norm_abs(m - P) * std::exp(gamma * norm(a + b)));
    }
    return best;
}

LatticeMatrix band_truncate(const LatticeMatrix& A, double delta) {
    if (delta < 0) throw std::invalid_argument("band width must be nonnegative");
    const auto& L = A.config->normal();
    LatticeMatrix out(A.config);
    for (const auto& [ab, m] : A.entries) {
        const Site& a = L[ab.first];
        const Site& b = L[ab.second];
        const Eigen::Matrix2cd P = pi_part(m);
        Eigen::Matrix2cd kept = Eigen::Matrix2cd::Zero();
        if (distance(a, b) <= delta + 1e-12) kept += P;
        if (norm(a + b) <= delta + 1e-12) kept += m - P;
        out.set(ab.first, ab.second, kept);
    }
    return out;
}

LipschitzReport lipschitz_seminorm(const LatticeMatrix& A, double Lambda, double gamma, int probe_shift) {
    const LatticeConfig& cfg = *A.config;
    const auto& L = cfg.normal();
    const int dim = cfg.dim();
    LipschitzReport rep;
    rep.gamma_norm = matrix_gamma_norm(A, gamma);

    std::vector<Site> directions;
    {
        Site c(dim, -2);
        while (true) {
            if (sup_norm(c) > 0) directions.push_back(c);
            int i = dim - 1;
            while (i >= 0 && c[i] == 2) c[i--] = -2;
            if (i < 0) break;
            ++c[i];
        }
    }
    // Membership of one index in the Lipschitz domain for a given shift t.
    auto site_ok = [&](const Site& a, const Site& c, int t) {
        const double nc = norm(c);
        const double na = norm(a);
        return na >= Lambda * (norm(a - t * c) + nc) * nc && na / nc >= 2 * Lambda * Lambda;
    };
    auto in_domain = [&](const Site& a, const Site& b, const Site& c) {
        for (int t = 0; t <= probe_shift; ++t)
            if (site_ok(a, c, t) && site_ok(b, c, t)) return true;
        return false;
    };

    for (const Site& c : directions) {
        ++rep.directions_probed;
        const double nc = norm(c);
        const Site shift = probe_shift * c;
        std::set<std::pair<int, int>> candidates;
        for (const auto& [ab, m] : A.entries) {
            candidates.insert(ab);
            auto a0 = cfg.normal_index(L[ab.first] - shift);
            auto b0 = cfg.normal_index(L[ab.second] - shift);
            if (a0 && b0) candidates.insert({*a0, *b0});
            auto b1 = cfg.normal_index(L[ab.second] + shift);
            if (a0 && b1) candidates.insert({*a0, *b1});
        }
        for (int a = 0; a < cfg.n_normal() && rep.inconclusive; ++a)
            for (int t = 0; t <= probe_shift; ++t)
                if (site_ok(L[a], c, t)) {
                    rep.inconclusive = false;
                    break;
                }
        for (const auto& [ia, ib] : candidates) {
            const Site& a = L[ia];
            const Site& b = L[ib];
            const double weight = std::max(norm(a) / nc, norm(b) / nc) + 1.0;
            if (in_domain(a, b, c)) {
                auto ap = cfg.normal_index(a + shift), bp = cfg.normal_index(b + shift);
                if (ap && bp) {
                    ++rep.domain_points;
                    const Eigen::Matrix2cd diff = pi_part(A.at(ia, ib)) - pi_part(A.at(*ap, *bp));
                    rep.plus_sector = std::max(rep.plus_sector, op_norm_abs(diff) * std::exp(gamma * distance(a, b)) * weight);
                }
            }
            if (in_domain(a, -1 * b, c)) {
                auto ap = cfg.normal_index(a + shift), bm = cfg.normal_index(b - shift);
                if (ap && bm) {
                    ++rep.domain_points;
                    const Eigen::Matrix2cd m0 = A.at(ia, ib), m1 = A.at(*ap, *bm);
                    const Eigen::Matrix2cd diff = (m0 - pi_part(m0)) - (m1 - pi_part(m1));
                    rep.minus_sector = std::max(rep.minus_sector, op_norm_abs(diff) * std::exp(gamma * norm(a + b)) * weight);
                }
            }
        }
    }
    rep.value = rep.gamma_norm + std::max(rep.plus_sector, rep.minus_sector);
    return rep;
}

PtameReport ptame_vfield_report(const Polynomial& f, const DomainParams& dom, const NormOptions& opt) {
    if (f.coordinates() != Coordinates::complex) throw std::invalid_argument("p-tame norm expects complex coordinates");
    PtameReport rep;
    Eigen::VectorXd wp, w1;
    normal_weights(f.config(), dom.p, wp, w1);
    std::mt19937_64 rng(opt.seed);
    for (const auto& [h, fh] : layers_of(f)) {
        const PtameLayer L = evaluate_layer(h, layer_tables(fh, dom.rho), dom, wp, w1, opt, rng);
        rep.layers.push_back(L);
        rep.value += L.total;
    }
    return rep;
}

double ptame_vfield_norm(const Polynomial& f, const DomainParams& dom, const NormOptions& opt) {
    return ptame_vfield_report(f, dom, opt).value;
}

double ptame_vfield_norm(const std::function<Polynomial(const std::vector<double>&)>& family,
                         const std::vector<double>& w, const DomainParams& dom, double step, const NormOptions& opt) {
    const Polynomial f = family(w);
    std::vector<Polynomial> diffs;
    for (std::size_t a = 0; a < w.size(); ++a) {
        std::vector<double> wa = w;
        wa[a] += step;
        Polynomial d = family(wa) - f;
        d *= cplx(1.0 / step, 0.0);
        diffs.push_back(std::move(d));
    }
    Eigen::VectorXd wp, w1;
    normal_weights(f.config(), dom.p, wp, w1);
    std::mt19937_64 rng(opt.seed);
    std::set<int> hs;
    for (const auto& [key, c] : f.terms()) hs.insert(normal_degree(key));
    for (const auto& d : diffs)
        for (const auto& [key, c] : d.terms()) hs.insert(normal_degree(key));
    double total = 0.0;
    for (int h : hs) {
        auto layer = [&](const Polynomial& g) {
            return g.filter([h](const Key& k) { return normal_degree(k) == h; });
        };
        LayerInputs base = layer_tables(layer(f), dom.rho);
        std::vector<LayerInputs> dt;
        for (const auto& d : diffs) dt.push_back(layer_tables(layer(d), dom.rho));
        auto merge = [&](std::vector<ClassTable>& target, auto member) {
            for (std::size_t i = 0; i < target.size(); ++i) {
                std::vector<ClassTable> parts;
                for (const auto& x : dt) parts.push_back((x.*member)[i]);
                target[i] = add_parameter_sup(target[i], parts);
            }
        };
        merge(base.action, &LayerInputs::action);
        merge(base.angle, &LayerInputs::angle);
        merge(base.normal, &LayerInputs::normal);
        total += evaluate_layer(h, base, dom, wp, w1, opt, rng).total;
    }
    return total;
}

WeightedReport weighted_vfield_report(const Polynomial& f, const DomainParams& dom, int samples, unsigned seed) {
    if (samples < 1) throw std::invalid_argument("at least one sample is required");
    const int nA = f.nA(), nL = f.nL();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::normal_distribution<double> N(0.0, 1.0);
    Eigen::VectorXd wp, w1;
    normal_weights(f.config(), dom.p, wp, w1);
    WeightedReport rep;
    for (int s = 0; s < samples; ++s) {
        PhasePoint z;
        z.phi.resize(nA);
        z.r.resize(nA);
        z.u.resize(nL);
        z.v.resize(nL);
        for (int i = 0; i < nA; ++i) {
            const double im = U(rng) < 0.5 ? (U(rng) < 0.5 ? dom.rho : -dom.rho) : dom.rho * (2 * U(rng) - 1);
            z.phi[i] = cplx(2 * M_PI * U(rng), im);
            const double rad = U(rng) < 0.5 ? dom.mu : dom.mu * U(rng);
            z.r[i] = std::polar(rad, 2 * M_PI * U(rng));
        }
        const bool nonneg = U(rng) < 0.5;
        double n2 = 0.0;
        for (int j = 0; j < nL; ++j) {
            z.u[j] = nonneg ? cplx(std::abs(N(rng)), 0.0) : cplx(N(rng), N(rng));
            z.v[j] = nonneg ? cplx(std::abs(N(rng)), 0.0) : cplx(N(rng), N(rng));
            n2 += (std::norm(z.u[j]) + std::norm(z.v[j])) * wp(j) * wp(j);
        }
        const double scale = n2 > 0 ? (U(rng) < 0.7 ? dom.sigma : dom.sigma * U(rng)) / std::sqrt(n2) : 0.0;
        for (int j = 0; j < nL; ++j) {
            z.u[j] *= scale;
            z.v[j] *= scale;
        }
        const Gradient g = gradient(f, z);
        double fr = 0.0, fphi = 0.0, fz2 = 0.0;
        for (int i = 0; i < nA; ++i) {
            fr = std::max(fr, std::abs(g.r[i]));
            fphi = std::max(fphi, std::abs(g.phi[i]));
        }
        for (int j = 0; j < nL; ++j) fz2 += (std::norm(g.u[j]) + std::norm(g.v[j])) * wp(j) * wp(j);
        const double value = fr + fphi / dom.mu + std::sqrt(fz2) / dom.sigma;
        if (value > rep.value || s == 0) {
            rep.value = std::max(rep.value, value);
            rep.witness = z;
        }
    }
    rep.ptame = ptame_vfield_norm(f, dom);
    rep.consistent = rep.value <= rep.ptame * (1 + 1e-9) + 1e-12;
    return rep;
}

double weighted_vfield_norm(const Polynomial& f, const DomainParams& dom, int samples, unsigned seed) {
    const WeightedReport rep = weighted_vfield_report(f, dom, samples, seed);
    if (!rep.consistent)
        throw std::logic_error("weighted vector-field norm exceeds the p-tame norm");
    return rep.value;
}

BracketNormReport bracket_norm_check(const Polynomial& f, const Polynomial& g, const DomainParams& dom, double tau,
                                     double tau_prime) {
    if (!(tau > 0 && tau < dom.rho)) throw std::invalid_argument("tau must lie in (0, rho)");
    if (!(tau_prime > 0 && tau_prime < dom.sigma / 2)) throw std::invalid_argument("tau' must lie in (0, sigma/2)");
    BracketNormReport rep;
    DomainParams outer = dom;
    outer.mu = dom.sigma * dom.sigma;
    DomainParams inner = dom;
    inner.rho = dom.rho - tau;
    inner.sigma = dom.sigma - tau_prime;
    inner.mu = inner.sigma * inner.sigma;
    rep.lhs = ptame_vfield_norm(poisson_bracket(f, g), inner);
    rep.norm_f = ptame_vfield_norm(f, outer);
    rep.norm_g = ptame_vfield_norm(g, outer);
    rep.factor = std::max(1.0 / tau, dom.sigma / tau_prime);
    const double rhs = rep.factor * rep.norm_f * rep.norm_g;
    rep.constant = rhs > 0 ? rep.lhs / rhs : 0.0;
    return rep;
}

nlohmann::json to_json(const PtameReport& r, const DomainParams& dom) {
    nlohmann::json j{{"norm", "ptame_vfield"}, {"rho", dom.rho}, {"mu", dom.mu}, {"sigma", dom.sigma},
                     {"p", dom.p}, {"value", r.value}};
    for (const auto& L : r.layers) {
        const std::string h = std::to_string(L.h);
        j["layer" + h + "_action"] = L.action_part;
        j["layer" + h + "_angle"] = L.angle_part;
        j["layer" + h + "_normal"] = L.normal_part;
        j["layer" + h + "_total"] = L.total;
    }
    return j;
}

nlohmann::json to_json(const BracketNormReport& r) {
    return {{"norm", "bracket_check"}, {"lhs", r.lhs}, {"norm_f", r.norm_f}, {"norm_g", r.norm_g},
            {"factor", r.factor}, {"constant", r.constant}};
}

nlohmann::json to_json(const LipschitzReport& r) {
    return {{"norm", "lipschitz"}, {"value", r.value}, {"gamma_norm", r.gamma_norm},
            {"plus_sector", r.plus_sector}, {"minus_sector", r.minus_sector},
            {"inconclusive", r.inconclusive}, {"directions", r.directions_probed},
            {"domain_points", r.domain_points}};
}

}  // namespace nlskam
