#include "nlskam/homological.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace nlskam {

namespace {

const cplx I(0.0, 1.0);

std::string describe(const std::vector<int>& k, const std::string& sector, double value, double threshold) {
    std::ostringstream os;
    os << "small divisor in sector " << sector << " at k = (";
    for (std::size_t i = 0; i < k.size(); ++i) os << (i ? "," : "") << k[i];
    os << "): |d| = " << value << " < " << threshold;
    return os.str();
}

struct Eig {
    Eigen::MatrixXcd vectors;
    Eigen::VectorXd values;
};

struct SolveTag {
    const std::vector<int>* k;
    const std::vector<int>* l;
    const char* sector;
    int block_a;
    int block_b;
};

/// X = L (L* R Rv ⊘ (λ + a_i + b_j)) Rv*, checking only the divisors with a nonzero projected numerator.
Eigen::MatrixXcd eigen_solve(cplx lambda, const Eig& left, const Eig& right, const Eigen::MatrixXcd& rhs,
                             double threshold, const SolveTag& tag, double& margin) {
    Eigen::MatrixXcd Y = left.vectors.adjoint() * rhs * right.vectors;
    const double scale = Y.cwiseAbs().maxCoeff();
    if (scale == 0.0) return Eigen::MatrixXcd::Zero(rhs.rows(), rhs.cols());
    for (int i = 0; i < Y.rows(); ++i)
        for (int j = 0; j < Y.cols(); ++j) {
            if (std::abs(Y(i, j)) <= 1e-12 * scale) {
                Y(i, j) = 0.0;
                continue;
            }
            const cplx d = lambda + left.values(i) + right.values(j);
            const double ad = std::abs(d);
            if (ad < threshold)
                throw SmallDivisorError(*tag.k, *tag.l, tag.sector, tag.block_a, tag.block_b, ad, threshold);
            if (ad < 1e-12 * (1.0 + std::abs(lambda) + std::abs(left.values(i)) + std::abs(right.values(j))))
                throw SolveFailure(std::string("singular block system in sector ") + tag.sector);
            margin = std::min(margin, ad);
            Y(i, j) /= d;
        }
    return left.vectors * Y * right.vectors.adjoint();
}

Eig trivial_eig() {
    return {Eigen::MatrixXcd::Identity(1, 1), Eigen::VectorXd::Zero(1)};
}

}  // namespace

SmallDivisorError::SmallDivisorError(std::vector<int> k_, std::vector<int> l_, std::string sector_, int a, int b,
                                     double v, double t)
    : std::runtime_error(describe(k_, sector_, v, t)), k(std::move(k_)), l(std::move(l_)), sector(std::move(sector_)),
      block_a(a), block_b(b), value(v), threshold(t) {}

Eigen::MatrixXcd sylvester_block_solve(cplx lambda, const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& B,
                                       const Eigen::MatrixXcd& rhs, int sign, double kappa) {
    if (sign != 1 && sign != -1) throw std::invalid_argument("sign must be +1 or -1");
    if (A.rows() != A.cols() || B.rows() != B.cols() || rhs.rows() != A.rows() || rhs.cols() != B.rows())
        throw std::invalid_argument("block dimensions do not match");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> ea(A), eb(B);
    const Eig left{ea.eigenvectors(), ea.eigenvalues()};
    const Eig right{eb.eigenvectors(), sign * eb.eigenvalues()};
    const std::vector<int> none;
    double margin = std::numeric_limits<double>::infinity();
    return eigen_solve(lambda, left, right, rhs, kappa, {&none, &none, "block", -1, -1}, margin);
}

struct GradedSolver::Impl {
    ConfigPtr cfg;
    const BlockDecomposition* dec;
    Eigen::VectorXd omega;
    std::vector<int> low_pos;  // normal index → position in the low list, or −1
    std::vector<int> low_sites;
    Eigen::VectorXd low_lambda;
    Eigen::MatrixXcd A;
    std::vector<Eig> eig, eig_conj;  // per block: A_b and its transpose
    std::vector<int> pos_in_block;
    std::function<double(int)> threshold;
};

GradedSolver::GradedSolver(const QuadraticForm& q, const BlockDecomposition& dec, std::vector<int> low_sites,
                           Eigen::VectorXd low_lambda, std::function<double(int)> threshold) {
    auto impl = std::make_shared<Impl>();
    impl->cfg = q.config;
    impl->dec = &dec;
    impl->omega = q.omega;
    const int nL = q.config->n_normal();
    impl->low_pos.assign(nL, -1);
    for (std::size_t i = 0; i < low_sites.size(); ++i) impl->low_pos[low_sites[i]] = static_cast<int>(i);
    impl->low_sites = std::move(low_sites);
    impl->low_lambda = std::move(low_lambda);
    impl->A = q.normal_matrix();
    impl->threshold = std::move(threshold);
    impl->pos_in_block.assign(nL, 0);
    for (const auto& blk : dec.blocks) {
        const int n = static_cast<int>(blk.size());
        Eigen::MatrixXcd B(n, n);
        for (int i = 0; i < n; ++i) {
            impl->pos_in_block[blk[i]] = i;
            for (int j = 0; j < n; ++j) B(i, j) = impl->A(blk[i], blk[j]);
        }
        if ((B - B.adjoint()).cwiseAbs().maxCoeff() > 1e-10) throw std::domain_error("normal block is not Hermitian");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(B);
        impl->eig.push_back({es.eigenvectors(), es.eigenvalues()});
        impl->eig_conj.push_back({es.eigenvectors().conjugate(), es.eigenvalues()});
    }
    for (int a = 0; a < nL; ++a)
        for (int b = 0; b < nL; ++b)
            if (dec.block_of[a] != dec.block_of[b] && std::abs(impl->A(a, b)) > 1e-10)
                throw std::domain_error("Omega + H is not block-diagonal over the decomposition");
    impl_ = std::move(impl);
}

Polynomial GradedSolver::hamiltonian() const {
    const auto& m = *impl_;
    Polynomial h(m.cfg);
    const int nA = m.cfg->n_tangential(), nL = m.cfg->n_normal();
    const std::vector<int> k0(nA, 0);
    for (int i = 0; i < nA; ++i) h.add(make_key(nA, nL, Monomial{k0, {{i, 1}}, {}, {}, 1.0}), m.omega(i));
    for (std::size_t i = 0; i < m.low_sites.size(); ++i) {
        const int a = m.low_sites[i];
        h.add(make_key(nA, nL, Monomial{k0, {}, {{a, 1}}, {{a, 1}}, 1.0}), m.low_lambda(i));
    }
    for (int a = 0; a < nL; ++a)
        for (int b = 0; b < nL; ++b)
            if (m.low_pos[a] < 0 && m.low_pos[b] < 0 && m.A(a, b) != cplx(0.0))
                h.add(make_key(nA, nL, Monomial{k0, {}, {{a, 1}}, {{b, 1}}, 1.0}), m.A(a, b));
    h.prune();
    return h;
}

GradedSolver::Result GradedSolver::solve(const Polynomial& R) const {
    const auto& m = *impl_;
    const auto& dec = *m.dec;
    const auto& L = m.cfg->normal();
    const int nA = m.cfg->n_tangential(), nL = m.cfg->n_normal();

    struct ClassData {
        cplx scalar = 0.0;
        bool has_scalar = false;
        std::map<int, cplx> u, v;
        std::map<std::pair<int, int>, cplx> uu, uv, vv;
    };
    std::map<Key, ClassData> classes;
    for (const auto& [key, c] : R.terms()) {
        std::vector<std::pair<int, bool>> high;  // (site, is_v)
        Monomial cm;
        cm.k.resize(nA);
        for (int i = 0; i < nA; ++i) cm.k[i] = key.k(i);
        for (int f = 0; f < key.n_factors(); ++f) {
            const Var v = key.var(f);
            const int e = key.exponent(f);
            if (v.kind == VarKind::r) cm.alpha.emplace_back(v.index, e);
            else if (m.low_pos[v.index] >= 0) (v.kind == VarKind::u ? cm.mu : cm.nu).emplace_back(v.index, e);
            else
                for (int t = 0; t < e; ++t) high.emplace_back(v.index, v.kind == VarKind::v);
        }
        if (high.size() > 2) throw std::invalid_argument("right-hand side term has more than two high-mode factors");
        ClassData& cd = classes[make_key(nA, nL, cm)];
        if (high.empty()) {
            cd.scalar += c;
            cd.has_scalar = true;
        } else if (high.size() == 1) {
            (high[0].second ? cd.v : cd.u)[high[0].first] += c;
        } else {
            auto [a, av] = high[0];
            auto [b, bv] = high[1];
            if (av && !bv) {
                std::swap(a, b);
                std::swap(av, bv);
            }
            if (!av && !bv) cd.uu[{std::min(a, b), std::max(a, b)}] += c;
            else if (!av && bv) cd.uv[{a, b}] += c;
            else cd.vv[{std::min(a, b), std::max(a, b)}] += c;
        }
    }

    Result out{Polynomial(R.config_ptr(), R.degree_cutoff()), Polynomial(R.config_ptr(), R.degree_cutoff())};
    auto emit = [&](Polynomial& P, const Key& cls, std::initializer_list<std::pair<int, bool>> high, cplx c) {
        if (c == cplx(0.0)) return;
        Monomial mono = to_monomial(cls, c);
        for (auto [s, isv] : high) (isv ? mono.nu : mono.mu).emplace_back(s, 1);
        P.add(make_key(nA, nL, mono), c);
    };

    const Eig one = trivial_eig();
    for (const auto& [cls, cd] : classes) {
        double lambda = 0.0;
        bool kzero = true;
        for (int i = 0; i < nA; ++i) {
            lambda -= cls.k(i) * m.omega(i);
            kzero = kzero && cls.k(i) == 0;
        }
        std::vector<int> l(m.low_sites.size(), 0);
        for (int f = 0; f < cls.n_factors(); ++f) {
            const Var v = cls.var(f);
            if (v.kind == VarKind::u) l[m.low_pos[v.index]] += cls.exponent(f);
            else if (v.kind == VarKind::v) l[m.low_pos[v.index]] -= cls.exponent(f);
        }
        int l_norm = 0;
        for (std::size_t i = 0; i < l.size(); ++i) {
            lambda += l[i] * m.low_lambda(i);
            l_norm += std::abs(l[i]);
        }
        const bool resonant_base = kzero && l_norm == 0;
        const double thr = m.threshold(l_norm);
        std::vector<int> kv(nA);
        for (int i = 0; i < nA; ++i) kv[i] = cls.k(i);

        if (cd.has_scalar && std::abs(cd.scalar) > 0.0) {
            if (resonant_base) {
                emit(out.Z, cls, {}, cd.scalar);
            } else {
                if (std::abs(lambda) < thr) throw SmallDivisorError(kv, l, "scalar", -1, -1, std::abs(lambda), thr);
                if (std::abs(lambda) < 1e-300) throw SolveFailure("singular scalar divisor");
                out.divisor_margin = std::min(out.divisor_margin, std::abs(lambda));
                emit(out.S, cls, {}, cd.scalar / (I * lambda));
            }
        }

        // Linear sectors, gathered per block.
        for (int sector = 0; sector < 2; ++sector) {
            const auto& vec = sector == 0 ? cd.u : cd.v;
            std::map<int, Eigen::VectorXcd> per_block;
            for (auto [s, c] : vec) {
                const int b = dec.block_of[s];
                auto it = per_block.find(b);
                if (it == per_block.end()) it = per_block.emplace(b, Eigen::VectorXcd::Zero(dec.blocks[b].size())).first;
                it->second(m.pos_in_block[s]) += c;
            }
            for (auto& [b, rhs] : per_block) {
                // u: i(λ + A)S = R; v: i(λ − Aᵀ)T = R.
                Eig left = sector == 0 ? m.eig[b] : m.eig_conj[b];
                if (sector == 1) left.values = -left.values;
                const SolveTag tag{&kv, &l, sector == 0 ? "u" : "v", b, -1};
                const Eigen::MatrixXcd X = eigen_solve(lambda, left, one, rhs, thr, tag, out.divisor_margin) / I;
                for (std::size_t i = 0; i < dec.blocks[b].size(); ++i)
                    emit(out.S, cls, {{dec.blocks[b][i], sector == 1}}, X(i, 0));
            }
        }

        // Quadratic sectors as block-pair matrices.
        for (int sector = 0; sector < 3; ++sector) {
            const auto& entries = sector == 0 ? cd.uu : sector == 1 ? cd.uv : cd.vv;
            if (entries.empty()) continue;
            std::map<std::pair<int, int>, Eigen::MatrixXcd> pairs;
            auto put = [&](int a, int b, cplx c) {
                const int ba = dec.block_of[a], bb = dec.block_of[b];
                auto it = pairs.find({ba, bb});
                if (it == pairs.end())
                    it = pairs.emplace(std::make_pair(ba, bb),
                                       Eigen::MatrixXcd::Zero(dec.blocks[ba].size(), dec.blocks[bb].size())).first;
                it->second(m.pos_in_block[a], m.pos_in_block[b]) += c;
            };
            for (const auto& [ab, c] : entries) {
                const auto [a, b] = ab;
                if (sector == 1 || a == b) put(a, b, c);
                else {
                    put(a, b, 0.5 * c);
                    put(b, a, 0.5 * c);
                }
            }
            std::map<std::pair<int, int>, cplx> coeffs;
            for (const auto& [bp, rhs] : pairs) {
                const auto [bi, bj] = bp;
                if (sector == 1 && resonant_base && norm2(L[dec.blocks[bi].front()]) == norm2(L[dec.blocks[bj].front()])) {
                    for (std::size_t i = 0; i < dec.blocks[bi].size(); ++i)
                        for (std::size_t j = 0; j < dec.blocks[bj].size(); ++j)
                            emit(out.Z, cls, {{dec.blocks[bi][i], false}, {dec.blocks[bj][j], true}}, rhs(i, j));
                    continue;
                }
                Eig left, right;
                const char* name = "";
                if (sector == 0) {  // λX + AX + XAᵀ
                    left = m.eig[bi];
                    right = m.eig_conj[bj];
                    name = "uu";
                } else if (sector == 1) {  // λX + AX − XA
                    left = m.eig[bi];
                    right = m.eig[bj];
                    right.values = -right.values;
                    name = "uv";
                } else {  // λX − AᵀX − XA
                    left = m.eig_conj[bi];
                    left.values = -left.values;
                    right = m.eig[bj];
                    right.values = -right.values;
                    name = "vv";
                }
                const SolveTag tag{&kv, &l, name, bi, bj};
                const Eigen::MatrixXcd X = eigen_solve(lambda, left, right, rhs, thr, tag, out.divisor_margin) / I;
                for (std::size_t i = 0; i < dec.blocks[bi].size(); ++i)
                    for (std::size_t j = 0; j < dec.blocks[bj].size(); ++j) {
                        const int a = dec.blocks[bi][i], b = dec.blocks[bj][j];
                        if (sector == 1) coeffs[{a, b}] += X(i, j);
                        else coeffs[{std::min(a, b), std::max(a, b)}] += X(i, j);
                    }
            }
            for (const auto& [ab, c] : coeffs) {
                const bool av = sector == 2, bv = sector >= 1;
                emit(out.S, cls, {{ab.first, av}, {ab.second, bv}}, c);
            }
        }
    }
    out.S.prune();
    out.Z.prune();
    return out;
}

Polynomial quadratic_hamiltonian(const QuadraticForm& q, int degree_cutoff) {
    const int nA = q.config->n_tangential(), nL = q.config->n_normal();
    Polynomial h(q.config, degree_cutoff);
    const std::vector<int> k0(nA, 0);
    for (int i = 0; i < nA; ++i) h.add(make_key(nA, nL, Monomial{k0, {{i, 1}}, {}, {}, 1.0}), q.omega(i));
    const Eigen::MatrixXcd A = q.normal_matrix();
    for (int a = 0; a < nL; ++a)
        for (int b = 0; b < nL; ++b)
            if (A(a, b) != cplx(0.0)) h.add(make_key(nA, nL, Monomial{k0, {}, {{a, 1}}, {{b, 1}}, 1.0}), A(a, b));
    h.prune();
    return h;
}

HomologicalSolution solve_kam_homological(const QuadraticForm& q, const Polynomial& f_low, const Polynomial& f_high,
                                          const BlockDecomposition& dec, double delta_prime, double kappa) {
    if (f_low.coordinates() != Coordinates::complex || f_high.coordinates() != Coordinates::complex)
        throw std::invalid_argument("homological solver expects complex coordinates");
    for (const auto& [key, c] : f_low.terms())
        if (!is_low_key(key)) throw std::invalid_argument("f_low contains a term outside the low jet");
    const GradedSolver solver(q, dec, {}, Eigen::VectorXd(), [kappa](int) { return kappa; });
    auto T = [&](const Polynomial& p) { return truncate_fourier(p, delta_prime); };
    auto sector = [](int action, int normal) {
        return [=](const Key& k) { return action_degree(k) == action && normal_degree(k) == normal; };
    };
    auto low_bracket = [&](const Polynomial& s) {
        return T(poisson_bracket(f_high, s, 2).filter([](const Key& k) { return is_low_key(k); }));
    };
    const Polynomial Tf = T(f_low);

    // Angle part, then the ζ-linear part fed by {f_high, s^φ}, then the r-linear and ζ² parts.
    Polynomial R_phi = Tf.filter(sector(0, 0));
    R_phi *= -1.0;
    const auto r_phi = solver.solve(R_phi);

    Polynomial R_1 = Tf.filter(sector(0, 1)) + low_bracket(r_phi.S).filter(sector(0, 1));
    R_1 *= -1.0;
    const auto r_1 = solver.solve(R_1);

    const Polynomial g = low_bracket(r_phi.S + r_1.S);
    Polynomial R_02 = Tf.filter(sector(1, 0)) + Tf.filter(sector(0, 2)) + g.filter(sector(1, 0)) + g.filter(sector(0, 2));
    R_02 *= -1.0;
    const auto r_02 = solver.solve(R_02);

    HomologicalSolution sol{r_phi.S + r_1.S + r_02.S, r_phi.Z + r_1.Z + r_02.Z};
    sol.h1 *= -1.0;
    sol.divisor_margin = std::min({r_phi.divisor_margin, r_1.divisor_margin, r_02.divisor_margin});

    const int nA = q.config->n_tangential(), nL = q.config->n_normal();
    const std::vector<int> k0(nA, 0);
    sol.a1 = sol.h1.coeff(Monomial{k0, {}, {}, {}, 1.0});
    sol.chi1 = Eigen::VectorXcd::Zero(nA);
    for (int i = 0; i < nA; ++i) sol.chi1(i) = sol.h1.coeff(Monomial{k0, {{i, 1}}, {}, {}, 1.0});
    sol.H1 = Eigen::MatrixXcd::Zero(nL, nL);
    for (const auto& [key, c] : sol.h1.terms()) {
        if (normal_degree(key) != 2) continue;
        const Monomial mono = to_monomial(key, c);
        if (mono.mu.size() == 1 && mono.nu.size() == 1) sol.H1(mono.mu[0].first, mono.nu[0].first) = c;
    }

    const Polynomial hs = poisson_bracket(quadratic_hamiltonian(q), sol.s), fs = low_bracket(sol.s);
    sol.residual = combination_max_abs({{1.0, &hs}, {1.0, &Tf}, {1.0, &fs}, {-1.0, &sol.h1}});
    return sol;
}

Polynomial truncate_nf(const Polynomial& P, const std::vector<bool>& is_low, double delta_t) {
    const auto& L = P.config().normal();
    return P.filter([&](const Key& key) {
        if (fourier_norm(key) > delta_t + 1e-12) return false;
        int hu = -1, hv = -1, nh = 0;
        for (int f = 0; f < key.n_factors(); ++f) {
            const Var v = key.var(f);
            if (v.kind == VarKind::r || is_low[v.index]) continue;
            nh += key.exponent(f);
            (v.kind == VarKind::u ? hu : hv) = v.index;
        }
        if (nh == 2 && hu >= 0 && hv >= 0) return distance(L[hu], L[hv]) <= delta_t + 1e-12;
        return true;
    });
}

NfGeneratorStep solve_nf_homological(const QuadraticForm& q, const LowModes& low, const Polynomial& P_top,
                                     const BlockDecomposition& dec, const NfThresholds& t, int j0) {
    std::vector<bool> is_low(q.config->n_normal(), false);
    for (int a : low.sites) is_low[a] = true;
    for (const auto& [key, c] : P_top.terms())
        if (weighted_degree(key) != j0 + 1) throw std::invalid_argument("P_top must be homogeneous of weighted degree j0 + 1");
    const GradedSolver solver(q, dec, low.sites, low.lambda, [t](int l) { return nf_threshold(t, l); });
    const Polynomial TP = truncate_nf(P_top, is_low, t.delta_t);
    Polynomial R = TP;
    R *= -1.0;
    const auto res = solver.solve(R);
    NfGeneratorStep step{j0, res.S, res.Z};
    step.Zhat *= -1.0;
    step.divisor_margin = res.divisor_margin;
    const Polynomial hF = poisson_bracket(solver.hamiltonian(), step.F);
    step.residual = combination_max_abs({{1.0, &hF}, {1.0, &TP}, {-1.0, &step.Zhat}});
    return step;
}

}  // namespace nlskam
