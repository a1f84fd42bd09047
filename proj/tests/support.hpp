#pragma once

#include <random>

#include "nlskam/polynomial.hpp"

namespace nlskam::testing {

inline Monomial mono(std::vector<int> k, std::vector<std::pair<int, int>> alpha, std::vector<std::pair<int, int>> mu,
                     std::vector<std::pair<int, int>> nu, cplx c = 1.0) {
    return Monomial{std::move(k), std::move(alpha), std::move(mu), std::move(nu), c};
}

inline Polynomial single(ConfigPtr cfg, const Monomial& m, Coordinates coords = Coordinates::complex) {
    Polynomial p(std::move(cfg), kNoCutoff, coords);
    p.add(m);
    return p;
}

/// Random monomial of weighted degree ≤ max_degree with |k_i| ≤ kmax.
inline Monomial random_monomial(const LatticeConfig& cfg, int max_degree, int kmax, std::mt19937_64& rng) {
    const int nA = cfg.n_tangential(), nL = cfg.n_normal();
    std::uniform_int_distribution<int> kd(-kmax, kmax);
    std::uniform_int_distribution<int> deg(0, max_degree);
    std::uniform_int_distribution<int> slot(0, nA + 2 * nL - 1);
    std::normal_distribution<double> nd;
    Monomial m;
    m.k.resize(nA);
    for (auto& x : m.k) x = kd(rng);
    int budget = deg(rng);
    std::map<int, int> r, u, v;
    while (budget > 0) {
        const int s = slot(rng);
        if (s < nA) {
            if (budget < 2) continue;
            ++r[s];
            budget -= 2;
        } else if (s < nA + nL) {
            ++u[s - nA];
            --budget;
        } else {
            ++v[s - nA - nL];
            --budget;
        }
    }
    for (auto [i, e] : r) m.alpha.emplace_back(i, e);
    for (auto [i, e] : u) m.mu.emplace_back(i, e);
    for (auto [i, e] : v) m.nu.emplace_back(i, e);
    m.coeff = cplx(nd(rng), nd(rng));
    return m;
}

inline Polynomial random_polynomial(ConfigPtr cfg, int max_degree, int n_terms, int kmax, std::mt19937_64& rng,
                                    Coordinates coords = Coordinates::complex) {
    Polynomial p(cfg, kNoCutoff, coords);
    for (int t = 0; t < n_terms; ++t) p.add(random_monomial(*cfg, max_degree, kmax, rng));
    p.prune();
    return p;
}

/// Random polynomial whose terms all carry the given momentum.
inline Polynomial random_graded_polynomial(ConfigPtr cfg, int max_degree, int n_terms, int kmax, const Site& target,
                                           std::mt19937_64& rng) {
    Polynomial p(cfg);
    int added = 0;
    for (int attempt = 0; attempt < 200000 && added < n_terms; ++attempt) {
        const Monomial m = random_monomial(*cfg, max_degree, kmax, rng);
        if (momentum(m, *cfg) != target) continue;
        p.add(m);
        ++added;
    }
    return p;
}

/// Makes p real on real phase space: p + conj(p).
inline Polynomial realify(const Polynomial& p) {
    Polynomial out = p;
    for (const auto& [key, c] : p.terms()) out.add(conjugate_key(key), std::conj(c));
    out.prune();
    return out;
}

inline double max_coeff_diff(const Polynomial& a, const Polynomial& b) { return (a - b).max_abs(); }

inline PhasePoint random_point(const LatticeConfig& cfg, std::mt19937_64& rng, double scale = 0.5) {
    std::normal_distribution<double> nd;
    PhasePoint z;
    for (int i = 0; i < cfg.n_tangential(); ++i) {
        z.phi.emplace_back(nd(rng), 0.2 * nd(rng));
        z.r.emplace_back(scale * nd(rng), scale * nd(rng));
    }
    for (int j = 0; j < cfg.n_normal(); ++j) {
        z.u.emplace_back(scale * nd(rng), scale * nd(rng));
        z.v.emplace_back(scale * nd(rng), scale * nd(rng));
    }
    return z;
}

}  // namespace nlskam::testing
