#include <optional>
#include <random>

#include "doctest.h"
#include "nlskam/homological.hpp"
#include "support.hpp"

using namespace nlskam;
using namespace nlskam::testing;

namespace {

const cplx I(0.0, 1.0);

cplx bracket_at(const Polynomial& f, const Polynomial& g, const PhasePoint& z) {
    const Gradient a = gradient(f, z), b = gradient(g, z);
    cplx s = 0.0;
    for (std::size_t i = 0; i < a.phi.size(); ++i) s += a.phi[i] * b.r[i] - a.r[i] * b.phi[i];
    for (std::size_t j = 0; j < a.u.size(); ++j) s += -I * (a.u[j] * b.v[j] - a.v[j] * b.u[j]);
    return s;
}

/// h = ⟨ω,r⟩ + Σ Ω_a u_a v_a for diagonal normal data, built term by term.
Polynomial diagonal_h(const QuadraticForm& q) {
    const int nA = q.config->n_tangential(), nL = q.config->n_normal();
    Polynomial h(q.config);
    for (int i = 0; i < nA; ++i) {
        std::vector<int> k(nA, 0);
        h.add(mono(k, {{i, 1}}, {}, {}, q.omega(i)));
    }
    for (int a = 0; a < nL; ++a) h.add(mono(std::vector<int>(nA, 0), {}, {{a, 1}}, {{a, 1}}, q.Omega(a)));
    return h;
}

/// Random low jet: weighted degree ≤ 2 terms with |k|₁ ≤ kmax.
Polynomial random_low_jet(ConfigPtr cfg, int n, int kmax, std::mt19937_64& rng) {
    Polynomial p(cfg);
    while (static_cast<int>(p.size()) < n) {
        const Monomial m = random_monomial(*cfg, 2, kmax, rng);
        Polynomial t = single(cfg, m);
        if (fourier_norm(t.terms().begin()->first) <= kmax) p.add(m);
    }
    return p;
}

/// Quadratic form on d=1 with tangential site 1, random potentials and a random Hermitian coupling inside each block.
QuadraticForm coupled_form(ConfigPtr cfg, const BlockDecomposition& dec, std::mt19937_64& rng, double coupling) {
    QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0.0, 1.0, rng));
    std::normal_distribution<double> nd;
    for (const auto& blk : dec.blocks)
        for (int a : blk)
            for (int b : blk)
                if (a < b) {
                    const cplx h(coupling * nd(rng), coupling * nd(rng));
                    q.H(a, b) = h;
                    q.H(b, a) = std::conj(h);
                }
    return q;
}

}  // namespace

TEST_CASE("single angle mode is divided by i<k,omega>") {
    auto cfg = make_config(1, {{1}}, 1);
    const auto dec = build_blocks(cfg, 0.0);
    QuadraticForm q = frequencies(cfg, {{0.0}, {0.0, 0.0}});
    q.omega(0) = 1.0;
    const cplx c(0.7, -0.3);
    const Polynomial f = single(cfg, mono({1}, {}, {}, {}, c));
    const auto sol = solve_kam_homological(q, f, Polynomial(cfg), dec, 3, 0.1);
    CHECK(sol.s.size() == 1);
    CHECK(std::abs(sol.s.coeff(mono({1}, {}, {}, {})) - (-I * c)) < 1e-15);
    CHECK(sol.h1.size() == 0);
    CHECK(sol.residual < 1e-14);
}

TEST_CASE("constant goes to a1") {
    auto cfg = make_config(1, {{1}}, 1);
    const auto dec = build_blocks(cfg, 0.0);
    const QuadraticForm q = frequencies(cfg, {{0.3}, {0.1, 0.2}});
    const cplx c(1.5, 0.25);
    const auto sol = solve_kam_homological(q, single(cfg, mono({0}, {}, {}, {}, c)), Polynomial(cfg), dec, 2, 0.1);
    CHECK(sol.s.size() == 0);
    CHECK(sol.a1 == c);
    CHECK(sol.residual < 1e-15);
}

TEST_CASE("Sylvester block solve") {
    Eigen::MatrixXcd Z = Eigen::MatrixXcd::Zero(3, 3), R = Eigen::MatrixXcd::Random(3, 3);
    const Eigen::MatrixXcd X0 = sylvester_block_solve(2.0 * I, Z, Z, R, 1);
    CHECK((X0 - R / (2.0 * I)).cwiseAbs().maxCoeff() < 1e-15);

    Eigen::MatrixXcd A(1, 1), B(1, 1), r(1, 1);
    A << 1.0;
    B << 3.0;
    r << cplx(2.0, 1.0);
    CHECK(std::abs(sylvester_block_solve(I, A, B, r, 1)(0, 0) - r(0, 0) / (I + 4.0)) < 1e-15);
    CHECK(std::abs(sylvester_block_solve(I, A, B, r, -1)(0, 0) - r(0, 0) / (I - 2.0)) < 1e-15);
    CHECK_THROWS_AS(sylvester_block_solve(cplx(2.0), A, B, r, -1, 0.5), SmallDivisorError);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXcd a = Eigen::MatrixXcd::Random(4, 4), b = Eigen::MatrixXcd::Random(4, 4);
        a = (a + a.adjoint()).eval();
        b = (b + b.adjoint()).eval();
        const Eigen::MatrixXcd rhs = Eigen::MatrixXcd::Random(4, 4);
        const cplx lambda(nd(rng), nd(rng));
        for (int sign : {1, -1}) {
            const Eigen::MatrixXcd X = sylvester_block_solve(lambda, a, b, rhs, sign);
            const Eigen::MatrixXcd res = lambda * X + a * X + double(sign) * X * b - rhs;
            CHECK(res.cwiseAbs().maxCoeff() < 1e-11);
        }
    }
}

TEST_CASE("KAM homological residual on random instances") {
    auto cfg = make_config(1, {{1}}, 3);  // six normal sites
    REQUIRE(cfg->n_normal() == 6);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    int solved = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const double dp = 3;
        const auto dec = build_blocks(cfg, dp);
        const QuadraticForm q = coupled_form(cfg, dec, rng, 0.2);
        const Polynomial f_low = random_low_jet(cfg, 40, 3, rng);
        Polynomial f_high(cfg);
        for (int t = 0; t < 30; ++t) {
            Monomial m = random_monomial(*cfg, 3, 2, rng);
            if (!is_low_key(make_key(1, 6, m))) f_high.add(m);
        }
        std::optional<HomologicalSolution> maybe;
        try {
            maybe = solve_kam_homological(q, f_low, f_high, dec, dp, 1e-6);
        } catch (const SmallDivisorError&) {
            continue;
        }
        ++solved;
        const HomologicalSolution& sol = *maybe;
        CHECK(sol.residual < 1e-9);
        for (const auto& [key, c] : sol.s.terms()) {
            CHECK(fourier_norm(key) <= dp);
            CHECK(weighted_degree(key) <= 2);
        }
        // Pointwise check of the equation with the bracket against h taken from gradients.
        const Polynomial h = quadratic_hamiltonian(q);
        const Polynomial rest = truncate_fourier(f_low, dp) +
                                truncate_fourier(poisson_bracket(f_high, sol.s, 2).filter(
                                                     [](const Key& k) { return is_low_key(k); }),
                                                 dp) -
                                sol.h1;
        for (int p = 0; p < 3; ++p) {
            const PhasePoint z = random_point(*cfg, rng);
            const cplx lhs = bracket_at(h, sol.s, z) + evaluate(rest, z);
            CHECK(std::abs(lhs) < 1e-8 * (1.0 + sol.s.l1()));
        }
        // Resonant remainder: φ-independent, H₁ couples equal norms inside one block.
        for (const auto& [key, c] : sol.h1.terms()) CHECK(fourier_norm(key) == 0);
        const auto& L = cfg->normal();
        for (int a = 0; a < 6; ++a)
            for (int b = 0; b < 6; ++b)
                if (std::abs(sol.H1(a, b)) > 0) CHECK(norm2(L[a]) == norm2(L[b]));
    }
    CHECK(solved >= 15);
}

TEST_CASE("small divisor is reported with its sector") {
    auto cfg = make_config(1, {{1}}, 1);
    const auto dec = build_blocks(cfg, 0.0);
    QuadraticForm q = frequencies(cfg, {{0.0}, {0.0, 0.0}});
    q.omega(0) = 1.0;
    const int a = *cfg->normal_index({0});
    q.Omega(a) = 1.0 + 1e-4;
    // e^{iφ} u_a has divisor −ω + Ω_a = 1e−4.
    const Polynomial f = single(cfg, mono({1}, {}, {{a, 1}}, {}));
    try {
        solve_kam_homological(q, f, Polynomial(cfg), dec, 2, 1e-3);
        FAIL("expected SmallDivisorError");
    } catch (const SmallDivisorError& e) {
        CHECK(e.sector == "u");
        CHECK(e.k == std::vector<int>{1});
        CHECK(e.value == doctest::Approx(1e-4));
    }
    CHECK_NOTHROW(solve_kam_homological(q, f, Polynomial(cfg), dec, 2, 1e-5));
}

TEST_CASE("homological solve is linear and preserves momentum") {
    auto cfg = make_config(1, {{1}}, 3);
    const auto dec = build_blocks(cfg, 3);
    std::mt19937_64 rng(23);
    const QuadraticForm q = coupled_form(cfg, dec, rng, 0.1);
    const Polynomial f_low = random_graded_polynomial(cfg, 2, 25, 3, Site{0}, rng);
    Polynomial f_high(cfg);
    const Polynomial raw = random_graded_polynomial(cfg, 3, 40, 2, Site{0}, rng);
    for (const auto& [key, c] : raw.terms())
        if (!is_low_key(key)) f_high.add(key, c);
    const auto sol = solve_kam_homological(q, f_low, f_high, dec, 3, 1e-8);
    for (const auto& [key, c] : sol.s.terms()) CHECK(momentum(key, *cfg) == Site{0});
    for (const auto& [key, c] : sol.h1.terms()) CHECK(momentum(key, *cfg) == Site{0});

    const cplx scale(-2.5, 0.75);
    Polynomial f2 = f_low;
    f2 *= scale;
    const auto lin1 = solve_kam_homological(q, f_low, Polynomial(cfg), dec, 3, 1e-8);
    const auto lin2 = solve_kam_homological(q, f2, Polynomial(cfg), dec, 3, 1e-8);
    Polynomial s1 = lin1.s, h1 = lin1.h1;
    s1 *= scale;
    h1 *= scale;
    CHECK(max_coeff_diff(s1, lin2.s) < 1e-12 * (1 + s1.max_abs()));
    CHECK(max_coeff_diff(h1, lin2.h1) < 1e-12 * (1 + h1.max_abs()));
}

TEST_CASE("normal-form homological step") {
    auto cfg = make_config(1, {{1}}, 3);
    const auto dec = build_blocks(cfg, 0.0);
    std::mt19937_64 rng(31);
    NfThresholds t;
    t.kappa_t = 1e-2;
    t.delta_t = 4;
    t.M = 2;
    t.N = 1.0;
    std::vector<bool> is_low(cfg->n_normal(), false);

    SUBCASE("odd layer has no resonant part and residual is small") {
        int solved = 0;
        for (int trial = 0; trial < 20; ++trial) {
            const QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0.0, 1.0, rng));
            const LowModes low = low_modes(q, dec, t.N);
            REQUIRE(low.sites.size() == 2);
            for (int a : low.sites) is_low[a] = true;
            Polynomial P(cfg);
            for (int tries = 0; P.size() < 25 && tries < 100000; ++tries) {
                const Monomial m = random_monomial(*cfg, 3, 3, rng);
                const Key key = make_key(1, cfg->n_normal(), m);
                int nh = 0;
                for (int f = 0; f < key.n_factors(); ++f) {
                    const Var v = key.var(f);
                    if (v.kind != VarKind::r && !is_low[v.index]) nh += key.exponent(f);
                }
                if (weighted_degree(key) == 3 && nh <= 2) P.add(m);
            }
            std::optional<NfGeneratorStep> maybe;
            try {
                maybe = solve_nf_homological(q, low, P, dec, t, 2);
            } catch (const SmallDivisorError&) {
                continue;
            }
            ++solved;
            const NfGeneratorStep& step = *maybe;
            CHECK(step.Zhat.size() == 0);
            CHECK(step.residual < 1e-9);
            Polynomial h = diagonal_h(q);
            const Polynomial TP = truncate_nf(P, is_low, t.delta_t);
            for (int p = 0; p < 3; ++p) {
                const PhasePoint z = random_point(*cfg, rng);
                const cplx lhs = bracket_at(h, step.F, z) + evaluate(TP, z) - evaluate(step.Zhat, z);
                CHECK(std::abs(lhs) < 1e-8 * (1.0 + step.F.l1()));
            }
            for (const auto& [key, c] : step.F.terms()) CHECK(weighted_degree(key) == 3);
        }
        CHECK(solved >= 15);
    }

    SUBCASE("action times a low pair is resonant at quartic order") {
        const QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0.0, 1.0, rng));
        const LowModes low = low_modes(q, dec, t.N);
        const int b = low.sites[0];
        const cplx c(0.4, -1.1);
        Polynomial P(cfg);
        P.add(mono({0}, {{0, 1}}, {{b, 1}}, {{b, 1}}, c));
        P.add(mono({1}, {{0, 1}}, {{b, 2}}, {}, 0.3));
        const auto step = solve_nf_homological(q, low, P, dec, t, 3);
        CHECK(step.Zhat.size() == 1);
        CHECK(step.Zhat.coeff(mono({0}, {{0, 1}}, {{b, 1}}, {{b, 1}})) == c);
        CHECK(step.F.coeff(mono({0}, {{0, 1}}, {{b, 1}}, {{b, 1}})) == cplx(0.0));
        CHECK(step.residual < 1e-12);
        for (const auto& [key, cc] : step.Zhat.terms()) CHECK(fourier_norm(key) == 0);
    }
}
