#include <random>

#include "doctest.h"
#include "nlskam/norms.hpp"
#include "support.hpp"

using namespace nlskam;
using namespace nlskam::testing;

namespace {

LatticeMatrix one_entry(ConfigPtr cfg, const Site& a, const Site& b, const Eigen::Matrix2cd& m) {
    LatticeMatrix A(cfg);
    A.set(*cfg->normal_index(a), *cfg->normal_index(b), m);
    return A;
}

}  // namespace

TEST_CASE("p-tame norm of simple fields") {
    auto cfg = make_config(1, {{1}}, 3);
    DomainParams dom;
    CHECK(ptame_vfield_norm(Polynomial(cfg), dom) == 0.0);

    const int a = *cfg->normal_index({3});
    const cplx c(0.7, -0.2);
    Polynomial xi(cfg, kNoCutoff, Coordinates::real);
    xi.add(mono({0}, {}, {{a, 1}}, {}, c));
    const double want = std::abs(c) * std::max(std::pow(3.0, dom.p), 3.0) / dom.sigma;
    CHECK(ptame_vfield_norm(to_complex(xi), dom) == doctest::Approx(want).epsilon(1e-12));

    Polynomial lin(cfg);
    lin.add(mono({0}, {{0, 1}}, {}, {}, 2.5));
    CHECK(ptame_vfield_norm(lin, dom) == doctest::Approx(2.5));
    const WeightedReport w = weighted_vfield_report(lin, dom, 50);
    CHECK(w.value == doctest::Approx(2.5));
    CHECK(w.consistent);
}

TEST_CASE("p-tame norm is a norm on random instances") {
    std::mt19937_64 rng(40);
    auto cfg = make_config(1, {{1}}, 2);
    DomainParams dom;
    for (int t = 0; t < 8; ++t) {
        const Polynomial f = random_polynomial(cfg, 4, 8, 2, rng);
        const Polynomial g = random_polynomial(cfg, 4, 8, 2, rng);
        const double nf = ptame_vfield_norm(f, dom), ng = ptame_vfield_norm(g, dom);
        const cplx c(-1.3, 0.4);
        CHECK(ptame_vfield_norm(c * f, dom) == doctest::Approx(std::abs(c) * nf).epsilon(1e-9));
        CHECK(ptame_vfield_norm(f + g, dom) <= (nf + ng) * (1 + 1e-9));
    }
}

TEST_CASE("weighted norm never exceeds the p-tame norm") {
    std::mt19937_64 rng(41);
    auto cfg = make_config(1, {{1}}, 2);
    DomainParams dom;
    for (int t = 0; t < 10; ++t) {
        const Polynomial f = random_polynomial(cfg, 4, 10, 2, rng);
        const WeightedReport rep = weighted_vfield_report(f, dom, 200, 100 + t);
        CHECK(rep.value <= rep.ptame + 1e-12);
        CHECK(rep.consistent);
    }
}

TEST_CASE("parameter derivatives enlarge the norm") {
    auto cfg = make_config(1, {{1}}, 2);
    DomainParams dom;
    auto family = [cfg](const std::vector<double>& w) {
        Polynomial f(cfg);
        f.add(mono({1}, {}, {}, {}, w[0] * w[0]));
        return f;
    };
    const double plain = ptame_vfield_norm(family({0.5}), dom);
    const double with_w = ptame_vfield_norm(family, {0.5}, dom);
    CHECK(with_w == doctest::Approx(plain * (1 + 2 / 0.5)).epsilon(1e-5));
}

TEST_CASE("bracket inequality constant is stable across a battery") {
    std::mt19937_64 rng(42);
    auto cfg = make_config(1, {{1}}, 2);
    DomainParams dom{0.5, 0.25, 0.5, 0.0, 2.0};
    NormOptions opt;
    const Polynomial zero(cfg);
    const Polynomial f0 = random_polynomial(cfg, 3, 5, 1, rng);
    CHECK(bracket_norm_check(f0, zero, dom, 0.1, 0.1).lhs == 0.0);
    std::vector<double> constants;
    for (int t = 0; t < 50; ++t) {
        const Polynomial f = random_polynomial(cfg, 3, 5, 1, rng);
        const Polynomial g = random_polynomial(cfg, 3, 5, 1, rng);
        const auto rep = bracket_norm_check(f, g, dom, 0.1, 0.1);
        constants.push_back(rep.constant);
        if (t == 0) {
            const auto scaled = bracket_norm_check(cplx(3.0) * f, g, dom, 0.1, 0.1);
            CHECK(scaled.constant == doctest::Approx(rep.constant).epsilon(1e-9));
        }
    }
    const double C = *std::max_element(constants.begin(), constants.end());
    CHECK(C < 10.0);
    for (double c : constants) CHECK(c <= C);
}

TEST_CASE("matrix gamma norm") {
    auto cfg = make_config(1, {}, 3);
    LatticeMatrix zero(cfg);
    CHECK(matrix_gamma_norm(zero, 0.3) == 0.0);
    const LatticeMatrix id = one_entry(cfg, {1}, {1}, Eigen::Matrix2cd::Identity());
    CHECK(matrix_gamma_norm(id, 0.1) == doctest::Approx(1.0));

    Eigen::Matrix2cd m;
    m << 1.0, 2.0, 0.0, -1.0;
    const LatticeMatrix A = one_entry(cfg, {2}, {-1}, m);
    // π part [[0,1],[−1,0]] (modulus norm 1), rest [[1,1],[1,−1]] (modulus norm 2).
    CHECK(matrix_gamma_norm(A, 0.0) == doctest::Approx(2.0));
    CHECK(matrix_gamma_norm(A, 0.5) == doctest::Approx(std::max(std::exp(1.5), 2.0 * std::exp(0.5))));
    CHECK_THROWS_AS(matrix_gamma_norm(A, -1.0), std::invalid_argument);
}

TEST_CASE("band truncation") {
    auto cfg = make_config(1, {}, 5);
    std::mt19937_64 rng(43);
    std::normal_distribution<double> nd;
    LatticeMatrix A(cfg);
    for (int i = 0; i < cfg->n_normal(); ++i)
        for (int j = 0; j < cfg->n_normal(); ++j) {
            Eigen::Matrix2cd m;
            m << cplx(nd(rng), nd(rng)), cplx(nd(rng), nd(rng)), cplx(nd(rng), nd(rng)), cplx(nd(rng), nd(rng));
            A.set(i, j, m);
        }
    const LatticeMatrix T = band_truncate(A, 3.0);
    const LatticeMatrix TT = band_truncate(T, 3.0);
    CHECK(T.entries.size() == TT.entries.size());
    for (const auto& [ab, m] : T.entries) CHECK((m - TT.at(ab.first, ab.second)).norm() < 1e-14);
    CHECK(matrix_gamma_norm(T, 0.2) <= matrix_gamma_norm(A, 0.2) + 1e-12);

    LatticeMatrix D(cfg);
    for (int i = 0; i < cfg->n_normal(); ++i) D.set(i, i, Eigen::Matrix2cd::Identity() * (1.0 + i));
    CHECK(band_truncate(D, 0.0).entries.size() == D.entries.size());

    Eigen::Matrix2cd rest;
    rest << 1.0, 0.0, 0.0, -1.0;
    CHECK(band_truncate(one_entry(cfg, {4}, {0}, rest), 3.0).entries.empty());
    CHECK_FALSE(band_truncate(one_entry(cfg, {4}, {-3}, rest), 3.0).entries.empty());
}

TEST_CASE("quadratic forms and lattice matrices") {
    auto cfg = make_config(1, {{1}}, 3);
    std::mt19937_64 rng(44);
    std::normal_distribution<double> nd;
    Polynomial q(cfg);
    for (int t = 0; t < 12; ++t) {
        const int a = rng() % cfg->n_normal(), b = rng() % cfg->n_normal();
        const int kind = rng() % 3;
        Monomial m = kind == 0 ? mono({0}, {}, {{a, 1}}, {{b, 1}}) : kind == 1 ? mono({0}, {}, {{a, 1}, {b, 1}}, {})
                                                                               : mono({0}, {}, {}, {{a, 1}, {b, 1}});
        if (a == b && kind) m = kind == 1 ? mono({0}, {}, {{a, 2}}, {}) : mono({0}, {}, {}, {{a, 2}});
        m.coeff = cplx(nd(rng), nd(rng));
        q.add(m);
    }
    const LatticeMatrix A = quadratic_to_matrix(q);
    CHECK(max_coeff_diff(matrix_to_quadratic(A), q) < 1e-14);

    const int n = cfg->n_normal();
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(n, n);
    H(1, 2) = cplx(0.3, 0.2);
    H(2, 1) = std::conj(H(1, 2));
    H(0, 0) = 1.5;
    const LatticeMatrix B = hermitian_to_matrix(H, cfg);
    for (const auto& [ab, m] : B.entries) CHECK((m - pi_part(m)).norm() < 1e-15);
    const Polynomial back = matrix_to_quadratic(B);
    CHECK(std::abs(back.coeff(mono({0}, {}, {{1, 1}}, {{2, 1}})) - H(1, 2)) < 1e-15);
    CHECK(std::abs(back.coeff(mono({0}, {}, {{0, 1}}, {{0, 1}})) - 1.5) < 1e-15);
}

TEST_CASE("Lipschitz seminorm") {
    auto cfg = make_config(1, {}, 12);
    LatticeMatrix zero(cfg);
    const LipschitzReport z = lipschitz_seminorm(zero, 1.0, 0.1, 3);
    CHECK(z.value == 0.0);
    CHECK_FALSE(z.inconclusive);

    // π part depends on a − b, the rest on a + b: every shift limit is exact.
    const int n = cfg->n_normal();
    LatticeMatrix conv(cfg);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const int a = cfg->normal()[i][0], b = cfg->normal()[j][0];
            const double f = std::exp(-std::abs(a - b)), g = 0.3 * std::exp(-std::abs(a + b));
            Eigen::Matrix2cd m;
            m << f + g, 0.0, 0.0, f - g;
            conv.set(i, j, m);
        }
    const LipschitzReport c = lipschitz_seminorm(conv, 1.0, 0.2, 3);
    CHECK(c.value == doctest::Approx(matrix_gamma_norm(conv, 0.2)));
    CHECK(c.directions_probed == 4);
    CHECK(c.domain_points > 0);

    LatticeMatrix diag(cfg);
    for (int i = 0; i < n; ++i) diag.set(i, i, Eigen::Matrix2cd::Identity() * (1.0 / (1 + std::abs(cfg->normal()[i][0]))));
    const LipschitzReport d = lipschitz_seminorm(diag, 1.0, 0.2, 3);
    CHECK(d.value > matrix_gamma_norm(diag, 0.2));

    auto tiny = make_config(1, {}, 1);
    CHECK(lipschitz_seminorm(LatticeMatrix(tiny), 3.0, 0.0, 1).inconclusive);
}
