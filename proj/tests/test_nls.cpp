#include <cmath>
#include <random>

#include "doctest.h"
#include "nlskam/nls.hpp"
#include "support.hpp"

using namespace nlskam;
using namespace nlskam::testing;

namespace {

const cplx I(0.0, 1.0);

NlsModel small_model(double eps, std::vector<double> F, int cutoff = 3) {
    NlsModel m;
    m.lattice_cutoff = cutoff;
    m.eps = eps;
    m.F_taylor = std::move(F);
    m.q = {0.7};
    for (int a = -cutoff; a <= cutoff; ++a) m.V_hat[{a}] = 0.1 * ((a * 7 + 3) % 5);
    return m;
}

/// ∫|u|^{2n} by quadrature on a grid fine enough to be exact for trigonometric polynomials of this degree.
double quadrature_power(const Field& u, const CartesianModel& cart, int n) {
    const int grid = 8 * cart.config->cutoff() * n + 16;
    double s = 0.0;
    for (int g = 0; g < grid; ++g) {
        const double x = 2.0 * 3.14159265358979323846 * g / grid;
        cplx field = 0.0;
        for (int a = 0; a < u.size(); ++a) field += u(a) * std::exp(I * double(cart.config->normal()[a][0]) * x);
        s += std::pow(std::norm(field), n);
    }
    return s / grid;
}

PhasePoint field_point(const Field& u) {
    PhasePoint z;
    for (int a = 0; a < u.size(); ++a) {
        z.u.push_back(u(a));
        z.v.push_back(std::conj(u(a)));
    }
    return z;
}

}  // namespace

TEST_CASE("linear nonlinearity gives the mass") {
    const NlsModel m = small_model(0.3, {0.0, 1.0});
    const auto cfg = m.config();
    const NlsHamiltonian H = build_nls_hamiltonian(m, cfg);
    const int nA = 1, nL = cfg->n_normal();
    Polynomial expect(cfg);
    expect.add(make_key(nA, nL, mono({0}, {}, {}, {})), 0.3 * 0.7);
    expect.add(make_key(nA, nL, mono({0}, {{0, 1}}, {}, {})), 0.3);
    for (int a = 0; a < nL; ++a) expect.add(make_key(nA, nL, mono({0}, {}, {{a, 1}}, {{a, 1}})), 0.3);
    CHECK(max_coeff_diff(H.f, expect) < 1e-15);
    CHECK(H.q.omega(0) == doctest::Approx(1.0 + m.potential({1})));
    CHECK(H.q.Omega(*cfg->normal_index({-2})) == doctest::Approx(4.0 + m.potential({-2})));
}

TEST_CASE("zero coupling gives f = 0") {
    const NlsModel m = small_model(0.0, {0.0, 0.0, 1.0});
    CHECK(build_nls_hamiltonian(m, m.config()).f.size() == 0);
}

TEST_CASE("quartic interaction matches quadrature") {
    const NlsModel m = small_model(0.5, {0.0, 0.0, 1.0, -0.25});
    const CartesianModel cart = nls_cartesian(m);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 5; ++t) {
        Field u(cart.config->n_normal());
        for (int a = 0; a < u.size(); ++a) u(a) = 0.4 * cplx(nd(rng), nd(rng));
        const double oracle = 0.5 * (quadrature_power(u, cart, 2) - 0.25 * quadrature_power(u, cart, 3));
        CHECK(std::abs(evaluate(cart.nonlinear, field_point(u)) - oracle) < 1e-12 * (1.0 + std::abs(oracle)));
    }
}

TEST_CASE("every monomial has zero momentum and the Hamiltonian is real") {
    for (int dim : {1, 2}) {
        NlsModel m = small_model(0.2, {0.0, 0.0, 1.0}, dim == 1 ? 3 : 2);
        m.dim = dim;
        m.V_hat.clear();
        m.tangential = {Site(dim, 0)};
        m.tangential[0][0] = 1;
        const auto cfg = m.config();
        const NlsHamiltonian H = build_nls_hamiltonian(m, cfg);
        const Site zero(dim, 0);
        for (const auto& [key, c] : H.f.terms()) CHECK(momentum(key, *cfg) == zero);
        CHECK(reality_defect(H.f) < 1e-15);
    }
}

TEST_CASE("action-angle substitution matches the Cartesian Hamiltonian") {
    NlsModel m = small_model(0.5, {0.0, 0.0, 1.0});
    m.degree_cutoff = 12;
    const auto cfg = m.config();
    const NlsHamiltonian H = build_nls_hamiltonian(m, cfg);
    const CartesianModel cart = nls_cartesian(m);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 5; ++t) {
        PhaseState z;
        z.phi = {nd(rng)};
        z.r = {0.01 * nd(rng)};
        for (int a = 0; a < cfg->n_normal(); ++a) {
            z.xi.emplace_back(0.05 * nd(rng));
            z.eta.emplace_back(0.05 * nd(rng));
        }
        const Field u = to_field(m, cart, cfg, z);
        const cplx lhs = evaluate(H.f, to_point(z));
        const cplx rhs = evaluate(cart.nonlinear, field_point(u));
        CHECK(std::abs(lhs - rhs) < 1e-10);
    }
}

TEST_CASE("harmonic mode returns after one period") {
    auto cfg = make_config(1, {}, 0);
    Eigen::VectorXd lambda(1);
    lambda << 2.0;
    const NlsFlow flow(lambda, Polynomial(cfg));
    Field z0(1);
    z0 << cplx(0.3, -0.2);
    const double pi = 3.14159265358979323846;
    const Trajectory tr = integrate(flow, z0, 1e-3, pi, Scheme::split_step, {pi});
    REQUIRE(tr.z.size() == 1);
    CHECK((tr.z[0] - z0).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("integrators conserve energy and are time reversible") {
    const NlsModel m = small_model(1e-3, {0.0, 0.0, 1.0}, 4);
    const CartesianModel cart = nls_cartesian(m);
    const NlsFlow flow(cart.lambda, cart.nonlinear);
    const auto cfg = m.config();
    PhaseState z;
    z.phi = {0.3};
    z.r = {0.0};
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    for (int a = 0; a < cfg->n_normal(); ++a) {
        z.xi.emplace_back(0.02 * nd(rng));
        z.eta.emplace_back(0.02 * nd(rng));
    }
    const Field u0 = to_field(m, cart, cfg, z);

    const Trajectory tr = integrate(flow, u0, 0.01, 1000.0, Scheme::split_step, {0.0, 500.0, 1000.0});
    CHECK(tr.steps == 100000);
    CHECK(tr.energy_drift < 1e-6);
    const auto p0 = field_momentum(u0, cart), p1 = field_momentum(tr.z.back(), cart);
    CHECK(std::abs(p0[0] - p1[0]) < 1e-10);

    for (Scheme s : {Scheme::split_step, Scheme::implicit_midpoint}) {
        Field u = u0;
        for (int n = 0; n < 500; ++n) u = flow.step(u, 0.01, s);
        for (int n = 0; n < 500; ++n) u = flow.step(u, -0.01, s);
        CHECK((u - u0).cwiseAbs().maxCoeff() < 1e-7);
    }
    CHECK(parse_scheme("implicit-midpoint") == Scheme::implicit_midpoint);
    CHECK_THROWS_AS(parse_scheme("euler"), std::invalid_argument);
}

TEST_CASE("torus distance") {
    const NlsModel m = small_model(1e-3, {0.0, 0.0, 1.0});
    const CartesianModel cart = nls_cartesian(m);
    const auto cfg = m.config();
    const int t = *cart.config->normal_index({1});
    Field u = Field::Zero(cart.config->n_normal());
    u(t) = std::sqrt(0.7) * std::exp(I * 0.4);
    CHECK(torus_distance(u, cart, m, 4.0) < 1e-15);

    // ξ_b = δ alone: δ ⟨b⟩^p.
    Field v = u;
    const int b = *cart.config->normal_index({-2});
    v(b) = 0.01 / std::sqrt(2.0);
    CHECK(torus_distance(v, cart, m, 4.0) == doctest::Approx(0.01 * 16.0));

    // Grid-search oracle over the tangential circle.
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 5; ++trial) {
        Field w(cart.config->n_normal());
        for (int a = 0; a < w.size(); ++a) w(a) = 0.3 * cplx(nd(rng), nd(rng));
        double normal2 = 0.0;
        for (int a = 0; a < w.size(); ++a)
            if (a != t) normal2 += 2.0 * std::norm(w(a)) * std::pow(bracket_weight(cart.config->normal()[a]), 8.0);
        const cplx zt = std::sqrt(2.0) * w(t);  // ξ + iη
        const double R = std::sqrt(2.0 * 0.7);
        auto dist2 = [&](double th) { return std::norm(zt - R * std::exp(I * th)); };
        double best = 1e300, arg = 0.0;
        for (int g = 0; g < 20000; ++g) {
            const double th = 2.0 * 3.14159265358979323846 * g / 20000;
            if (dist2(th) < best) best = dist2(th), arg = th;
        }
        double lo = arg - 1e-3, hi = arg + 1e-3;
        for (int it = 0; it < 200; ++it) {
            const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
            (dist2(m1) < dist2(m2) ? hi : lo) = (dist2(m1) < dist2(m2) ? m2 : m1);
        }
        const double oracle = std::sqrt(normal2 + dist2(0.5 * (lo + hi)) * std::pow(bracket_weight({1}), 8.0));
        CHECK(torus_distance(w, cart, m, 4.0) == doctest::Approx(oracle).epsilon(1e-6));
        // Rigid angle shifts leave the distance unchanged.
        Field shifted = w;
        shifted(t) *= std::exp(I * 1.3);
        CHECK(torus_distance(shifted, cart, m, 4.0) == doctest::Approx(torus_distance(w, cart, m, 4.0)));
    }
    (void)cfg;
}

TEST_CASE("torus is invariant and perturbed runs stay close") {
    NlsModel m = small_model(1e-3, {0.0, 0.0, 1.0}, 4);
    const CartesianModel cart = nls_cartesian(m);
    const NlsFlow flow(cart.lambda, cart.nonlinear);
    Field u = Field::Zero(cart.config->n_normal());
    u(*cart.config->normal_index({1})) = std::sqrt(0.7);
    const Trajectory tr = integrate(flow, u, 0.02, 100.0, Scheme::split_step, {100.0});
    CHECK(torus_distance(tr.z.back(), cart, m, 4.0) < 1e-12);

    StabilityOptions so;
    so.delta = 0.05;
    so.M = 2;
    so.seed = 3;
    so.n_samples = 50;
    const StabilityReport rep = stability_experiment(m, so, nullptr);
    CHECK(rep.initial_distance == doctest::Approx(0.05));
    CHECK(rep.pass);
    CHECK(rep.max_distance < 0.1);
    CHECK(rep.horizon == doctest::Approx(400.0));
    CHECK(rep.samples.front().first == 0.0);
    CHECK(rep.samples.back().first == doctest::Approx(400.0));
    CHECK(rep.momentum_drift < 1e-9);
    CHECK(rep.mode == "direct");

    so.pure_mode = Site{3};
    const StabilityReport pure = stability_experiment(m, so, nullptr);
    CHECK(pure.initial_distance == doctest::Approx(0.05));
}
