#include <random>
#include <set>
#include <tuple>

#include "doctest.h"
#include "nlskam/nonresonance.hpp"

using namespace nlskam;
using cplx = std::complex<double>;

namespace {

using Tag = std::tuple<std::vector<int>, std::vector<int>, std::string, int, int>;

std::set<Tag> tags(const MelnikovReport& r) {
    std::set<Tag> out;
    for (const auto& v : r.violations) out.insert({v.k, v.l, v.kind, v.block_a, v.block_b});
    return out;
}

/// Site-level enumeration of every divisor family for H = 0.
std::set<Tag> brute_kam(const QuadraticForm& q, const BlockDecomposition& dec, double kappa, int dp) {
    const auto& L = q.config->normal();
    const int n = q.config->n_normal();
    std::set<Tag> out;
    for (int k = -dp; k <= dp; ++k) {
        const double kw = k * q.omega(0);
        const std::vector<int> kv{k};
        if (k != 0 && std::abs(kw) < kappa) out.insert({kv, {}, "sd1", -1, -1});
        for (int a = 0; a < n; ++a) {
            const int A = dec.block_of[a];
            if (std::abs(-kw + q.Omega(a)) < kappa) out.insert({kv, {}, "sd2", A, -1});
            for (int b = 0; b < n; ++b) {
                const int B = dec.block_of[b];
                if (A <= B && std::abs(-kw + q.Omega(a) + q.Omega(b)) < kappa) out.insert({kv, {}, "sd3", A, B});
                double dmin = 1e300;
                for (int x : dec.blocks[A])
                    for (int y : dec.blocks[B]) dmin = std::min(dmin, distance(L[x], L[y]));
                if (dmin > dp + 2 * dec.d_delta + 1e-12) continue;
                if (k == 0 && norm2(L[a]) == norm2(L[b])) continue;
                if (std::abs(-kw + q.Omega(a) - q.Omega(b)) < kappa) out.insert({kv, {}, "sd4", A, B});
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("frequency map") {
    auto cfg = make_config(2, {{2, 1}}, 2);
    ParameterPoint w{{0.0}, std::vector<double>(cfg->n_normal(), 0.0)};
    w.normal[*cfg->normal_index({1, 0})] = 0.3;
    const QuadraticForm q = frequencies(cfg, w);
    CHECK(q.omega(0) == 5.0);
    CHECK(q.Omega(*cfg->normal_index({1, 0})) == doctest::Approx(1.3));
    CHECK_THROWS_AS(frequencies(cfg, ParameterPoint{{0.0}, {}}), std::invalid_argument);

    // ∂ω_b/∂w_a = δ_ab by forward differences.
    std::mt19937_64 rng(1);
    const ParameterPoint w0 = sample_parameters(*cfg, 0.0, 1.0, rng);
    const QuadraticForm q0 = frequencies(cfg, w0);
    for (int a = 0; a < cfg->n_normal(); a += 5) {
        ParameterPoint w1 = w0;
        w1.normal[a] += 1e-6;
        const QuadraticForm q1 = frequencies(cfg, w1);
        for (int b = 0; b < cfg->n_normal(); ++b) CHECK((q1.Omega(b) - q0.Omega(b)) / 1e-6 == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-6));
        CHECK(q1.omega(0) == q0.omega(0));
    }
}

TEST_CASE("block spectra") {
    auto cfg = make_config(1, {}, 3);
    const auto dec = build_blocks(cfg, 2.0);
    std::mt19937_64 rng(2);
    QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0, 1, rng));
    auto spec = block_spectra(q, dec);
    for (int b = 0; b < dec.n_blocks(); ++b)
        for (std::size_t i = 0; i < dec.blocks[b].size(); ++i) {
            const double x = q.Omega(dec.blocks[b][i]);
            CHECK(std::any_of(spec[b].begin(), spec[b].end(), [x](double y) { return std::abs(x - y) < 1e-14; }));
        }

    const int a = *cfg->normal_index({1}), c = *cfg->normal_index({-1});
    q.Omega(a) = q.Omega(c) = 2.0;
    const cplx h(0.3, 0.4);
    q.H(a, c) = h;
    q.H(c, a) = std::conj(h);
    spec = block_spectra(q, dec);
    const auto& s = spec[dec.block_of[a]];
    REQUIRE(s.size() == 2);
    CHECK(s[0] == doctest::Approx(2.0 - 0.5));
    CHECK(s[1] == doctest::Approx(2.0 + 0.5));

    // Weyl: a perturbation of norm η moves eigenvalues by at most η.
    QuadraticForm p = q;
    p.H(a, a) += 0.01;
    p.H(a, c) += cplx(0.0, 0.02);
    p.H(c, a) = std::conj(p.H(a, c));
    const double eta = Eigen::JacobiSVD<Eigen::MatrixXcd>(p.H - q.H).singularValues()(0);
    const auto ps = block_spectra(p, dec);
    for (std::size_t b = 0; b < ps.size(); ++b) {
        double tr = 0.0, diag = 0.0;
        for (std::size_t i = 0; i < ps[b].size(); ++i) {
            CHECK(std::abs(ps[b][i] - spec[b][i]) <= eta + 1e-12);
            tr += ps[b][i];
            diag += p.Omega(dec.blocks[b][i]) + p.H(dec.blocks[b][i], dec.blocks[b][i]).real();
        }
        CHECK(std::abs(tr - diag) < 1e-10);
    }
    q.H(a, c) = 1.0;
    q.H(c, a) = 2.0;
    CHECK_THROWS_AS(block_spectra(q, dec), std::domain_error);
}

TEST_CASE("Diophantine part of the KAM conditions") {
    auto cfg = make_config(1, {{0}}, 0);
    const auto dec = build_blocks(cfg, 2.0);
    QuadraticForm q = frequencies(cfg, {{1.0}, {}});
    MelnikovReport r = check_melnikov_kam(q, dec, 0.1, 3);
    CHECK(r.passed);
    CHECK(r.worst_margin == doctest::Approx(0.9));
    q.omega(0) = 0.05;
    r = check_melnikov_kam(q, dec, 0.1, 3);
    CHECK_FALSE(r.passed);
    bool k1 = false;
    for (const auto& v : r.violations) k1 = k1 || (v.kind == "sd1" && std::abs(v.k[0]) == 1);
    CHECK(k1);
}

TEST_CASE("KAM conditions agree with brute-force enumeration") {
    auto cfg = make_config(1, {{1}}, 4);
    const auto dec = build_blocks(cfg, 2.0);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0, 1, rng));
        for (double kappa : {0.05, 0.3}) {
            MelnikovOptions opt;
            opt.max_recorded = 100000;
            const MelnikovReport r = check_melnikov_kam(q, dec, kappa, 3, opt);
            CHECK(tags(r) == brute_kam(q, dec, kappa, 3));
            CHECK(r.passed == r.violations.empty());
        }
    }
}

TEST_CASE("momentum filter tests a subset") {
    auto cfg = make_config(1, {{1}}, 4);
    const auto dec = build_blocks(cfg, 2.0);
    std::mt19937_64 rng(4);
    const QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0, 1, rng));
    MelnikovOptions f;
    f.momentum_filter = true;
    f.max_recorded = 100000;
    MelnikovOptions nf = f;
    nf.momentum_filter = false;
    const auto a = check_melnikov_kam(q, dec, 0.3, 3, f), b = check_melnikov_kam(q, dec, 0.3, 3, nf);
    CHECK(a.tested < b.tested);
    for (const auto& tag : tags(a)) CHECK(tags(b).count(tag) == 1);
}

TEST_CASE("normal-form conditions against enumeration") {
    auto cfg = make_config(1, {{1}}, 1);
    const auto dec = build_blocks(cfg, 0.0);
    QuadraticForm q = frequencies(cfg, {{0.0}, {0.0, 0.0}});
    q.omega(0) = std::sqrt(2.0);
    const int low = *cfg->normal_index({0}), high = *cfg->normal_index({-1});
    q.Omega(low) = 1.0;
    q.Omega(high) = 1.37;
    const LowModes lm = low_modes(q, dec, 0.5);
    REQUIRE(lm.sites == std::vector<int>{low});
    REQUIRE(lm.high_blocks.size() == 1);

    NfThresholds t;
    t.kappa_t = 0.9;
    t.delta_t = 3;
    t.M = 1;
    t.N = 3.0;
    t.c0 = 0.05;
    MelnikovOptions opt;
    opt.max_recorded = 100000;
    const MelnikovReport r = check_melnikov_nf(q, dec, lm, t, opt);

    long violations = 0, tested = 0;
    double worst = 1e300;
    const double om = q.Omega(high);
    for (int l = -3; l <= 3; ++l)
        for (int k = -3; k <= 3; ++k) {
            const double thr = nf_threshold(t, std::abs(l));
            const double base = l * 1.0 - k * std::sqrt(2.0);
            std::vector<double> vals;
            if (k != 0 || l != 0) vals.push_back(std::abs(base));
            vals.push_back(std::abs(base + om));
            vals.push_back(std::abs(base + 2 * om));
            if (k != 0 || l != 0) vals.push_back(std::abs(base));  // α − β within the single high block
            for (double v : vals) {
                ++tested;
                worst = std::min(worst, v - thr);
                violations += v < thr;
            }
        }
    CHECK(r.tested == tested);
    CHECK(r.n_violations == violations);
    CHECK(r.worst_margin == doctest::Approx(worst));
    CHECK(r.threshold_mode == "surrogate");

    for (int l = 0; l < 5; ++l) CHECK(nf_threshold(t, l + 1) < nf_threshold(t, l));
    CHECK(nf_literal_log10_threshold(t, 0) < std::log10(nf_threshold(t, 0)));

    q.H(low, high) = 0.1;
    q.H(high, low) = 0.1;
    CHECK_THROWS_AS(low_modes(q, dec, 0.5), std::domain_error);
}

TEST_CASE("excluded measure") {
    auto cfg = make_config(1, {{1}}, 3);
    const auto zero = estimate_excluded_measure(cfg, 2.0, 0.0, 3, 100, 0, 1, 9);
    CHECK(zero.fraction == 0.0);
    const auto small = estimate_excluded_measure(cfg, 2.0, 0.02, 3, 200, 0, 1, 9);
    const auto big = estimate_excluded_measure(cfg, 2.0, 0.2, 3, 200, 0, 1, 9);
    CHECK(small.fraction <= big.fraction);
    CHECK(big.ci_low <= big.fraction);
    CHECK(big.fraction <= big.ci_high);

    // Samplewise nesting of the exclusion sets.
    const auto dec = build_blocks(cfg, 2.0);
    std::mt19937_64 rng(10);
    for (int s = 0; s < 50; ++s) {
        const QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0, 1, rng));
        if (!check_melnikov_kam(q, dec, 0.05, 3).passed) CHECK_FALSE(check_melnikov_kam(q, dec, 0.2, 3).passed);
    }
    const auto [lo, hi] = wilson_interval(0, 100);
    CHECK(lo < 1e-15);
    CHECK(hi == doctest::Approx(0.037).epsilon(0.02));
}

TEST_CASE("assumption battery reports measured constants") {
    auto cfg = make_config(1, {{1}}, 4);
    std::mt19937_64 rng(11);
    const QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, 0, 1, rng));
    const auto checks = check_assumptions(q, {}, 0.0, 1.0, 0.0);
    CHECK(checks.size() == 7);
    CHECK(checks[4].value == 0.0);
    CHECK(checks[4].holds);
    CHECK(to_json(checks).size() == 7);
}
