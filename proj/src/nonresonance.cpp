#include "nlskam/nonresonance.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "nlskam/norms.hpp"

namespace nlskam {

namespace {

using cplx = std::complex<double>;

/// Shared divisor scan over one base value ⟨l, λ̃⟩ − ⟨k, ω⟩.
class DivisorScan {
public:
    DivisorScan(const QuadraticForm& q, const BlockDecomposition& dec, std::vector<int> blocks, double sd4_limit,
                const MelnikovOptions& opt, MelnikovReport& rep)
        : q_(q), dec_(dec), blocks_(std::move(blocks)), sd4_limit_(sd4_limit), opt_(opt), rep_(rep) {
        const BlockEigen eig = block_eigensystems(q, dec);
        values_ = eig.values;
        allowed_.assign(dec.n_blocks(), false);
        for (int b : blocks_) allowed_[b] = true;
        if (!opt_.momentum_filter) {
            const int n = static_cast<int>(blocks_.size());
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const int a = blocks_[i], b = blocks_[j];
                    if (block_distance(dec, a, b) <= sd4_limit_ + 1e-12) near_pairs_.emplace_back(a, b);
                }
        }
    }

    bool done() const { return opt_.stop_at_first && !rep_.passed; }

    /// base = ⟨l, λ̃⟩ − ⟨k, ω⟩; target = the site momentum a normal factor must supply.
    void scan(double base, const Site& target, bool zero_base, double threshold, const std::vector<int>& k,
              const std::vector<int>& l) {
        const auto& cfg = *dec_.config;
        const auto& L = cfg.normal();
        const bool filter = opt_.momentum_filter;
        const bool target_zero = sup_norm(target) == 0;
        if (!zero_base && (!filter || target_zero)) test(std::abs(base), threshold, "sd1", -1, -1, k, l);
        if (done()) return;

        // sd2: u_b with b = target.
        if (filter) {
            if (auto b = cfg.normal_index(target); b && allowed_[dec_.block_of[*b]]) sd2(base, dec_.block_of[*b], threshold, k, l);
        } else {
            for (int b : blocks_) sd2(base, b, threshold, k, l);
        }
        if (done()) return;

        // sd3: u_a u_b with a + b = target; sd4: u_a v_b with a − b = target.
        if (filter) {
            std::set<std::pair<int, int>> same, opposite;
            for (int b : blocks_)
                for (int ia : dec_.blocks[b]) {
                    if (auto ib = cfg.normal_index(target - L[ia]); ib && allowed_[dec_.block_of[*ib]]) {
                        const int B = dec_.block_of[*ib];
                        same.insert({std::min(b, B), std::max(b, B)});
                    }
                    if (auto ib = cfg.normal_index(L[ia] - target); ib && allowed_[dec_.block_of[*ib]]) {
                        const int B = dec_.block_of[*ib];
                        if (block_distance(dec_, b, B) <= sd4_limit_ + 1e-12) opposite.insert({b, B});
                    }
                }
            for (auto [a, b] : same) sd3(base, a, b, threshold, k, l);
            for (auto [a, b] : opposite) sd4(base, a, b, zero_base, threshold, k, l);
        } else {
            for (std::size_t i = 0; i < blocks_.size() && !done(); ++i)
                for (std::size_t j = i; j < blocks_.size(); ++j) sd3(base, blocks_[i], blocks_[j], threshold, k, l);
            for (auto [a, b] : near_pairs_) sd4(base, a, b, zero_base, threshold, k, l);
        }
    }

private:
    void test(double value, double threshold, const char* kind, int a, int b, const std::vector<int>& k,
              const std::vector<int>& l) {
        ++rep_.tested;
        rep_.worst_margin = std::min(rep_.worst_margin, value - threshold);
        if (value >= threshold) return;
        rep_.passed = false;
        ++rep_.n_violations;
        if (rep_.violations.size() < opt_.max_recorded) rep_.violations.push_back({k, l, kind, a, b, value, threshold});
    }

    void sd2(double base, int b, double thr, const std::vector<int>& k, const std::vector<int>& l) {
        for (double x : values_[b]) test(std::abs(base + x), thr, "sd2", b, -1, k, l);
    }
    void sd3(double base, int a, int b, double thr, const std::vector<int>& k, const std::vector<int>& l) {
        for (double x : values_[a])
            for (double y : values_[b]) test(std::abs(base + x + y), thr, "sd3", a, b, k, l);
    }
    void sd4(double base, int a, int b, bool zero_base, double thr, const std::vector<int>& k, const std::vector<int>& l) {
        if (zero_base) {
            const auto& L = dec_.config->normal();
            if (a == b || norm2(L[dec_.blocks[a].front()]) == norm2(L[dec_.blocks[b].front()])) return;
        }
        for (double x : values_[a])
            for (double y : values_[b]) test(std::abs(base + x - y), thr, "sd4", a, b, k, l);
    }

    const QuadraticForm& q_;
    const BlockDecomposition& dec_;
    std::vector<int> blocks_;
    double sd4_limit_;
    const MelnikovOptions& opt_;
    MelnikovReport& rep_;
    std::vector<Eigen::VectorXd> values_;
    std::vector<bool> allowed_;
    std::vector<std::pair<int, int>> near_pairs_;
};

void check_dims(const QuadraticForm& q, const BlockDecomposition& dec) {
    if (!(*q.config == *dec.config)) throw std::invalid_argument("quadratic form and decomposition use different lattices");
    const int n = q.config->n_normal();
    if (q.Omega.size() != n || q.H.rows() != n || q.H.cols() != n || q.omega.size() != q.config->n_tangential())
        throw std::invalid_argument("quadratic form dimensions do not match the lattice");
}

/// −Σ_A k_i a_i.
Site angle_momentum(const LatticeConfig& cfg, const std::vector<int>& k) {
    Site m(cfg.dim(), 0);
    for (int i = 0; i < cfg.n_tangential(); ++i) m = m - k[i] * cfg.tangential()[i];
    return m;
}

void enumerate_rec(int n, int radius, std::vector<int>& cur, int pos, std::vector<std::vector<int>>& out) {
    if (pos == n) {
        out.push_back(cur);
        return;
    }
    for (int v = -radius; v <= radius; ++v) {
        cur[pos] = v;
        enumerate_rec(n, radius - std::abs(v), cur, pos + 1, out);
    }
    cur[pos] = 0;
}

}  // namespace

ParameterPoint sample_parameters(const LatticeConfig& cfg, double lo, double hi, std::mt19937_64& rng) {
    if (!(hi >= lo)) throw std::invalid_argument("sampling box must satisfy lo <= hi");
    std::uniform_real_distribution<double> U(lo, hi);
    ParameterPoint w;
    for (int i = 0; i < cfg.n_tangential(); ++i) w.tangential.push_back(U(rng));
    for (int j = 0; j < cfg.n_normal(); ++j) w.normal.push_back(U(rng));
    return w;
}

Eigen::MatrixXcd QuadraticForm::normal_matrix() const {
    Eigen::MatrixXcd A = H;
    for (int a = 0; a < Omega.size(); ++a) A(a, a) += Omega(a);
    return A;
}

QuadraticForm frequencies(ConfigPtr cfg, const ParameterPoint& w) {
    if (static_cast<int>(w.tangential.size()) != cfg->n_tangential() ||
        static_cast<int>(w.normal.size()) != cfg->n_normal())
        throw std::invalid_argument("parameter point does not cover the retained lattice");
    QuadraticForm q;
    q.config = cfg;
    q.omega.resize(cfg->n_tangential());
    q.Omega.resize(cfg->n_normal());
    for (int i = 0; i < cfg->n_tangential(); ++i) q.omega(i) = norm2(cfg->tangential()[i]) + w.tangential[i];
    for (int j = 0; j < cfg->n_normal(); ++j) q.Omega(j) = norm2(cfg->normal()[j]) + w.normal[j];
    q.H = Eigen::MatrixXcd::Zero(cfg->n_normal(), cfg->n_normal());
    return q;
}

BlockEigen block_eigensystems(const QuadraticForm& q, const BlockDecomposition& dec, double tol) {
    check_dims(q, dec);
    BlockEigen out;
    for (const auto& blk : dec.blocks) {
        const int n = static_cast<int>(blk.size());
        Eigen::MatrixXcd B(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) B(i, j) = q.H(blk[i], blk[j]) + (i == j ? cplx(q.Omega(blk[i])) : cplx(0.0));
        if ((B - B.adjoint()).cwiseAbs().maxCoeff() > tol) throw std::domain_error("block of Omega + H is not Hermitian");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(B);
        out.values.push_back(es.eigenvalues());
        out.vectors.push_back(es.eigenvectors());
    }
    return out;
}

std::vector<std::vector<double>> block_spectra(const QuadraticForm& q, const BlockDecomposition& dec) {
    const BlockEigen eig = block_eigensystems(q, dec);
    std::vector<std::vector<double>> out;
    for (const auto& v : eig.values) out.emplace_back(v.data(), v.data() + v.size());
    return out;
}

std::vector<std::vector<int>> enumerate_fourier(int n, int radius, bool include_zero) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(n, 0);
    if (radius >= 0) enumerate_rec(n, radius, cur, 0, out);
    if (!include_zero)
        out.erase(std::remove_if(out.begin(), out.end(),
                                 [](const std::vector<int>& k) { return std::all_of(k.begin(), k.end(), [](int x) { return x == 0; }); }),
                  out.end());
    return out;
}

MelnikovReport check_melnikov_kam(const QuadraticForm& q, const BlockDecomposition& dec, double kappa,
                                  double delta_prime, const MelnikovOptions& opt) {
    check_dims(q, dec);
    if (kappa < 0) throw std::invalid_argument("kappa must be nonnegative");
    MelnikovReport rep;
    std::vector<int> all(dec.n_blocks());
    for (int b = 0; b < dec.n_blocks(); ++b) all[b] = b;
    DivisorScan scan(q, dec, all, delta_prime + 2 * dec.d_delta, opt, rep);
    const auto& cfg = *q.config;
    for (const auto& k : enumerate_fourier(cfg.n_tangential(), static_cast<int>(std::floor(delta_prime + 1e-9)), true)) {
        double kw = 0.0;
        bool zero = true;
        for (int i = 0; i < cfg.n_tangential(); ++i) {
            kw += k[i] * q.omega(i);
            zero = zero && k[i] == 0;
        }
        const Site target = Site(cfg.dim(), 0) - angle_momentum(cfg, k);
        scan.scan(-kw, target, zero, kappa, k, {});
        if (scan.done()) break;
    }
    return rep;
}

LowModes low_modes(const QuadraticForm& q, const BlockDecomposition& dec, double N, double tol) {
    check_dims(q, dec);
    LowModes low;
    const auto& L = q.config->normal();
    for (int a = 0; a < q.config->n_normal(); ++a)
        if (norm(L[a]) <= N + 1e-12) low.sites.push_back(a);
    low.lambda.resize(low.sites.size());
    for (std::size_t i = 0; i < low.sites.size(); ++i) {
        const int a = low.sites[i];
        for (int b = 0; b < q.config->n_normal(); ++b)
            if (b != a && std::abs(q.H(a, b)) > tol)
                throw std::domain_error("H must be diagonal on the low modes");
        low.lambda(i) = q.Omega(a) + q.H(a, a).real();
    }
    for (int b = 0; b < dec.n_blocks(); ++b)
        if (norm(L[dec.blocks[b].front()]) > N + 1e-12) low.high_blocks.push_back(b);
    return low;
}

double nf_threshold(const NfThresholds& t, int l_norm) {
    const double e = t.c0 * (l_norm + 4.0) * (l_norm + 4.0);
    return t.kappa_t / (std::pow(4.0, t.M) * std::pow(t.N, e));
}

double nf_literal_log10_threshold(const NfThresholds& t, int l_norm) {
    const double big = std::pow(4.0 * t.d, 4.0 * t.d);
    return std::log10(t.kappa_t) - t.M * std::log10(4.0) - big * (l_norm + 4.0) * (l_norm + 4.0) * std::log10(t.N);
}

MelnikovReport check_melnikov_nf(const QuadraticForm& q, const BlockDecomposition& dec, const LowModes& low,
                                 const NfThresholds& t, const MelnikovOptions& opt) {
    check_dims(q, dec);
    MelnikovReport rep;
    rep.threshold_mode = "surrogate";
    rep.literal_log10_threshold = nf_literal_log10_threshold(t, 0);
    DivisorScan scan(q, dec, low.high_blocks, t.delta_t + 2 * dec.d_delta, opt, rep);
    const auto& cfg = *q.config;
    const auto& L = cfg.normal();
    const int nB = static_cast<int>(low.sites.size());
    const auto ks = enumerate_fourier(cfg.n_tangential(), static_cast<int>(std::floor(t.delta_t + 1e-9)), true);
    const auto ls = enumerate_fourier(nB, t.M + 2, true);
    for (const auto& l : ls) {
        int l_norm = 0;
        double lw = 0.0;
        Site lm(cfg.dim(), 0);
        for (int i = 0; i < nB; ++i) {
            l_norm += std::abs(l[i]);
            lw += l[i] * low.lambda(i);
            if (l[i] != 0) lm = lm + l[i] * L[low.sites[i]];
        }
        const double thr = nf_threshold(t, l_norm);
        for (const auto& k : ks) {
            double kw = 0.0;
            bool kzero = true;
            for (int i = 0; i < cfg.n_tangential(); ++i) {
                kw += k[i] * q.omega(i);
                kzero = kzero && k[i] == 0;
            }
            const Site target = Site(cfg.dim(), 0) - (angle_momentum(cfg, k) + lm);
            scan.scan(lw - kw, target, kzero && l_norm == 0, thr, k, l);
            if (scan.done()) return rep;
        }
    }
    return rep;
}

std::pair<double, double> wilson_interval(int successes, int n, double z) {
    if (n <= 0) return {0.0, 1.0};
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1 + z2 / n;
    const double centre = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::min(p, std::max(0.0, centre - half)), std::max(p, std::min(1.0, centre + half))};
}

MeasureEstimate estimate_excluded_measure(ConfigPtr cfg, double delta, double kappa, double delta_prime, int n_samples,
                                          double box_lo, double box_hi, unsigned long seed, const MelnikovOptions& opt) {
    if (n_samples < 1) throw std::invalid_argument("at least one sample is required");
    const BlockDecomposition dec = build_blocks(cfg, delta);
    std::mt19937_64 rng(seed);
    MelnikovOptions fast = opt;
    fast.stop_at_first = true;
    fast.max_recorded = 1;
    MeasureEstimate est;
    est.kappa = kappa;
    est.delta_prime = delta_prime;
    est.n_samples = n_samples;
    est.seed = seed;
    for (int s = 0; s < n_samples; ++s) {
        const QuadraticForm q = frequencies(cfg, sample_parameters(*cfg, box_lo, box_hi, rng));
        if (!check_melnikov_kam(q, dec, kappa, delta_prime, fast).passed) ++est.n_excluded;
    }
    est.fraction = static_cast<double>(est.n_excluded) / n_samples;
    std::tie(est.ci_low, est.ci_high) = wilson_interval(est.n_excluded, n_samples);
    return est;
}

std::vector<AssumptionCheck> check_assumptions(const QuadraticForm& q, const AssumptionConstants& c, double dH_norm,
                                               double Lambda, double gamma) {
    const auto& L = q.config->normal();
    const int n = q.config->n_normal();
    std::vector<AssumptionCheck> out;
    // Ratio |Ω_a − |a|²| / (c1 e^{−c2|a|}) maximized over a.
    double closeness = 0.0, lower = std::numeric_limits<double>::infinity();
    double sum_min = lower, diff_min = lower;
    for (int a = 0; a < n; ++a) {
        closeness = std::max(closeness, std::abs(q.Omega(a) - norm2(L[a])) / (c.c1 * std::exp(-c.c2 * norm(L[a]))));
        lower = std::min(lower, std::abs(q.Omega(a)));
        for (int b = 0; b < n; ++b) {
            sum_min = std::min(sum_min, std::abs(q.Omega(a) + q.Omega(b)));
            if (norm2(L[a]) != norm2(L[b])) diff_min = std::min(diff_min, std::abs(q.Omega(a) - q.Omega(b)));
        }
    }
    const double Hnorm = n ? Eigen::JacobiSVD<Eigen::MatrixXcd>(q.H).singularValues()(0) : 0.0;
    const double toeplitz = lipschitz_seminorm(hermitian_to_matrix(q.H, q.config), Lambda, gamma, 3).value;
    out.push_back({"as3_exponential_closeness", closeness, 1.0, closeness <= 1.0});
    out.push_back({"as4_lower_bound", lower, c.c3, lower >= c.c3});
    out.push_back({"as5_sum_lower_bound", sum_min, c.c3, sum_min >= c.c3});
    out.push_back({"as6_difference_lower_bound", diff_min, c.c3, diff_min >= c.c3});
    out.push_back({"as7_H_norm", Hnorm, c.c3 / 4, Hnorm <= c.c3 / 4});
    out.push_back({"as8_dH_norm", dH_norm, c.c4, dH_norm <= c.c4});
    out.push_back({"as9_toeplitz_lipschitz", toeplitz, c.c5, toeplitz <= c.c5});
    return out;
}

nlohmann::json to_json(const MelnikovReport& r) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : r.violations)
        v.push_back({{"k", x.k}, {"l", x.l}, {"kind", x.kind}, {"block_a", x.block_a}, {"block_b", x.block_b},
                     {"value", x.value}, {"threshold", x.threshold}});
    return {{"passed", r.passed},
            {"worst_margin", std::isfinite(r.worst_margin) ? nlohmann::json(r.worst_margin) : nlohmann::json(nullptr)},
            {"tested", r.tested},
            {"n_violations", r.n_violations},
            {"threshold_mode", r.threshold_mode},
            {"literal_log10_threshold", r.literal_log10_threshold},
            {"violations", v}};
}

nlohmann::json to_json(const std::vector<AssumptionCheck>& checks) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : checks) j.push_back({{"name", c.name}, {"value", c.value}, {"bound", c.bound}, {"holds", c.holds}});
    return j;
}

}  // namespace nlskam
