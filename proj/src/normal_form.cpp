#include <cmath>
#include <map>

#include "nlskam/kam.hpp"

namespace nlskam {

NfParameters choose_nf_parameters(double delta, int M, double p, int d, double rho, double gamma_m,
                                  double delta_t_cap) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    if (M < 1) throw std::invalid_argument("M must be at least 1");
    if (!(p > 1.0)) throw std::invalid_argument("p must exceed 1");
    if (d < 1) throw std::invalid_argument("dimension must be positive");
    NfParameters out;
    out.N = std::pow(delta, -(M + 1.0) / (p - 1.0));
    out.kappa_t = std::pow(delta, 1.0 / (900.0 * M));
    const double l = std::log(1.0 / delta);
    const double gap = std::min(gamma_m, rho);
    out.delta_t_literal = gap > 0.0 ? 800.0 * M * l * l / gap : std::numeric_limits<double>::infinity();
    out.delta_t = std::min(out.delta_t_literal, delta_t_cap);
    out.tail_bound = std::pow(delta, M + 1.0);
    out.consistency = std::pow(out.N, p - 1.0) * out.tail_bound;
    return out;
}

int high_factor_count(const Key& key, const std::vector<bool>& is_low) {
    int n = 0;
    for (int f = 0; f < key.n_factors(); ++f) {
        const Var v = key.var(f);
        if (v.kind != VarKind::r && !is_low[v.index]) n += key.exponent(f);
    }
    return n;
}

bool is_nf_resonant(const Key& key, const std::vector<bool>& is_low, const LatticeConfig& cfg) {
    if (fourier_norm(key) != 0) return false;
    std::map<int, int> balance;  // low site → exponent of u minus exponent of v
    int hu = -1, hv = -1, nh = 0;
    for (int f = 0; f < key.n_factors(); ++f) {
        const Var v = key.var(f);
        if (v.kind == VarKind::r) continue;
        const int e = key.exponent(f);
        if (is_low[v.index]) {
            balance[v.index] += v.kind == VarKind::u ? e : -e;
            continue;
        }
        nh += e;
        (v.kind == VarKind::u ? hu : hv) = v.index;
    }
    for (const auto& [site, b] : balance)
        if (b != 0) return false;
    if (nh == 0) return true;
    if (nh != 2 || hu < 0 || hv < 0) return false;
    return norm2(cfg.normal()[hu]) == norm2(cfg.normal()[hv]);
}

NormalFormResult partial_normal_form(const QuadraticForm& q, const Polynomial& f, const BlockDecomposition& dec,
                                     const NfOptions& opt) {
    if (opt.M < 1) throw std::invalid_argument("M must be at least 1");
    const int D = opt.degree_cutoff < 0 ? opt.M + 3 : opt.degree_cutoff;
    if (D < opt.M + 2) throw std::invalid_argument("degree cutoff must be at least M + 2");
    const LowModes low = low_modes(q, dec, opt.thresholds.N);
    const LatticeConfig& cfg = *q.config;
    std::vector<bool> is_low(cfg.n_normal(), false);
    for (int a : low.sites) is_low[a] = true;

    NormalFormResult res{Polynomial(q.config, D), Polynomial(q.config, D), Polynomial(q.config, D),
                         Polynomial(q.config, D), Polynomial(q.config, D)};
    res.low_sites = low.sites;
    res.lambda_t = low.lambda;
    res.thresholds = opt.thresholds;
    res.M = opt.M;
    res.degree_cutoff = D;

    const Polynomial h = quadratic_hamiltonian(q, D);
    Polynomial total = h + f.with_cutoff(D);
    for (int j0 = 2; j0 <= opt.M + 1; ++j0) {
        const Polynomial top = total.filter([&](const Key& k) {
            return weighted_degree(k) == j0 + 1 && high_factor_count(k, is_low) <= 2;
        });
        const NfGeneratorStep step = solve_nf_homological(q, low, top, dec, opt.thresholds, j0);
        const LieResult lr = lie_transform(total, step.F, D, opt.lie_order_cap);
        NfLayerDiagnostics diag;
        diag.j0 = j0;
        diag.n_top = top.size();
        diag.n_generator = step.F.size();
        diag.residual = step.residual;
        diag.divisor_margin = step.divisor_margin;
        diag.conjugacy = pointwise_conjugacy(total, lr.value, 0.0, step.F, 7919u * j0);
        diag.lie_tail = lr.tail;
        diag.zhat_max = step.Zhat.max_abs();
        total = lr.value;
        total.prune();
        diag.n_terms = total.size();
        if (total.size() > opt.term_budget) throw DegreeOverflow("normal form exceeded the term budget");
        res.unmodeled_tail += lr.tail;
        res.layers.push_back(diag);
        res.generators.push_back(step.F);
    }

    res.transformed = total - h;
    res.transformed.prune(0.0);
    const auto& L = cfg.normal();
    const double dt = opt.thresholds.delta_t;
    for (const auto& [key, c] : res.transformed.terms()) {
        const int nh = high_factor_count(key, is_low);
        if (nh >= 3) {
            res.Q.add(key, c);
            continue;
        }
        if (weighted_degree(key) > opt.M + 2) {
            res.P.add(key, c);
            continue;
        }
        bool in_band = fourier_norm(key) <= dt + 1e-12;
        if (in_band && nh == 2) {
            int hu = -1, hv = -1;
            for (int g = 0; g < key.n_factors(); ++g) {
                const Var v = key.var(g);
                if (v.kind != VarKind::r && !is_low[v.index]) (v.kind == VarKind::u ? hu : hv) = v.index;
            }
            if (hu >= 0 && hv >= 0) in_band = distance(L[hu], L[hv]) <= dt + 1e-12;
        }
        if (!in_band) res.R.add(key, c);
        else if (is_nf_resonant(key, is_low, cfg)) res.Z.add(key, c);
        else {
            res.P.add(key, c);
            res.nonresonant_max = std::max(res.nonresonant_max, std::abs(c));
        }
    }
    return res;
}

nlohmann::json to_json(const NfParameters& p) {
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("inf"); };
    return {{"N", p.N},
            {"kappa_t", p.kappa_t},
            {"delta_t", p.delta_t},
            {"delta_t_literal", num(p.delta_t_literal)},
            {"tail_bound", p.tail_bound},
            {"consistency", p.consistency}};
}

nlohmann::json to_json(const NormalFormResult& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers)
        layers.push_back({{"j0", l.j0},
                          {"n_top", l.n_top},
                          {"n_generator", l.n_generator},
                          {"n_terms", l.n_terms},
                          {"residual", l.residual},
                          {"divisor_margin", l.divisor_margin},
                          {"conjugacy", l.conjugacy},
                          {"lie_tail", l.lie_tail},
                          {"zhat_max", l.zhat_max}});
    std::vector<Site> low;
    for (int a : r.low_sites) low.push_back(r.transformed.config().normal()[a]);
    return {{"M", r.M},
            {"degree_cutoff", r.degree_cutoff},
            {"N", r.thresholds.N},
            {"kappa_t", r.thresholds.kappa_t},
            {"delta_t", r.thresholds.delta_t},
            {"low_sites", low},
            {"lambda_t", std::vector<double>(r.lambda_t.data(), r.lambda_t.data() + r.lambda_t.size())},
            {"n_Z", r.Z.size()},
            {"n_P", r.P.size()},
            {"n_R", r.R.size()},
            {"n_Q", r.Q.size()},
            {"nonresonant_max", r.nonresonant_max},
            {"unmodeled_tail", r.unmodeled_tail},
            {"layers", layers}};
}

}  // namespace nlskam
