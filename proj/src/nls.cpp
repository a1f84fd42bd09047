#include "nlskam/nls.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>

namespace nlskam {

namespace {

const cplx I(0.0, 1.0);

double generalized_binomial(double e, int j) {
    double c = 1.0;
    for (int t = 0; t < j; ++t) c *= (e - t) / (t + 1);
    return c;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

}  // namespace

void NlsModel::validate() const {
    if (dim < 1) throw std::invalid_argument("model dimension must be positive");
    if (lattice_cutoff < 0) throw std::invalid_argument("lattice cutoff must be nonnegative");
    if (tangential.empty()) throw std::invalid_argument("at least one tangential site is required");
    if (q.size() != tangential.size()) throw std::invalid_argument("one torus action per tangential site is required");
    for (double x : q)
        if (!(x > 0.0)) throw std::invalid_argument("torus actions q_a must be positive");
    if (degree_cutoff < 2) throw std::invalid_argument("degree cutoff must be at least 2");
    for (const auto& [a, v] : V_hat)
        if (static_cast<int>(a.size()) != dim) throw std::invalid_argument("potential site has wrong dimension");
}

ConfigPtr NlsModel::config() const { return make_config(dim, tangential, lattice_cutoff); }

double NlsModel::potential(const Site& a) const {
    auto it = V_hat.find(a);
    return it == V_hat.end() ? 0.0 : it->second;
}

NlsModel with_potential(NlsModel model, const LatticeConfig& cfg, const ParameterPoint& w) {
    if (static_cast<int>(w.tangential.size()) != cfg.n_tangential() ||
        static_cast<int>(w.normal.size()) != cfg.n_normal())
        throw std::invalid_argument("parameter point does not match the lattice");
    for (int i = 0; i < cfg.n_tangential(); ++i) model.V_hat[cfg.tangential()[i]] = w.tangential[i];
    for (int a = 0; a < cfg.n_normal(); ++a) model.V_hat[cfg.normal()[a]] = w.normal[a];
    return model;
}

Polynomial CartesianModel::hamiltonian() const {
    Polynomial h = nonlinear;
    for (int a = 0; a < lambda.size(); ++a) h.add(make_key(0, config->n_normal(), Monomial{{}, {}, {{a, 1}}, {{a, 1}}, 1.0}), lambda(a));
    return h;
}

CartesianModel nls_cartesian(const NlsModel& model) {
    model.validate();
    const ConfigPtr full = make_config(model.dim, {}, model.lattice_cutoff);
    CartesianModel cm{full, Eigen::VectorXd(), Polynomial(full)};
    const auto& sites = cm.config->normal();
    const int n = static_cast<int>(sites.size());
    cm.lambda.resize(n);
    for (int a = 0; a < n; ++a) cm.lambda(a) = static_cast<double>(norm2(sites[a])) + model.potential(sites[a]);

    // ∫|u|^{2m} = Σ_{a₁+…+a_m = b₁+…+b_m} u_{a₁}…u_{a_m} v_{b₁}…v_{b_m} over ordered tuples.
    for (std::size_t m = 1; m < model.F_taylor.size(); ++m) {
        const double Fm = model.F_taylor[m];
        if (Fm == 0.0 || model.eps == 0.0) continue;
        std::vector<int> us(m), vs(m);
        std::function<void(std::size_t, Site)> choose_v;
        std::function<void(std::size_t, Site)> choose_u = [&](std::size_t i, Site sum) {
            if (i == m) {
                choose_v(0, sum);
                return;
            }
            for (int a = 0; a < n; ++a) {
                us[i] = a;
                choose_u(i + 1, sum + sites[a]);
            }
        };
        choose_v = [&](std::size_t i, Site rest) {
            if (i + 1 == m) {
                auto last = cm.config->normal_index(rest);
                if (!last) return;
                vs[i] = *last;
                Monomial mono{{}, {}, {}, {}, model.eps * Fm};
                for (int a : us) mono.mu.emplace_back(a, 1);
                for (int b : vs) mono.nu.emplace_back(b, 1);
                cm.nonlinear.add(mono);
                return;
            }
            for (int b = 0; b < n; ++b) {
                vs[i] = b;
                choose_v(i + 1, rest - sites[b]);
            }
        };
        choose_u(0, Site(model.dim, 0));
    }
    cm.nonlinear.prune(0.0);
    return cm;
}

NlsHamiltonian build_nls_hamiltonian(const NlsModel& model, const ConfigPtr& cfg) {
    model.validate();
    if (!(*cfg == *model.config())) throw std::invalid_argument("lattice config does not match the model");
    const CartesianModel cart = nls_cartesian(model);
    const int nA = cfg->n_tangential();

    ParameterPoint w;
    for (const auto& a : cfg->tangential()) w.tangential.push_back(model.potential(a));
    for (const auto& a : cfg->normal()) w.normal.push_back(model.potential(a));
    NlsHamiltonian out{frequencies(cfg, w), Polynomial(cfg, model.degree_cutoff)};

    const auto& sites = cart.config->normal();
    for (const auto& [key, c] : cart.nonlinear.terms()) {
        const Monomial m = to_monomial(key, c);
        std::vector<int> eu(nA, 0), ev(nA, 0);
        Monomial base;
        base.k.assign(nA, 0);
        int normal_deg = 0;
        auto place = [&](const std::vector<std::pair<int, int>>& factors, bool is_u) {
            for (auto [s, e] : factors) {
                if (auto t = cfg->tangential_index(sites[s])) {
                    (is_u ? eu : ev)[*t] += e;
                } else {
                    (is_u ? base.mu : base.nu).emplace_back(*cfg->normal_index(sites[s]), e);
                    normal_deg += e;
                }
            }
        };
        place(m.mu, true);
        place(m.nu, false);
        if (normal_deg > model.degree_cutoff) continue;
        for (int i = 0; i < nA; ++i) base.k[i] = ev[i] - eu[i];

        // Π_i (r_i + q_i)^{(eu_i+ev_i)/2}, expanded in r up to the remaining degree budget.
        std::function<void(int, int, cplx, std::vector<std::pair<int, int>>&)> expand =
            [&](int i, int budget, cplx coeff, std::vector<std::pair<int, int>>& alpha) {
                if (i == nA) {
                    Monomial t = base;
                    t.alpha = alpha;
                    t.coeff = coeff;
                    out.f.add(t);
                    return;
                }
                const double e = 0.5 * (eu[i] + ev[i]);
                const double qi = model.q[i];
                for (int j = 0; 2 * j <= budget; ++j) {
                    const double b = generalized_binomial(e, j);
                    if (b == 0.0) break;
                    if (j > 0) alpha.emplace_back(i, j);
                    expand(i + 1, budget - 2 * j, coeff * b * std::pow(qi, e - j), alpha);
                    if (j > 0) alpha.pop_back();
                }
            };
        std::vector<std::pair<int, int>> alpha;
        expand(0, model.degree_cutoff - normal_deg, m.coeff, alpha);
    }
    // The linear part Σ ω_a (r_a + q_a) + Σ Ω_a u_a v_a sits in q; its constant is dropped.
    out.f.prune(0.0);
    return out;
}

Field to_field(const NlsModel& model, const CartesianModel& cart, const ConfigPtr& cfg, const PhaseState& z) {
    Field u = Field::Zero(cart.config->n_normal());
    for (int i = 0; i < cfg->n_tangential(); ++i) {
        const int s = *cart.config->normal_index(cfg->tangential()[i]);
        u(s) = std::sqrt(z.r[i] + model.q[i]) * std::exp(-I * z.phi[i]);
    }
    const double h = 1.0 / std::sqrt(2.0);
    for (int a = 0; a < cfg->n_normal(); ++a) {
        const int s = *cart.config->normal_index(cfg->normal()[a]);
        u(s) = h * (z.xi[a] + I * z.eta[a]);
    }
    return u;
}

Scheme parse_scheme(const std::string& s) {
    if (s == "implicit-midpoint") return Scheme::implicit_midpoint;
    if (s == "split-step") return Scheme::split_step;
    throw std::invalid_argument("unknown integration scheme '" + s + "'");
}

std::string to_string(Scheme s) { return s == Scheme::implicit_midpoint ? "implicit-midpoint" : "split-step"; }

NlsFlow::NlsFlow(const Eigen::VectorXd& lambda, const Polynomial& nonlinear) : lambda_(lambda) {
    if (nonlinear.nA() != 0) throw std::invalid_argument("flow expects a Cartesian polynomial without angles");
    if (nonlinear.nL() != lambda.size()) throw std::invalid_argument("flow dimensions do not match");
    field_terms_.resize(lambda.size());
    for (const auto& [key, c] : nonlinear.sorted_terms()) {
        const Monomial m = to_monomial(key, c);
        energy_terms_.push_back({c, m.mu, m.nu});
        for (std::size_t f = 0; f < m.nu.size(); ++f) {
            Term t{c * double(m.nu[f].second), m.mu, m.nu};
            if (--t.v[f].second == 0) t.v.erase(t.v.begin() + f);
            field_terms_[m.nu[f].first].push_back(std::move(t));
        }
    }
}

cplx NlsFlow::eval(const Term& t, const Field& u) {
    cplx x = t.coeff;
    for (auto [s, e] : t.u)
        for (int k = 0; k < e; ++k) x *= u(s);
    for (auto [s, e] : t.v)
        for (int k = 0; k < e; ++k) x *= std::conj(u(s));
    return x;
}

Field NlsFlow::nonlinear_field(const Field& u) const {
    Field out(u.size());
    for (int a = 0; a < u.size(); ++a) {
        cplx s = 0.0;
        for (const Term& t : field_terms_[a]) s += eval(t, u);
        out(a) = -I * s;
    }
    return out;
}

double NlsFlow::energy(const Field& u) const {
    cplx e = 0.0;
    for (int a = 0; a < u.size(); ++a) e += lambda_(a) * std::norm(u(a));
    for (const Term& t : energy_terms_) e += eval(t, u);
    return e.real();
}

Field NlsFlow::implicit_midpoint(const Field& u, double dt, bool include_linear) const {
    Field cay = Field::Ones(u.size()), gain = Field::Constant(u.size(), dt);
    if (include_linear)
        for (int a = 0; a < u.size(); ++a) {
            const cplx den = 1.0 + I * lambda_(a) * dt / 2.0;
            cay(a) = (1.0 - I * lambda_(a) * dt / 2.0) / den;
            gain(a) = dt / den;
        }
    const Field base = cay.cwiseProduct(u);
    Field z = base + gain.cwiseProduct(nonlinear_field(u));
    for (int it = 0; it < max_iter; ++it) {
        const Field next = base + gain.cwiseProduct(nonlinear_field(0.5 * (u + z)));
        const double change = (next - z).cwiseAbs().maxCoeff();
        z = next;
        if (change <= tol * (1.0 + z.cwiseAbs().maxCoeff())) return z;
    }
    throw std::runtime_error("implicit midpoint iteration did not converge");
}

Field NlsFlow::step(const Field& u, double dt, Scheme scheme) const {
    if (scheme == Scheme::implicit_midpoint) return implicit_midpoint(u, dt, true);
    Field half(u.size());
    for (int a = 0; a < u.size(); ++a) half(a) = std::exp(-I * lambda_(a) * dt / 2.0);
    Field z = half.cwiseProduct(u);
    if (!energy_terms_.empty()) z = implicit_midpoint(z, dt, false);
    return half.cwiseProduct(z);
}

Trajectory integrate(const NlsFlow& flow, const Field& z0, double dt, double t_end, Scheme scheme,
                     const std::vector<double>& sample_times) {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (t_end < 0.0) throw std::invalid_argument("t_end must be nonnegative");
    const long n_steps = std::max(0L, static_cast<long>(std::ceil(t_end / dt - 1e-9)));
    const double h = n_steps > 0 ? t_end / n_steps : dt;
    std::set<long> wanted;
    for (double t : sample_times) wanted.insert(std::clamp(std::lround(t / h), 0L, n_steps));
    Trajectory tr;
    const double e0 = flow.energy(z0);
    Field z = z0;
    auto record = [&](long n) {
        tr.t.push_back(n * h);
        tr.z.push_back(z);
        tr.energy_drift = std::max(tr.energy_drift, std::abs(flow.energy(z) - e0) / std::max(std::abs(e0), 1e-300));
    };
    if (wanted.count(0)) record(0);
    for (long n = 1; n <= n_steps; ++n) {
        z = flow.step(z, h, scheme);
        if (wanted.count(n)) record(n);
    }
    tr.steps = n_steps;
    return tr;
}

double torus_distance(const Field& u, const CartesianModel& cart, const NlsModel& model, double p) {
    const auto& sites = cart.config->normal();
    std::vector<int> tang(sites.size(), -1);
    for (std::size_t i = 0; i < model.tangential.size(); ++i) tang[*cart.config->normal_index(model.tangential[i])] = i;
    double s = 0.0;
    for (int a = 0; a < u.size(); ++a) {
        const double w = std::pow(bracket_weight(sites[a]), 2.0 * p);
        const double I_a = std::norm(u(a));
        if (tang[a] >= 0) {
            const double d = std::sqrt(2.0 * I_a) - std::sqrt(2.0 * model.q[tang[a]]);
            s += d * d * w;
        } else {
            s += 2.0 * I_a * w;
        }
    }
    return std::sqrt(s);
}

std::vector<double> field_momentum(const Field& u, const CartesianModel& cart) {
    const auto& sites = cart.config->normal();
    std::vector<double> m(cart.config->dim(), 0.0);
    for (int a = 0; a < u.size(); ++a)
        for (int i = 0; i < cart.config->dim(); ++i) m[i] += sites[a][i] * std::norm(u(a));
    return m;
}

StabilityReport stability_experiment(const NlsModel& model, const StabilityOptions& opt,
                                     const std::vector<Polynomial>* kam) {
    if (!(opt.delta > 0.0 && opt.delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    if (opt.M < 1) throw std::invalid_argument("M must be at least 1");
    if (opt.n_samples < 2) throw std::invalid_argument("n_samples must be at least 2");
    const ConfigPtr cfg = model.config();
    const CartesianModel cart = nls_cartesian(model);
    const NlsFlow flow(cart.lambda, cart.nonlinear);

    StabilityReport rep;
    rep.delta = opt.delta;
    rep.M = opt.M;
    rep.seed = opt.seed;
    rep.horizon = std::pow(opt.delta, -opt.M);
    rep.mode = kam ? "pipeline" : "direct";

    PhaseState z;
    z.phi.assign(cfg->n_tangential(), opt.phase0);
    z.r.assign(cfg->n_tangential(), 0.0);
    z.xi.assign(cfg->n_normal(), 0.0);
    z.eta.assign(cfg->n_normal(), 0.0);
    if (kam) z = kam_point_map(*kam, z);
    Field u = to_field(model, cart, cfg, z);
    rep.torus_offset = torus_distance(u, cart, model, opt.p);

    // Perturbation of weighted size δ in the normal modes.
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> nd;
    Field pert = Field::Zero(u.size());
    double size2 = 0.0;
    for (int a = 0; a < cfg->n_normal(); ++a) {
        const Site& site = cfg->normal()[a];
        const int s = *cart.config->normal_index(site);
        cplx wv(nd(rng), nd(rng));
        if (opt.pure_mode) wv = site == *opt.pure_mode ? cplx(1.0) : cplx(0.0);
        pert(s) = wv / std::pow(bracket_weight(site), opt.p);
        size2 += 2.0 * std::norm(wv);
    }
    if (size2 == 0.0) throw std::invalid_argument("pure mode is not a normal site");
    u += pert * (opt.delta / std::sqrt(size2));

    rep.initial_distance = torus_distance(u, cart, model, opt.p);
    const long n_steps = static_cast<long>(std::ceil(rep.horizon / opt.dt - 1e-9));
    const double h = rep.horizon / n_steps;
    std::set<long> grid{0, n_steps};
    for (int k = 0; k < opt.n_samples; ++k)
        grid.insert(std::lround(std::pow(double(n_steps), double(k) / (opt.n_samples - 1))));
    const double e0 = flow.energy(u);
    const std::vector<double> m0 = field_momentum(u, cart);
    auto observe = [&](long n, const Field& x, double dist) {
        rep.samples.emplace_back(n * h, dist);
        rep.energy_drift = std::max(rep.energy_drift, std::abs(flow.energy(x) - e0) / std::max(std::abs(e0), 1e-300));
        const std::vector<double> m = field_momentum(x, cart);
        for (std::size_t i = 0; i < m.size(); ++i) rep.momentum_drift = std::max(rep.momentum_drift, std::abs(m[i] - m0[i]));
    };
    rep.max_distance = rep.initial_distance;
    observe(0, u, rep.initial_distance);
    for (long n = 1; n <= n_steps; ++n) {
        u = flow.step(u, h, opt.scheme);
        const double dist = torus_distance(u, cart, model, opt.p);
        if (!std::isfinite(dist)) throw std::runtime_error("integration diverged");
        rep.max_distance = std::max(rep.max_distance, dist);
        if (grid.count(n)) observe(n, u, dist);
    }
    rep.steps = n_steps;
    rep.pass = rep.max_distance < 2.0 * opt.delta;
    return rep;
}

std::string stability_csv_header() { return "t,distance"; }

std::string stability_csv_rows(const StabilityReport& r) {
    std::ostringstream os;
    for (const auto& [t, d] : r.samples) os << fmt(t) << ',' << fmt(d) << '\n';
    return os.str();
}

nlohmann::json to_json(const StabilityReport& r) {
    return {{"delta", r.delta},
            {"M", r.M},
            {"horizon", r.horizon},
            {"seed", r.seed},
            {"mode", r.mode},
            {"initial_distance", r.initial_distance},
            {"max_distance", r.max_distance},
            {"threshold", 2.0 * r.delta},
            {"torus_offset", r.torus_offset},
            {"energy_drift", r.energy_drift},
            {"momentum_drift", r.momentum_drift},
            {"steps", r.steps},
            {"n_samples", r.samples.size()},
            {"verdict", r.pass ? "pass" : "fail"}};
}

}  // namespace nlskam
