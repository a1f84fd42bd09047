#include "nlskam/kam.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

namespace nlskam {

namespace {

constexpr double kPi = 3.14159265358979323846;

double diameter_at(const ConfigPtr& cfg, double delta) { return block_diameter(build_blocks(cfg, delta)); }

double inv_or(double d, double fallback) { return d > 0.0 ? 1.0 / d : fallback; }

double low_norm(const Polynomial& f, const DomainParams& dom) {
    return ptame_vfield_norm(split_low_high(f).first, dom);
}

double high_norm(const Polynomial& f, const DomainParams& dom) {
    NormOptions cheap;
    cheap.restarts = 3;
    cheap.iterations = 30;
    return ptame_vfield_norm(split_low_high(f).second, dom, cheap);
}

/// Moves the constant term of f into the energy.
void strip_constant(Polynomial& f, cplx& energy) {
    const std::vector<int> k0(f.nA(), 0);
    const Monomial one{k0, {}, {}, {}, 1.0};
    const cplx c = f.coeff(one);
    if (c != cplx(0.0)) {
        energy += c;
        f.add(make_key(f.nA(), f.nL(), one), -c);
        f.prune(0.0);
    }
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

}  // namespace

double outer_epsilon(double eps_prev) {
    const double l = std::log(1.0 / eps_prev);
    return std::exp(-l * l / 20.0);
}

DomainParams RoundSchedule::domain(int j) const {
    const double t = static_cast<double>(j) / n_inner;
    DomainParams d;
    d.rho = rho - t * (rho - rho_next);
    d.sigma = sigma - t * (sigma - sigma_next);
    d.mu = d.sigma * d.sigma;
    d.gamma = gamma - t * (gamma - gamma_next);
    d.p = p;
    return d;
}

std::vector<RoundSchedule> make_schedule(const ScheduleOptions& opt, const ConfigPtr& cfg) {
    if (!(opt.epsilon > 0.0 && opt.epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
    if (opt.m_max < 0) throw std::invalid_argument("m_max must be non-negative");
    const int rounds = opt.m_max + 1;
    std::vector<double> eps(rounds + 1), theta(rounds + 1), rho(rounds + 1), sigma(rounds + 1), gamma(rounds + 1),
        Delta(rounds + 1), Delta_lit(rounds + 1), diam(rounds + 1);
    const double zeta2 = kPi * kPi / 6.0;
    double partial = 0.0;
    for (int m = 0; m <= rounds; ++m) {
        eps[m] = m == 0 ? opt.epsilon : outer_epsilon(eps[m - 1]);
        if (m > 0) partial += 1.0 / (double(m) * m);
        theta[m] = partial / (2.0 * zeta2);
        rho[m] = (1.0 - theta[m]) * opt.rho;
        sigma[m] = (1.0 - theta[m]) * opt.sigma;
    }
    Delta[0] = Delta_lit[0] = std::min(opt.delta, opt.delta_cap);
    diam[0] = diameter_at(cfg, Delta[0]);
    gamma[0] = std::min(opt.gamma, inv_or(diam[0], opt.gamma));
    for (int m = 1; m <= rounds; ++m) {
        const double l = std::log(1.0 / eps[m - 1]);
        const double gap = std::min(gamma[m - 1], rho[m - 1] - rho[m]);
        Delta_lit[m] = gap > 0.0 ? 80.0 * l * l / gap : std::numeric_limits<double>::infinity();
        Delta[m] = std::min(Delta_lit[m], opt.delta_cap);
        diam[m] = diameter_at(cfg, Delta[m]);
        gamma[m] = inv_or(diam[m], gamma[m - 1]);
    }

    std::vector<RoundSchedule> out;
    for (int m = 0; m < opt.m_max; ++m) {
        RoundSchedule r;
        r.m = m;
        r.eps = eps[m];
        r.eps_next = eps[m + 1];
        r.theta = theta[m];
        r.rho = rho[m];
        r.sigma = sigma[m];
        r.mu = sigma[m] * sigma[m];
        r.gamma = gamma[m];
        r.rho_next = rho[m + 1];
        r.sigma_next = sigma[m + 1];
        r.gamma_next = std::min(gamma[m + 1], gamma[m]);
        r.Delta = Delta[m];
        r.Delta_literal = Delta_lit[m];
        r.block_diameter = diam[m];
        const double l = std::log(1.0 / eps[m]);
        const double gap = std::min(r.gamma - r.gamma_next, r.rho - r.rho_next);
        r.delta_prime_literal = gap > 0.0 ? 80.0 * l * l / gap : std::numeric_limits<double>::infinity();
        r.delta_prime = std::min(r.delta_prime_literal, opt.delta_prime_cap);
        if (m == 0) {
            const double dp = diameter_at(cfg, r.delta_prime);
            r.Lambda = opt.lambda_const * std::max({opt.lambda0, diam[0] * diam[0], dp * dp});
        } else {
            r.Lambda = opt.lambda_const * diam[m] * diam[m];
        }
        r.kappa_literal = std::pow(eps[m], 1.0 / 400.0);
        r.kappa = opt.kappa.value_or(r.kappa_literal);
        r.p = opt.p;
        r.n_inner = opt.n_inner.value_or(std::max(1, static_cast<int>(std::floor(l))));
        if (r.n_inner < 1) throw std::invalid_argument("n_inner must be positive");
        const double ratio = eps[m] / std::pow(eps[m], 1.0 / 20.0);
        r.eps_inner.resize(r.n_inner + 1);
        r.eps_inner[0] = eps[m];
        for (int j = 1; j <= r.n_inner; ++j) r.eps_inner[j] = ratio * r.eps_inner[j - 1];
        out.push_back(std::move(r));
    }
    return out;
}

StepResult kam_inner_step(const KamState& state, const RoundSchedule& round, int j, const BlockDecomposition& dec,
                          const ScheduleOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const int D = opt.degree_cutoff;
    auto [low, high] = split_low_high(state.f);
    StepDiagnostics diag;
    diag.round = round.m;
    diag.step = j;
    diag.low_before = ptame_vfield_norm(low, round.domain(j));

    const HomologicalSolution sol = solve_kam_homological(state.q, low, high, dec, round.delta_prime, round.kappa);
    const Polynomial total = quadratic_hamiltonian(state.q, D) + state.f.with_cutoff(D);
    const LieResult lr = lie_transform(total, sol.s, D, opt.lie_order_cap);

    StepResult out{state, sol.s, diag};
    KamState& next = out.state;
    for (int i = 0; i < next.q.omega.size(); ++i) next.q.omega(i) += sol.chi1(i).real();
    next.q.H += sol.H1;
    next.f = lr.value - quadratic_hamiltonian(next.q, D);
    strip_constant(next.f, next.energy);
    next.f.prune();
    if (next.f.size() > opt.term_budget) throw DegreeOverflow("KAM step exceeded the term budget");

    out.diag.low_after = low_norm(next.f, round.domain(j + 1));
    out.diag.high_after = high_norm(next.f, round.domain(j + 1));
    out.diag.divisor_margin = sol.divisor_margin;
    out.diag.residual = sol.residual;
    out.diag.conjugacy = pointwise_conjugacy(total, quadratic_hamiltonian(next.q, D) + next.f, next.energy - state.energy,
                                             sol.s, 1000u * round.m + j);
    out.diag.lie_tail = lr.tail;
    out.diag.growth = diag.low_before > 0.0 ? out.diag.low_after / diag.low_before : 0.0;
    out.diag.n_terms = next.f.size();
    out.diag.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

Eigen::VectorXd KamResult::omega_shift() const { return q_inf.omega - q0.omega; }

double KamResult::H_shift() const {
    const Eigen::MatrixXcd d = q_inf.H - q0.H;
    return d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
}

KamResult kam_outer_iterate(const QuadraticForm& q, const Polynomial& f, const ScheduleOptions& opt) {
    KamResult res{q, q, f.with_cutoff(opt.degree_cutoff)};
    res.schedule = make_schedule(opt, q.config);
    KamState state{q, f.with_cutoff(opt.degree_cutoff)};
    strip_constant(state.f, state.energy);

    for (const RoundSchedule& rs : res.schedule) {
        const double block_delta = std::max(rs.Delta, rs.delta_prime);
        const BlockDecomposition dec = build_blocks(q.config, block_delta);
        res.final_block_delta = block_delta;
        MelnikovOptions mopt;
        mopt.momentum_filter = opt.momentum_filter;
        mopt.max_recorded = 8;
        const MelnikovReport mel = check_melnikov_kam(state.q, dec, rs.kappa, rs.delta_prime, mopt);
        RoundReport rep;
        rep.m = rs.m;
        rep.eps = rs.eps;
        rep.eps_next = rs.eps_next;
        rep.kappa = rs.kappa;
        rep.Delta = rs.Delta;
        rep.delta_prime = rs.delta_prime;
        rep.melnikov_margin = mel.worst_margin;
        rep.melnikov_tested = mel.tested;
        if (!mel.passed) {
            std::ostringstream os;
            os << "nonresonance conditions fail in round " << rs.m;
            if (!mel.violations.empty()) {
                const auto& v = mel.violations.front();
                os << ": " << v.kind << " at k = (";
                for (std::size_t i = 0; i < v.k.size(); ++i) os << (i ? "," : "") << v.k[i];
                os << "), |d| = " << v.value << " < " << v.threshold;
            }
            throw ParameterExcluded(os.str(), rs.m);
        }

        rep.low_start = low_norm(state.f, rs.domain(0));
        double low = rep.low_start;
        for (int j = 0; j < rs.n_inner && low >= opt.underflow; ++j) {
            StepResult step = kam_inner_step(state, rs, j, dec, opt);
            const Eigen::VectorXd dw = step.state.q.omega - q.omega;
            step.diag.omega_shift = dw.size() ? dw.cwiseAbs().maxCoeff() : 0.0;
            const Eigen::MatrixXcd dH = step.state.q.H - q.H;
            step.diag.H_shift = dH.size() ? dH.cwiseAbs().maxCoeff() : 0.0;
            if (rs.m == 0 && j == 0 && step.diag.low_before > 0.0 && step.diag.low_after >= step.diag.low_before)
                throw ContractionFailure("low jet did not shrink after the first step (" + fmt(step.diag.low_before) +
                                         " -> " + fmt(step.diag.low_after) + ")");
            low = step.diag.low_after;
            res.steps.push_back(step.diag);
            res.generators.push_back(std::move(step.generator));
            state = std::move(step.state);
            ++rep.steps_run;
        }
        rep.low_end = low_norm(state.f, rs.domain(rs.n_inner));
        res.rounds.push_back(rep);
    }
    res.q_inf = state.q;
    res.f_inf = state.f;
    res.energy = state.energy;
    return res;
}

PhaseState hamiltonian_flow(const Polynomial& s, const PhaseState& z, double t, int substeps) {
    if (substeps < 1) throw std::invalid_argument("substeps must be positive");
    const double h = t / substeps;
    auto axpy = [](const PhaseState& a, const Tangent& d, double c) {
        PhaseState o = a;
        for (std::size_t i = 0; i < o.phi.size(); ++i) {
            o.phi[i] += c * d.phi[i];
            o.r[i] += c * d.r[i];
        }
        for (std::size_t i = 0; i < o.xi.size(); ++i) {
            o.xi[i] += c * d.xi[i];
            o.eta[i] += c * d.eta[i];
        }
        return o;
    };
    PhaseState x = z;
    for (int n = 0; n < substeps; ++n) {
        const Tangent k1 = vector_field_eval(s, x);
        const Tangent k2 = vector_field_eval(s, axpy(x, k1, h / 2));
        const Tangent k3 = vector_field_eval(s, axpy(x, k2, h / 2));
        const Tangent k4 = vector_field_eval(s, axpy(x, k3, h));
        x = axpy(x, k1, h / 6);
        x = axpy(x, k2, h / 3);
        x = axpy(x, k3, h / 3);
        x = axpy(x, k4, h / 6);
    }
    return x;
}

double pointwise_conjugacy(const Polynomial& before, const Polynomial& after, cplx shift, const Polynomial& s,
                           unsigned seed, double radius, int n_points, int substeps) {
    const LatticeConfig& cfg = before.config();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> nd;
    double worst = 0.0;
    for (int p = 0; p < n_points; ++p) {
        PhaseState z;
        for (int i = 0; i < cfg.n_tangential(); ++i) {
            z.phi.emplace_back(angle(rng));
            z.r.emplace_back(radius * radius * nd(rng));
        }
        for (int a = 0; a < cfg.n_normal(); ++a) {
            z.xi.emplace_back(radius * nd(rng));
            z.eta.emplace_back(radius * nd(rng));
        }
        const PhaseState w = hamiltonian_flow(s, z, 1.0, substeps);
        worst = std::max(worst, std::abs(evaluate(before, to_point(w)) - evaluate(after, to_point(z)) - shift));
    }
    return worst;
}

PhaseState kam_point_map(const std::vector<Polynomial>& generators, const PhaseState& z, int substeps) {
    PhaseState x = z;
    for (auto it = generators.rbegin(); it != generators.rend(); ++it) x = hamiltonian_flow(*it, x, 1.0, substeps);
    return x;
}

PhaseState kam_point_map(const KamResult& r, const PhaseState& z, int substeps) {
    return kam_point_map(r.generators, z, substeps);
}

std::string kam_diagnostics_csv_header() {
    return "round,step,low_norm_before,low_norm,high_norm,divisor_margin,omega_shift,H_shift,residual,conjugacy,"
           "lie_tail,growth,n_terms,wall_time_s";
}

std::string kam_diagnostics_csv_row(const StepDiagnostics& d, bool with_timing) {
    std::ostringstream os;
    os << d.round << ',' << d.step << ',' << fmt(d.low_before) << ',' << fmt(d.low_after) << ',' << fmt(d.high_after)
       << ',' << fmt(d.divisor_margin) << ',' << fmt(d.omega_shift) << ',' << fmt(d.H_shift) << ','
       << fmt(d.residual) << ',' << fmt(d.conjugacy) << ',' << fmt(d.lie_tail) << ',' << fmt(d.growth) << ','
       << d.n_terms << ',' << (with_timing ? fmt(d.wall_time) : std::string("0"));
    return os.str();
}

nlohmann::json to_json(const RoundSchedule& r) {
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("inf"); };
    return {{"m", r.m},
            {"epsilon", r.eps},
            {"epsilon_next", r.eps_next},
            {"theta", r.theta},
            {"rho", r.rho},
            {"sigma", r.sigma},
            {"mu", r.mu},
            {"gamma", r.gamma},
            {"Delta", r.Delta},
            {"Delta_literal", num(r.Delta_literal)},
            {"delta_prime", r.delta_prime},
            {"delta_prime_literal", num(r.delta_prime_literal)},
            {"block_diameter", r.block_diameter},
            {"Lambda", r.Lambda},
            {"kappa", r.kappa},
            {"kappa_literal", r.kappa_literal},
            {"n_inner", r.n_inner},
            {"epsilon_inner", r.eps_inner}};
}

nlohmann::json to_json(const KamResult& r) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& x : r.rounds)
        rounds.push_back({{"m", x.m},
                          {"epsilon_schedule", x.eps},
                          {"epsilon_next_schedule", x.eps_next},
                          {"low_norm_start", x.low_start},
                          {"low_norm_end", x.low_end},
                          {"below_schedule", x.low_end < x.eps_next},
                          {"kappa", x.kappa},
                          {"Delta", x.Delta},
                          {"delta_prime", x.delta_prime},
                          {"melnikov_margin", x.melnikov_margin},
                          {"melnikov_tested", x.melnikov_tested},
                          {"steps_run", x.steps_run}});
    nlohmann::json sched = nlohmann::json::array();
    for (const auto& s : r.schedule) sched.push_back(to_json(s));
    const Eigen::VectorXd dw = r.omega_shift();
    std::vector<double> omega0(r.q0.omega.data(), r.q0.omega.data() + r.q0.omega.size());
    std::vector<double> omega_inf(r.q_inf.omega.data(), r.q_inf.omega.data() + r.q_inf.omega.size());
    const Eigen::MatrixXcd dH = r.q_inf.H - r.q0.H;
    nlohmann::json H = nlohmann::json::array();
    const auto& L = r.q0.config->normal();
    for (int a = 0; a < dH.rows(); ++a)
        for (int b = 0; b < dH.cols(); ++b)
            if (std::abs(dH(a, b)) > 0.0) H.push_back({{"a", L[a]}, {"b", L[b]}, {"re", dH(a, b).real()}, {"im", dH(a, b).imag()}});
    return {{"omega0", omega0},
            {"omega_inf", omega_inf},
            {"omega_shift_max", dw.size() ? dw.cwiseAbs().maxCoeff() : 0.0},
            {"H_shift_max", r.H_shift()},
            {"H_inf_minus_H", H},
            {"energy", {r.energy.real(), r.energy.imag()}},
            {"n_generators", r.generators.size()},
            {"n_terms_f_inf", r.f_inf.size()},
            {"low_norm_final", r.rounds.empty() ? 0.0 : r.rounds.back().low_end},
            {"block_delta", r.final_block_delta},
            {"rounds", rounds},
            {"schedule", sched}};
}

}  // namespace nlskam
