#include "nlskam/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "nlskam/errors.hpp"
#include "nlskam/nls.hpp"

namespace nlskam::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

// ---------------------------------------------------------------------------------------------------------------
// Configuration

void merge_into(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError(path.empty() ? "config root must be an object" : path + ": expected an object");
    for (const auto& [key, value] : user.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown key '" + here + "'");
        json& slot = base[key];
        if (slot.is_null()) {
            slot = value;
        } else if (slot.is_object()) {
            merge_into(slot, value, here);
        } else if (value.is_null()) {
            throw ConfigError(here + ": null is not allowed");
        } else if (slot.is_number() != value.is_number() || slot.is_boolean() != value.is_boolean() ||
                   slot.is_string() != value.is_string() || slot.is_array() != value.is_array()) {
            throw ConfigError(here + ": expected " + std::string(slot.type_name()) + ", got " + value.type_name());
        } else {
            slot = value;
        }
    }
}

/// Typed read with the field path in the diagnostic.
template <class T>
T get(const json& cfg, const std::string& path) {
    const json* node = &cfg;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) node = &node->at(part);
    try {
        return node->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + ": expected " + (std::is_same_v<T, std::string> ? "a string" : "a value of another kind") +
                          ", got " + node->dump());
    }
}

bool is_set(const json& cfg, const std::string& path) {
    const json* node = &cfg;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) node = &node->at(part);
    return !node->is_null();
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

std::vector<Site> read_sites(const json& cfg, const std::string& path, int dim) {
    const auto sites = get<std::vector<Site>>(cfg, path);
    for (const Site& s : sites) require(static_cast<int>(s.size()) == dim, path + ": every site needs " + std::to_string(dim) + " coordinates");
    return sites;
}

void validate(const json& cfg) {
    require(get<int>(cfg, "schema_version") == schema_version,
            "schema_version: unsupported value " + cfg.at("schema_version").dump());
    const int dim = get<int>(cfg, "lattice.dim");
    require(dim >= 1 && dim <= 3, "lattice.dim: must be 1, 2 or 3");
    require(get<int>(cfg, "lattice.cutoff") >= 0, "lattice.cutoff: must be nonnegative");
    const auto tang = read_sites(cfg, "lattice.tangential", dim);
    require(!tang.empty(), "lattice.tangential: at least one site is required");
    require(get<std::vector<double>>(cfg, "model.q").size() == tang.size(), "model.q: one action per tangential site");
    get<std::vector<double>>(cfg, "model.F");
    require(get<int>(cfg, "model.degree_cutoff") >= 2, "model.degree_cutoff: must be at least 2");
    const auto box = get<std::vector<double>>(cfg, "model.potential.box");
    require(box.size() == 2 && box[0] <= box[1], "model.potential.box: expected [lo, hi]");
    if (is_set(cfg, "model.potential.values")) {
        const json& v = cfg.at("model").at("potential").at("values");
        require(v.is_array(), "model.potential.values: expected a list of [site, value] pairs");
        for (const auto& e : v)
            require(e.is_array() && e.size() == 2 && e[0].is_array() && e[0].size() == static_cast<std::size_t>(dim) &&
                        e[1].is_number(),
                    "model.potential.values: expected [site, value] pairs, got " + e.dump());
    }
    for (const char* key : {"schedule.epsilon", "schedule.kappa", "schedule.n_inner"})
        if (is_set(cfg, key)) require(cfg.at("schedule").at(std::string(key).substr(9)).is_number(), std::string(key) + ": expected a number");
    require(get<int>(cfg, "schedule.m_max") >= 1, "schedule.m_max: must be at least 1");
    require(get<int>(cfg, "normal_form.M") >= 1, "normal_form.M: must be at least 1");
    const double nf_delta = get<double>(cfg, "normal_form.delta");
    require(nf_delta > 0.0 && nf_delta < 1.0, "normal_form.delta: must lie in (0, 1)");
    for (double d : get<std::vector<double>>(cfg, "stability.deltas"))
        require(d > 0.0 && d < 1.0, "stability.deltas: every value must lie in (0, 1)");
    get<std::vector<unsigned>>(cfg, "stability.seeds");
    try {
        parse_scheme(get<std::string>(cfg, "stability.scheme"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("stability.scheme: ") + e.what());
    }
    const auto mode = get<std::string>(cfg, "stability.mode");
    require(mode == "pipeline" || mode == "direct", "stability.mode: expected 'pipeline' or 'direct'");
    if (is_set(cfg, "stability.pure_mode"))
        require(get<Site>(cfg, "stability.pure_mode").size() == static_cast<std::size_t>(dim),
                "stability.pure_mode: expected a site with " + std::to_string(dim) + " coordinates");
    require(get<int>(cfg, "measure.n_samples") >= 100, "measure.n_samples: must be at least 100");
    for (double k : get<std::vector<double>>(cfg, "measure.kappas")) require(k >= 0.0, "measure.kappas: must be nonnegative");
    get<std::vector<double>>(cfg, "measure.delta_primes");
    require(get<int>(cfg, "check.n_points") >= 0, "check.n_points: must be nonnegative");
    if (is_set(cfg, "check.omega"))
        require(get<std::vector<double>>(cfg, "check.omega").size() == tang.size(), "check.omega: one value per tangential site");
}

json parse_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return text;
    }
}

// ---------------------------------------------------------------------------------------------------------------
// Model assembly

NlsModel model_from(const json& cfg, std::mt19937_64& rng) {
    NlsModel m;
    m.dim = get<int>(cfg, "lattice.dim");
    m.tangential = read_sites(cfg, "lattice.tangential", m.dim);
    m.lattice_cutoff = get<int>(cfg, "lattice.cutoff");
    m.eps = get<double>(cfg, "model.eps");
    m.q = get<std::vector<double>>(cfg, "model.q");
    m.F_taylor = get<std::vector<double>>(cfg, "model.F");
    m.degree_cutoff = get<int>(cfg, "model.degree_cutoff");
    try {
        m.validate();
        const ConfigPtr lat = m.config();
        if (is_set(cfg, "model.potential.values")) {
            for (const auto& e : cfg["model"]["potential"]["values"]) m.V_hat[e[0].get<Site>()] = e[1].get<double>();
        } else {
            const auto box = get<std::vector<double>>(cfg, "model.potential.box");
            m = with_potential(m, *lat, sample_parameters(*lat, box[0], box[1], rng));
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    return m;
}

NlsModel model_from(const json& cfg) {
    std::mt19937_64 rng(get<unsigned long>(cfg, "seed"));
    return model_from(cfg, rng);
}

ScheduleOptions schedule_from(const json& cfg) {
    ScheduleOptions so;
    so.epsilon = is_set(cfg, "schedule.epsilon") ? get<double>(cfg, "schedule.epsilon") : get<double>(cfg, "model.eps");
    so.rho = get<double>(cfg, "schedule.rho");
    so.sigma = get<double>(cfg, "schedule.sigma");
    so.gamma = get<double>(cfg, "schedule.gamma");
    so.p = get<double>(cfg, "schedule.p");
    so.delta = get<double>(cfg, "schedule.delta");
    if (is_set(cfg, "schedule.kappa")) so.kappa = get<double>(cfg, "schedule.kappa");
    so.delta_cap = get<double>(cfg, "schedule.delta_cap");
    so.delta_prime_cap = get<double>(cfg, "schedule.delta_prime_cap");
    if (is_set(cfg, "schedule.n_inner")) so.n_inner = get<int>(cfg, "schedule.n_inner");
    so.m_max = get<int>(cfg, "schedule.m_max");
    so.lambda_const = get<double>(cfg, "schedule.lambda_const");
    so.lambda0 = get<double>(cfg, "schedule.lambda0");
    so.degree_cutoff = get<int>(cfg, "model.degree_cutoff");
    so.lie_order_cap = get<int>(cfg, "schedule.lie_order_cap");
    so.momentum_filter = get<bool>(cfg, "schedule.momentum_filter");
    so.underflow = get<double>(cfg, "schedule.underflow");
    return so;
}

// ---------------------------------------------------------------------------------------------------------------
// Output

struct Context {
    json cfg;
    fs::path out_dir;
    std::string hash;
    std::string model_hash;
    int jobs = 1;
    std::ostream* out = nullptr;
};

/// Hash of the sections that determine the Hamiltonian and the KAM transformation.
std::string model_hash_of(const json& cfg) {
    const json sub{{"seed", cfg["seed"]}, {"lattice", cfg["lattice"]}, {"model", cfg["model"]}, {"schedule", cfg["schedule"]}};
    return hash_hex(config_hash(sub));
}

std::string csv_preamble(const Context& ctx, const std::string& kind) {
    return "# nlskam " + std::string(tool_version) + " " + kind + " config_hash=" + ctx.hash + "\n";
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << text;
}

json stamp(const Context& ctx, const std::string& kind, json body) {
    body["tool"] = "nlskam";
    body["version"] = tool_version;
    body["kind"] = kind;
    body["config_hash"] = ctx.hash;
    body["model_hash"] = ctx.model_hash;
    return body;
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

json read_artifact(const fs::path& p) {
    if (!fs::exists(p)) throw MissingArtifact(p);
    std::ifstream is(p);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(p.string() + ": unreadable artifact (" + e.what() + ")");
    }
}

/// Runs f(0..n-1) on up to `jobs` threads; failures are rethrown for the lowest failing index.
template <class F>
void parallel_for(int n, int jobs, F&& f) {
    std::vector<std::exception_ptr> errors(n);
    auto guarded = [&](int i) {
        try {
            f(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) guarded(i);
    } else {
        std::mutex mtx;
        int next = 0;
        std::vector<std::thread> pool;
        for (int t = 0; t < std::min(jobs, n); ++t)
            pool.emplace_back([&] {
                for (;;) {
                    int i;
                    {
                        std::lock_guard<std::mutex> lock(mtx);
                        i = next++;
                    }
                    if (i >= n) return;
                    guarded(i);
                }
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

json quadratic_to_json(const QuadraticForm& q) {
    json H = json::array();
    for (int a = 0; a < q.H.rows(); ++a)
        for (int b = 0; b < q.H.cols(); ++b)
            if (q.H(a, b) != cplx(0.0)) H.push_back({a, b, q.H(a, b).real(), q.H(a, b).imag()});
    return {{"omega", std::vector<double>(q.omega.data(), q.omega.data() + q.omega.size())},
            {"Omega", std::vector<double>(q.Omega.data(), q.Omega.data() + q.Omega.size())},
            {"H", H}};
}

QuadraticForm quadratic_from_json(const json& j, ConfigPtr cfg) {
    QuadraticForm q;
    q.config = cfg;
    const auto w = j.at("omega").get<std::vector<double>>();
    const auto W = j.at("Omega").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != cfg->n_tangential() || static_cast<int>(W.size()) != cfg->n_normal())
        throw ConfigError("KAM artifact does not match the configured lattice");
    q.omega = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
    q.Omega = Eigen::Map<const Eigen::VectorXd>(W.data(), W.size());
    q.H = Eigen::MatrixXcd::Zero(cfg->n_normal(), cfg->n_normal());
    for (const auto& e : j.at("H")) q.H(e[0].get<int>(), e[1].get<int>()) = cplx(e[2].get<double>(), e[3].get<double>());
    return q;
}

struct KamArtifact {
    QuadraticForm q;
    Polynomial f;
    std::vector<Polynomial> generators;
    double block_delta;
    double gamma;
};

KamArtifact load_kam(const Context& ctx, ConfigPtr lat) {
    const fs::path p = ctx.out_dir / "kam_state.json";
    const json j = read_artifact(p);
    if (j.value("model_hash", std::string()) != ctx.model_hash)
        throw ConfigError(p.string() + ": produced by a different model or schedule (model_hash " +
                          j.value("model_hash", std::string("?")) + ", expected " + ctx.model_hash + ")");
    if (j.value("status", std::string()) != "converged") throw ConfigError(p.string() + ": KAM run did not converge");
    std::vector<Polynomial> gens;
    for (const auto& g : j.at("generators")) gens.push_back(polynomial_from_json(g, lat));
    return {quadratic_from_json(j.at("q_inf"), lat), polynomial_from_json(j.at("f_inf"), lat), std::move(gens),
            j.at("block_delta").get<double>(), j.at("gamma_final").get<double>()};
}

// ---------------------------------------------------------------------------------------------------------------
// Subcommands

int cmd_check(const Context& ctx) {
    const json& cfg = ctx.cfg;
    NlsModel base;
    base.dim = get<int>(cfg, "lattice.dim");
    base.tangential = read_sites(cfg, "lattice.tangential", base.dim);
    base.lattice_cutoff = get<int>(cfg, "lattice.cutoff");
    const ConfigPtr lat = base.config();
    const int n = get<int>(cfg, "check.n_points");
    const auto box = get<std::vector<double>>(cfg, "check.box");
    const double kappa = get<double>(cfg, "check.kappa");
    const double delta_prime = get<double>(cfg, "check.delta_prime");
    const BlockDecomposition dec = build_blocks(lat, get<double>(cfg, "check.delta"));
    MelnikovOptions mo;
    mo.momentum_filter = get<bool>(cfg, "schedule.momentum_filter");
    const unsigned long seed = get<unsigned long>(cfg, "seed");

    std::vector<MelnikovReport> reports(n);
    std::vector<ParameterPoint> points(n);
    parallel_for(n, ctx.jobs, [&](int i) {
        std::seed_seq ss{seed, static_cast<unsigned long>(i)};
        std::mt19937_64 rng(ss);
        points[i] = sample_parameters(*lat, box[0], box[1], rng);
        QuadraticForm q = frequencies(lat, points[i]);
        if (is_set(cfg, "check.omega")) {
            const auto w = get<std::vector<double>>(cfg, "check.omega");
            q.omega = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
        }
        reports[i] = check_melnikov_kam(q, dec, kappa, delta_prime, mo);
    });

    std::ostringstream csv;
    csv << csv_preamble(ctx, "check") << "point,passed,worst_margin,n_violations,tested\n";
    json pts = json::array();
    int failed = 0;
    for (int i = 0; i < n; ++i) {
        const auto& r = reports[i];
        failed += !r.passed;
        csv << i << ',' << (r.passed ? 1 : 0) << ',' << fmt(r.worst_margin) << ',' << r.n_violations << ',' << r.tested << '\n';
        json jr = to_json(r);
        jr["point"] = i;
        jr["w_tangential"] = points[i].tangential;
        jr["w_normal"] = points[i].normal;
        pts.push_back(jr);
    }
    write_file(ctx.out_dir / "check.csv", csv.str());
    write_json(ctx.out_dir / "check_report.json",
               stamp(ctx, "check",
                     {{"kappa", kappa},
                      {"delta_prime", delta_prime},
                      {"n_points", n},
                      {"n_failed", failed},
                      {"passed", failed == 0},
                      {"points", pts}}));
    *ctx.out << "check: " << n - failed << "/" << n << " points pass\n";
    return failed == 0 ? ok : domain_failure;
}

int cmd_kam(const Context& ctx) {
    const NlsModel model = model_from(ctx.cfg);
    const ConfigPtr lat = model.config();
    const NlsHamiltonian H = build_nls_hamiltonian(model, lat);
    const ScheduleOptions so = schedule_from(ctx.cfg);

    json summary{{"status", "converged"}};
    std::string steps_csv = csv_preamble(ctx, "kam-steps") + kam_diagnostics_csv_header() + "\n";
    int code = ok;
    try {
        const KamResult r = kam_outer_iterate(H.q, H.f, so);
        for (const auto& d : r.steps) steps_csv += kam_diagnostics_csv_row(d, false) + "\n";
        summary["result"] = to_json(r);
        json gens = json::array();
        for (const auto& g : r.generators) gens.push_back(to_json(g));
        write_json(ctx.out_dir / "kam_state.json",
                   stamp(ctx, "kam-state",
                         {{"status", "converged"},
                          {"q0", quadratic_to_json(r.q0)},
                          {"q_inf", quadratic_to_json(r.q_inf)},
                          {"f_inf", to_json(r.f_inf)},
                          {"energy", {r.energy.real(), r.energy.imag()}},
                          {"generators", gens},
                          {"block_delta", r.final_block_delta},
                          {"gamma_final", r.schedule.back().gamma}}));
        *ctx.out << "kam: converged, final low-jet norm " << fmt(r.rounds.empty() ? 0.0 : r.rounds.back().low_end)
                 << ", |omega shift| " << fmt(r.omega_shift().size() ? r.omega_shift().cwiseAbs().maxCoeff() : 0.0) << "\n";
    } catch (const ParameterExcluded& e) {
        summary = {{"status", "excluded"}, {"round", e.round}, {"reason", e.what()}};
        code = domain_failure;
    } catch (const SmallDivisorError& e) {
        summary = {{"status", "small_divisor"}, {"reason", e.what()}, {"sector", e.sector}, {"k", e.k},
                   {"value", e.value}, {"threshold", e.threshold}};
        code = domain_failure;
    } catch (const ContractionFailure& e) {
        summary = {{"status", "no_contraction"}, {"reason", e.what()}};
        code = domain_failure;
    }
    if (code != ok) {
        fs::remove(ctx.out_dir / "kam_state.json");
        *ctx.out << "kam: " << summary["status"].get<std::string>() << ": " << summary["reason"].get<std::string>() << "\n";
    }
    summary["epsilon"] = so.epsilon;
    summary["n_terms_f"] = H.f.size();
    write_file(ctx.out_dir / "kam_steps.csv", steps_csv);
    write_json(ctx.out_dir / "kam_summary.json", stamp(ctx, "kam", summary));
    return code;
}

int cmd_nf(const Context& ctx) {
    const NlsModel model = model_from(ctx.cfg);
    const ConfigPtr lat = model.config();
    const KamArtifact kam = load_kam(ctx, lat);
    const int M = get<int>(ctx.cfg, "normal_form.M");
    const double delta = get<double>(ctx.cfg, "normal_form.delta");
    const double p = get<double>(ctx.cfg, "schedule.p");
    const NfParameters np = choose_nf_parameters(delta, M, p, lat->dim(), get<double>(ctx.cfg, "schedule.rho"), kam.gamma,
                                                 get<double>(ctx.cfg, "normal_form.delta_t_cap"));
    NfOptions no;
    no.M = M;
    no.thresholds.kappa_t = np.kappa_t;
    no.thresholds.delta_t = np.delta_t;
    no.thresholds.M = M;
    no.thresholds.N = np.N;
    no.thresholds.d = lat->dim();
    no.thresholds.c0 = get<double>(ctx.cfg, "normal_form.c0");
    no.lie_order_cap = get<int>(ctx.cfg, "schedule.lie_order_cap");
    const BlockDecomposition dec = build_blocks(lat, kam.block_delta);

    MelnikovOptions mo;
    mo.momentum_filter = get<bool>(ctx.cfg, "schedule.momentum_filter");
    const MelnikovReport mel = check_melnikov_nf(kam.q, dec, low_modes(kam.q, dec, np.N), no.thresholds, mo);
    json summary{{"parameters", to_json(np)}, {"melnikov", to_json(mel)}};
    std::string layers_csv = csv_preamble(ctx, "nf-layers") + "j0,n_top,n_generator,n_terms,residual,divisor_margin,conjugacy,lie_tail,zhat_max\n";
    int code = ok;
    if (!mel.passed) {
        summary["status"] = "excluded";
        code = domain_failure;
    } else {
        try {
            const NormalFormResult nf = partial_normal_form(kam.q, kam.f, dec, no);
            for (const auto& l : nf.layers)
                layers_csv += std::to_string(l.j0) + ',' + std::to_string(l.n_top) + ',' + std::to_string(l.n_generator) + ',' +
                              std::to_string(l.n_terms) + ',' + fmt(l.residual) + ',' + fmt(l.divisor_margin) + ',' +
                              fmt(l.conjugacy) + ',' + fmt(l.lie_tail) + ',' + fmt(l.zhat_max) + '\n';
            summary["status"] = "normalized";
            summary["result"] = to_json(nf);
            write_json(ctx.out_dir / "nf_Z.json", stamp(ctx, "nf-resonant", {{"Z", to_json(nf.Z)}}));
        } catch (const SmallDivisorError& e) {
            summary["status"] = "small_divisor";
            summary["reason"] = e.what();
            code = domain_failure;
        }
    }
    write_file(ctx.out_dir / "nf_layers.csv", layers_csv);
    write_json(ctx.out_dir / "nf_summary.json", stamp(ctx, "nf", summary));
    *ctx.out << "nf: " << summary["status"].get<std::string>() << "\n";
    return code;
}

std::string delta_tag(double d) {
    std::string s = fmt(d);
    std::replace(s.begin(), s.end(), '.', 'p');
    return s;
}

int cmd_stability(const Context& ctx) {
    const NlsModel model = model_from(ctx.cfg);
    const ConfigPtr lat = model.config();
    const bool pipeline = get<std::string>(ctx.cfg, "stability.mode") == "pipeline";
    std::optional<KamArtifact> kam;
    json nf_info = nullptr;
    if (pipeline) {
        kam = load_kam(ctx, lat);
        const json nf = read_artifact(ctx.out_dir / "nf_summary.json");
        if (nf.value("model_hash", std::string()) != ctx.model_hash)
            throw ConfigError((ctx.out_dir / "nf_summary.json").string() + ": produced by a different model or schedule");
        nf_info = {{"status", nf.value("status", std::string())},
                   {"nonresonant_max", nf.contains("result") ? nf["result"]["nonresonant_max"] : json(nullptr)}};
    }
    const auto deltas = get<std::vector<double>>(ctx.cfg, "stability.deltas");
    const auto seeds = get<std::vector<unsigned>>(ctx.cfg, "stability.seeds");
    StabilityOptions base;
    base.M = get<int>(ctx.cfg, "stability.M");
    base.p = get<double>(ctx.cfg, "stability.p");
    base.dt = get<double>(ctx.cfg, "stability.dt");
    base.scheme = parse_scheme(get<std::string>(ctx.cfg, "stability.scheme"));
    base.n_samples = get<int>(ctx.cfg, "stability.n_samples");
    if (is_set(ctx.cfg, "stability.pure_mode")) base.pure_mode = get<Site>(ctx.cfg, "stability.pure_mode");

    const int n = static_cast<int>(deltas.size() * seeds.size());
    std::vector<std::optional<StabilityReport>> reports(n);
    parallel_for(n, ctx.jobs, [&](int i) {
        StabilityOptions so = base;
        so.delta = deltas[i / seeds.size()];
        so.seed = seeds[i % seeds.size()];
        reports[i] = stability_experiment(model, so, kam ? &kam->generators : nullptr);
    });

    json runs = json::array();
    int failed = 0;
    for (int i = 0; i < n; ++i) {
        const StabilityReport& r = *reports[i];
        const std::string name = "stability_delta" + delta_tag(r.delta) + "_seed" + std::to_string(r.seed) + ".csv";
        write_file(ctx.out_dir / name, csv_preamble(ctx, "stability") + "# delta=" + fmt(r.delta) + " M=" +
                                           std::to_string(r.M) + " horizon=" + fmt(r.horizon) + "\n" +
                                           stability_csv_header() + "\n" + stability_csv_rows(r));
        json jr = to_json(r);
        jr["csv"] = name;
        runs.push_back(jr);
        failed += !r.pass;
    }
    write_json(ctx.out_dir / "stability_summary.json",
               stamp(ctx, "stability",
                     {{"mode", pipeline ? "pipeline" : "direct"},
                      {"normal_form", nf_info},
                      {"n_runs", n},
                      {"n_failed", failed},
                      {"passed", failed == 0},
                      {"runs", runs}}));
    *ctx.out << "stability: " << n - failed << "/" << n << " runs stay below 2 delta\n";
    return failed == 0 ? ok : domain_failure;
}

int cmd_measure(const Context& ctx) {
    NlsModel base;
    base.dim = get<int>(ctx.cfg, "lattice.dim");
    base.tangential = read_sites(ctx.cfg, "lattice.tangential", base.dim);
    base.lattice_cutoff = get<int>(ctx.cfg, "lattice.cutoff");
    const ConfigPtr lat = base.config();
    const auto kappas = get<std::vector<double>>(ctx.cfg, "measure.kappas");
    const auto dps = get<std::vector<double>>(ctx.cfg, "measure.delta_primes");
    const auto box = get<std::vector<double>>(ctx.cfg, "measure.box");
    const int n_samples = get<int>(ctx.cfg, "measure.n_samples");
    const double delta = get<double>(ctx.cfg, "measure.delta");
    const unsigned long seed = get<unsigned long>(ctx.cfg, "seed");
    MelnikovOptions mo;
    mo.momentum_filter = get<bool>(ctx.cfg, "schedule.momentum_filter");

    const int n = static_cast<int>(kappas.size() * dps.size());
    std::vector<MeasureEstimate> rows(n);
    parallel_for(n, ctx.jobs, [&](int i) {
        rows[i] = estimate_excluded_measure(lat, delta, kappas[i / dps.size()], dps[i % dps.size()], n_samples, box[0], box[1],
                                            seed, mo);
    });

    std::ostringstream csv;
    csv << csv_preamble(ctx, "measure") << "kappa,delta_prime,fraction,ci_low,ci_high,n_samples,seed\n";
    for (const auto& r : rows)
        csv << fmt(r.kappa) << ',' << fmt(r.delta_prime) << ',' << fmt(r.fraction) << ',' << fmt(r.ci_low) << ','
            << fmt(r.ci_high) << ',' << r.n_samples << ',' << r.seed << '\n';
    write_file(ctx.out_dir / "measure.csv", csv.str());

    // Least-squares slope of log fraction against log κ per Δ′, over rows with a positive fraction.
    json slopes = json::array();
    for (std::size_t j = 0; j < dps.size(); ++j) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < kappas.size(); ++i) {
            const auto& r = rows[i * dps.size() + j];
            if (r.fraction > 0.0 && r.kappa > 0.0) pts.emplace_back(std::log(r.kappa), std::log(r.fraction));
        }
        json s{{"delta_prime", dps[j]}, {"n_points", pts.size()}, {"slope", nullptr}};
        if (pts.size() >= 2) {
            double mx = 0, my = 0;
            for (auto [x, y] : pts) mx += x, my += y;
            mx /= pts.size(), my /= pts.size();
            double sxy = 0, sxx = 0;
            for (auto [x, y] : pts) sxy += (x - mx) * (y - my), sxx += (x - mx) * (x - mx);
            if (sxx > 0) s["slope"] = sxy / sxx;
        }
        slopes.push_back(s);
    }
    write_json(ctx.out_dir / "measure_summary.json", stamp(ctx, "measure", {{"n_rows", n}, {"loglog_slopes", slopes}}));
    *ctx.out << "measure: " << n << " rows\n";
    return ok;
}

/// Column layout of every CSV the plotting component reads, with the reference lines it draws.
int cmd_report_data(const Context& ctx) {
    json figures = json::array();
    const fs::path stab = ctx.out_dir / "stability_summary.json";
    if (fs::exists(stab)) {
        const json s = read_artifact(stab);
        for (const auto& r : s.at("runs"))
            figures.push_back({{"kind", "stability"},
                               {"csv", r.at("csv")},
                               {"columns", {"t", "distance"}},
                               {"threshold", 2.0 * r.at("delta").get<double>()},
                               {"horizon", r.at("horizon")},
                               {"delta", r.at("delta")},
                               {"seed", r.at("seed")},
                               {"verdict", r.at("verdict")}});
    }
    if (fs::exists(ctx.out_dir / "measure.csv"))
        figures.push_back({{"kind", "measure"},
                           {"csv", "measure.csv"},
                           {"columns", {"kappa", "delta_prime", "fraction", "ci_low", "ci_high", "n_samples", "seed"}},
                           {"axes", "loglog"}});
    if (fs::exists(ctx.out_dir / "kam_steps.csv")) {
        const std::string header = kam_diagnostics_csv_header();
        std::vector<std::string> cols;
        std::stringstream ss(header);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        figures.push_back({{"kind", "decay"}, {"csv", "kam_steps.csv"}, {"columns", cols}, {"x", "step"}, {"y", "low_norm"}});
    }
    write_json(ctx.out_dir / "report_data.json", stamp(ctx, "report-data", {{"comment_prefix", "#"}, {"figures", figures}}));
    *ctx.out << "report-data: " << figures.size() << " figure inputs\n";
    return figures.empty() ? domain_failure : ok;
}

}  // namespace

json default_config() {
    return {
        {"schema_version", schema_version},
        {"output_dir", "nlskam_out"},
        {"seed", 1},
        {"lattice", {{"dim", 1}, {"tangential", {{1}}}, {"cutoff", 8}}},
        {"model",
         {{"eps", 1e-3},
          {"q", {1.0}},
          {"F", {0.0, 0.0, 1.0}},
          {"degree_cutoff", 5},
          {"potential", {{"box", {0.0, 1.0}}, {"values", nullptr}}}}},
        {"schedule",
         {{"epsilon", nullptr},
          {"rho", 0.5},
          {"sigma", 0.5},
          {"gamma", 1.0},
          {"p", 4.0},
          {"delta", 1.0},
          {"kappa", 1e-3},
          {"delta_cap", 4.0},
          {"delta_prime_cap", 8.0},
          {"n_inner", nullptr},
          {"m_max", 2},
          {"lambda_const", 1.0},
          {"lambda0", 1.0},
          {"lie_order_cap", 12},
          {"momentum_filter", true},
          {"underflow", 1e-13}}},
        {"normal_form", {{"delta", 0.05}, {"M", 2}, {"delta_t_cap", 16.0}, {"c0", 0.05}}},
        {"stability",
         {{"deltas", {0.05}},
          {"seeds", {1}},
          {"M", 2},
          {"p", 4.0},
          {"dt", 0.02},
          {"scheme", "split-step"},
          {"n_samples", 200},
          {"mode", "pipeline"},
          {"pure_mode", nullptr}}},
        {"measure",
         {{"kappas", {0.02, 0.05, 0.1, 0.2}},
          {"delta_primes", {3.0}},
          {"n_samples", 500},
          {"box", {0.0, 1.0}},
          {"delta", 1.0}}},
        {"check",
         {{"n_points", 10}, {"kappa", 0.02}, {"delta_prime", 3.0}, {"delta", 1.0}, {"box", {0.0, 1.0}}, {"omega", nullptr}}},
    };
}

json merge_config(const json& user) {
    json cfg = default_config();
    merge_into(cfg, user, "");
    if (!user.contains("schema_version")) throw ConfigError("schema_version: required");
    validate(cfg);
    return cfg;
}

json load_config(const fs::path& path, const std::vector<std::string>& overrides) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path.string() + ": cannot open config");
    const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    json user;
    try {
        user = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const long line = 1 + std::count(text.begin(), text.begin() + upto, '\n');
        throw ConfigError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!user.is_object()) throw ConfigError(path.string() + ": config root must be an object");
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "': expected key=value");
        json patch = parse_value(ov.substr(eq + 1));
        std::vector<std::string> parts;
        std::stringstream ss(ov.substr(0, eq));
        for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
        json probe = default_config();
        merge_into(probe, patch, "");  // rejects unknown keys early
        user.merge_patch(patch);
    }
    return merge_config(user);
}

std::uint64_t config_hash(const json& cfg) {
    json c = cfg;
    if (c.is_object()) c.erase("output_dir");
    const std::string s = c.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Finite-truncation KAM and normal-form engine for the nonlinear Schroedinger equation", "nlskam"};
    app.set_version_flag("--version", tool_version);
    app.require_subcommand(1);
    std::string config_path, out_override;
    std::vector<std::string> overrides;
    int jobs = 1;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"check", "nonresonance conditions at sampled parameters"},
        {"kam", "KAM iteration for the configured model"},
        {"nf", "partial normal form around the KAM torus (needs kam output)"},
        {"stability", "long-time stability runs (pipeline mode needs kam and nf output)"},
        {"measure", "Monte Carlo estimate of the excluded parameter fraction"},
        {"report-data", "index of CSV inputs for the plotting scripts"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "override a config key, e.g. --set model.eps=1e-4")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        sub->add_option("--jobs,-j", jobs, "parallel jobs")->check(CLI::PositiveNumber);
        sub->add_option("--out,-o", out_override, "output directory (replaces output_dir)");
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return ok;
        }
        app.exit(e, out, err);
        return usage_error;
    }
    const std::string name = app.get_subcommands().front()->get_name();

    try {
        Context ctx;
        ctx.cfg = load_config(config_path, overrides);
        if (!out_override.empty()) ctx.cfg["output_dir"] = out_override;
        ctx.out_dir = get<std::string>(ctx.cfg, "output_dir");
        ctx.hash = hash_hex(config_hash(ctx.cfg));
        ctx.model_hash = model_hash_of(ctx.cfg);
        ctx.jobs = jobs;
        ctx.out = &out;
        fs::create_directories(ctx.out_dir);
        write_json(ctx.out_dir / ("config_" + name + ".json"), stamp(ctx, "config", {{"config", ctx.cfg}}));
        if (name == "check") return cmd_check(ctx);
        if (name == "kam") return cmd_kam(ctx);
        if (name == "nf") return cmd_nf(ctx);
        if (name == "stability") return cmd_stability(ctx);
        if (name == "measure") return cmd_measure(ctx);
        return cmd_report_data(ctx);
    } catch (const ConfigError& e) {
        err << "nlskam " << name << ": config error: " << e.what() << "\n";
        return usage_error;
    } catch (const MissingArtifact& e) {
        err << "nlskam " << name << ": " << e.what() << "\n";
        return usage_error;
    } catch (const std::exception& e) {
        err << "nlskam " << name << ": " << e.what() << "\n";
        return domain_failure;
    }
}

}  // namespace nlskam::cli
