#include "nlskam/polynomial.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace nlskam {

namespace {

const cplx I(0.0, 1.0);


/// Builds the product key of a and b with the exponents of codes dec1, dec2 lowered by one (−1 = none).
Key combine(const Key& a, const Key& b, int dec1 = -1, int dec2 = -1) {
    const int nA = a.nA();
    Key out;
    out.data.reserve(a.data.size() + b.data.size());
    out.data.push_back(nA);
    out.data.push_back(a.nL());
    for (int i = 0; i < nA; ++i) out.data.push_back(a.k(i) + b.k(i));
    const int fa = a.n_factors(), fb = b.n_factors();
    int x = 0, y = 0;
    auto emit = [&](int code, int e) {
        if (code == dec1) --e;
        if (code == dec2) --e;
        if (e > 0) {
            out.data.push_back(code);
            out.data.push_back(e);
        }
    };
    while (x < fa || y < fb) {
        if (y >= fb || (x < fa && a.code(x) < b.code(y))) {
            emit(a.code(x), a.exponent(x));
            ++x;
        } else if (x >= fa || b.code(y) < a.code(x)) {
            emit(b.code(y), b.exponent(y));
            ++y;
        } else {
            emit(a.code(x), a.exponent(x) + b.exponent(y));
            ++x;
            ++y;
        }
    }
    return out;
}

int exponent_of(const Key& key, int code) {
    for (int f = 0; f < key.n_factors(); ++f)
        if (key.code(f) == code) return key.exponent(f);
    return 0;
}

Key key_from_factors(int nA, int nL, const std::vector<int>& k, std::vector<std::pair<int, int>> factors) {
    std::sort(factors.begin(), factors.end());
    Key key;
    key.data.reserve(2 + nA + 2 * factors.size());
    key.data.push_back(nA);
    key.data.push_back(nL);
    for (int i = 0; i < nA; ++i) key.data.push_back(k.empty() ? 0 : k[i]);
    for (std::size_t f = 0; f < factors.size(); ++f) {
        if (factors[f].second == 0) continue;
        if (!key.data.empty() && key.data.size() > static_cast<std::size_t>(2 + nA) &&
            key.data[key.data.size() - 2] == factors[f].first) {
            key.data.back() += factors[f].second;
            continue;
        }
        key.data.push_back(factors[f].first);
        key.data.push_back(factors[f].second);
    }
    return key;
}

double binom(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

Var Key::var(int f) const {
    const int c = code(f);
    if (c < nA()) return {VarKind::r, c};
    if (c < nA() + nL()) return {VarKind::u, c - nA()};
    return {VarKind::v, c - nA() - nL()};
}

std::size_t KeyHash::operator()(const Key& key) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int32_t x : key.data) {
        h ^= static_cast<std::uint32_t>(x);
        h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
}

Key make_key(int nA, int nL, const Monomial& m) {
    if (!m.k.empty() && static_cast<int>(m.k.size()) != nA)
        throw std::invalid_argument("Fourier index has wrong length");
    std::vector<std::pair<int, int>> factors;
    for (auto [i, e] : m.alpha) {
        if (i < 0 || i >= nA || e < 0) throw std::invalid_argument("invalid action exponent");
        factors.emplace_back(i, e);
    }
    for (auto [j, e] : m.mu) {
        if (j < 0 || j >= nL || e < 0) throw std::invalid_argument("invalid u exponent");
        factors.emplace_back(nA + j, e);
    }
    for (auto [j, e] : m.nu) {
        if (j < 0 || j >= nL || e < 0) throw std::invalid_argument("invalid v exponent");
        factors.emplace_back(nA + nL + j, e);
    }
    return key_from_factors(nA, nL, m.k, std::move(factors));
}

Monomial to_monomial(const Key& key, cplx coeff) {
    Monomial m;
    m.coeff = coeff;
    m.k.resize(key.nA());
    for (int i = 0; i < key.nA(); ++i) m.k[i] = key.k(i);
    for (int f = 0; f < key.n_factors(); ++f) {
        const Var v = key.var(f);
        const int e = key.exponent(f);
        if (v.kind == VarKind::r) m.alpha.emplace_back(v.index, e);
        else if (v.kind == VarKind::u) m.mu.emplace_back(v.index, e);
        else m.nu.emplace_back(v.index, e);
    }
    return m;
}

int weighted_degree(const Key& key) {
    int d = 0;
    for (int f = 0; f < key.n_factors(); ++f) d += (key.code(f) < key.nA() ? 2 : 1) * key.exponent(f);
    return d;
}

int normal_degree(const Key& key) {
    int d = 0;
    for (int f = 0; f < key.n_factors(); ++f)
        if (key.code(f) >= key.nA()) d += key.exponent(f);
    return d;
}

int action_degree(const Key& key) {
    int d = 0;
    for (int f = 0; f < key.n_factors(); ++f)
        if (key.code(f) < key.nA()) d += key.exponent(f);
    return d;
}

int fourier_norm(const Key& key) {
    int s = 0;
    for (int i = 0; i < key.nA(); ++i) s += std::abs(key.k(i));
    return s;
}

Key conjugate_key(const Key& key) {
    const int nA = key.nA(), nL = key.nL();
    std::vector<int> k(nA);
    for (int i = 0; i < nA; ++i) k[i] = -key.k(i);
    std::vector<std::pair<int, int>> factors;
    for (int f = 0; f < key.n_factors(); ++f) {
        int c = key.code(f);
        if (c >= nA && c < nA + nL) c += nL;
        else if (c >= nA + nL) c -= nL;
        factors.emplace_back(c, key.exponent(f));
    }
    return key_from_factors(nA, nL, k, std::move(factors));
}

Site momentum(const Key& key, const LatticeConfig& cfg) {
    Site m(cfg.dim(), 0);
    for (int i = 0; i < key.nA(); ++i)
        for (int x = 0; x < cfg.dim(); ++x) m[x] -= key.k(i) * cfg.tangential()[i][x];
    for (int f = 0; f < key.n_factors(); ++f) {
        const Var v = key.var(f);
        if (v.kind == VarKind::r) continue;
        const int sign = v.kind == VarKind::u ? 1 : -1;
        for (int x = 0; x < cfg.dim(); ++x) m[x] += sign * key.exponent(f) * cfg.normal()[v.index][x];
    }
    return m;
}

Site momentum(const Monomial& m, const LatticeConfig& cfg) {
    return momentum(make_key(cfg.n_tangential(), cfg.n_normal(), m), cfg);
}

// ---------------------------------------------------------------------------------------------

Polynomial::Polynomial(ConfigPtr cfg, int degree_cutoff, Coordinates coords)
    : cfg_(std::move(cfg)), cutoff_(degree_cutoff), coords_(coords) {
    if (!cfg_) throw std::invalid_argument("polynomial needs a lattice configuration");
    if (cutoff_ < 0) throw std::invalid_argument("degree cutoff must be nonnegative");
}

void Polynomial::add(const Key& key, cplx c) {
    if (c == cplx(0.0, 0.0)) return;
    if (weighted_degree(key) > cutoff_) return;
    terms_[key] += c;
}

void Polynomial::add(const Monomial& m) { add(make_key(nA(), nL(), m), m.coeff); }

cplx Polynomial::coeff(const Key& key) const {
    auto it = terms_.find(key);
    return it == terms_.end() ? cplx(0.0, 0.0) : it->second;
}

cplx Polynomial::coeff(const Monomial& m) const { return coeff(make_key(nA(), nL(), m)); }

std::vector<std::pair<Key, cplx>> Polynomial::sorted_terms() const {
    std::vector<std::pair<Key, cplx>> out(terms_.begin(), terms_.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

void Polynomial::prune(double tol) {
    for (auto it = terms_.begin(); it != terms_.end();) {
        if (std::abs(it->second) < tol) it = terms_.erase(it);
        else ++it;
    }
}

Polynomial Polynomial::with_cutoff(int cutoff) const {
    Polynomial out(cfg_, cutoff, coords_);
    for (const auto& [key, c] : terms_)
        if (weighted_degree(key) <= cutoff) out.terms_.emplace(key, c);
    return out;
}

double Polynomial::max_abs() const {
    double m = 0.0;
    for (const auto& [key, c] : terms_) m = std::max(m, std::abs(c));
    return m;
}

double Polynomial::l1() const {
    double s = 0.0;
    for (const auto& [key, c] : terms_) s += std::abs(c);
    return s;
}

int Polynomial::max_degree() const {
    int d = 0;
    for (const auto& [key, c] : terms_) d = std::max(d, weighted_degree(key));
    return d;
}

void Polynomial::check_compatible(const Polynomial& o) const {
    if (cfg_ != o.cfg_ && !(*cfg_ == *o.cfg_))
        throw std::invalid_argument("polynomials live on different lattice configurations");
    if (coords_ != o.coords_) throw std::invalid_argument("polynomials use different coordinates");
}

Polynomial& Polynomial::operator+=(const Polynomial& o) {
    check_compatible(o);
    for (const auto& [key, c] : o.terms_) add(key, c);
    prune();
    return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& o) {
    check_compatible(o);
    for (const auto& [key, c] : o.terms_) add(key, -c);
    prune();
    return *this;
}

Polynomial& Polynomial::operator*=(cplx c) {
    for (auto& [key, x] : terms_) x *= c;
    prune();
    return *this;
}

double combination_max_abs(std::initializer_list<std::pair<cplx, const Polynomial*>> parts) {
    Polynomial::Map acc;
    for (const auto& [w, p] : parts)
        for (const auto& [key, c] : p->terms()) acc[key] += w * c;
    double m = 0.0;
    for (const auto& [key, c] : acc) m = std::max(m, std::abs(c));
    return m;
}

Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
Polynomial operator*(cplx c, Polynomial a) { return a *= c; }

// ---------------------------------------------------------------------------------------------

BracketOperator::BracketOperator(const Polynomial& s) : s_(&s) {
    const int nA = s.nA(), nL = s.nL();
    by_action_.resize(nA);
    by_angle_.resize(nA);
    by_u_.resize(nL);
    by_v_.resize(nL);
    for (const auto& [key, c] : s.terms()) {
        const int deg = weighted_degree(key);
        for (int i = 0; i < nA; ++i)
            if (key.k(i) != 0) by_angle_[i].push_back({&key, c, deg, key.k(i)});
        for (int f = 0; f < key.n_factors(); ++f) {
            const Var v = key.var(f);
            const Entry e{&key, c, deg, key.exponent(f)};
            if (v.kind == VarKind::r) by_action_[v.index].push_back(e);
            else if (v.kind == VarKind::u) by_u_[v.index].push_back(e);
            else by_v_[v.index].push_back(e);
        }
    }
    auto by_degree = [](const Entry& a, const Entry& b) { return a.degree < b.degree; };
    for (auto* lists : {&by_action_, &by_angle_, &by_u_, &by_v_})
        for (auto& list : *lists) std::stable_sort(list.begin(), list.end(), by_degree);
}

Polynomial BracketOperator::apply(const Polynomial& f, int cutoff) const {
    f.check_compatible(*s_);
    const int nA = f.nA(), nL = f.nL();
    const int cut = std::min({cutoff, f.degree_cutoff()});
    const cplx normal_factor = f.coordinates() == Coordinates::complex ? -I : cplx(1.0, 0.0);
    Polynomial out(f.config_ptr(), f.degree_cutoff(), f.coordinates());
    Polynomial::Map acc;

    auto sweep = [&](const std::vector<Entry>& list, const Key& key1, cplx c1, int deg1, cplx weight, int dec1,
                     int dec2) {
        for (const Entry& e : list) {
            if (deg1 + e.degree - 2 > cut) break;
            acc[combine(key1, *e.key, dec1, dec2)] += weight * static_cast<double>(e.weight) * c1 * e.coeff;
        }
    };

    for (const auto& [key1, c1] : f.terms()) {
        const int deg1 = weighted_degree(key1);
        if (deg1 - 2 > cut) continue;
        // ∂φ_i f · ∂r_i s: i k1_i α2_i, with r_i removed from the product.
        for (int i = 0; i < nA; ++i)
            if (key1.k(i) != 0) sweep(by_action_[i], key1, c1, deg1, I * static_cast<double>(key1.k(i)), i, -1);
        for (int fct = 0; fct < key1.n_factors(); ++fct) {
            const Var v = key1.var(fct);
            const int e1 = key1.exponent(fct);
            if (v.kind == VarKind::r) {
                // −∂r_i f · ∂φ_i s: −i α1_i k2_i.
                sweep(by_angle_[v.index], key1, c1, deg1, -I * static_cast<double>(e1), v.index, -1);
            } else if (v.kind == VarKind::u) {
                sweep(by_v_[v.index], key1, c1, deg1, normal_factor * static_cast<double>(e1), nA + v.index,
                      nA + nL + v.index);
            } else {
                sweep(by_u_[v.index], key1, c1, deg1, -normal_factor * static_cast<double>(e1), nA + v.index,
                      nA + nL + v.index);
            }
        }
    }
    for (auto& [key, c] : acc)
        if (std::abs(c) >= kPruneTol) out.add(key, c);
    return out;
}

Polynomial poisson_bracket(const Polynomial& f, const Polynomial& g, int cutoff) {
    f.check_compatible(g);
    return BracketOperator(g).apply(f, cutoff);
}

Polynomial product(const Polynomial& f, const Polynomial& g, int cutoff) {
    f.check_compatible(g);
    const int cut = std::min({cutoff, f.degree_cutoff(), g.degree_cutoff()});
    Polynomial out(f.config_ptr(), std::min(f.degree_cutoff(), g.degree_cutoff()), f.coordinates());
    Polynomial::Map acc;
    for (const auto& [k1, c1] : f.terms()) {
        const int d1 = weighted_degree(k1);
        for (const auto& [k2, c2] : g.terms()) {
            if (d1 + weighted_degree(k2) > cut) continue;
            acc[combine(k1, k2)] += c1 * c2;
        }
    }
    for (auto& [key, c] : acc)
        if (std::abs(c) >= kPruneTol) out.add(key, c);
    return out;
}

LieResult lie_transform(const Polynomial& f, const Polynomial& s, int cutoff, int order_cap, double tail_tol) {
    if (order_cap < 1) throw std::invalid_argument("order cap must be at least 1");
    f.check_compatible(s);
    const BracketOperator ad(s);
    LieResult res{f.with_cutoff(std::min(cutoff, f.degree_cutoff())), 0.0, true, 0};
    if (s.empty()) return res;
    Polynomial term = res.value;
    for (int j = 1; j <= order_cap; ++j) {
        term = ad.apply(term, cutoff);
        term *= cplx(1.0 / j, 0.0);
        if (term.empty()) {
            res.orders = j - 1;
            return res;
        }
        res.value += term;
        res.orders = j;
    }
    Polynomial next = ad.apply(term, cutoff);
    next *= cplx(1.0 / (order_cap + 1), 0.0);
    res.tail = next.l1();
    res.converged = res.tail <= tail_tol;
    return res;
}

bool is_low_key(const Key& key) { return action_degree(key) <= 1 && weighted_degree(key) <= 2; }

std::pair<Polynomial, Polynomial> split_low_high(const Polynomial& f) {
    return {f.filter([](const Key& k) { return is_low_key(k); }),
            f.filter([](const Key& k) { return !is_low_key(k); })};
}

bool in_fourier_band(const Key& key, const LatticeConfig& cfg, double delta_prime) {
    if (fourier_norm(key) > delta_prime + 1e-12) return false;
    if (action_degree(key) != 0 || normal_degree(key) != 2) return true;
    std::vector<std::pair<Site, int>> sites;  // (site, +1 for u, −1 for v)
    for (int f = 0; f < key.n_factors(); ++f) {
        const Var v = key.var(f);
        for (int e = 0; e < key.exponent(f); ++e)
            sites.emplace_back(cfg.normal()[v.index], v.kind == VarKind::u ? 1 : -1);
    }
    const bool mixed = sites[0].second != sites[1].second;
    const double band = mixed ? distance(sites[0].first, sites[1].first) : norm(sites[0].first + sites[1].first);
    return band <= delta_prime + 1e-12;
}

Polynomial truncate_fourier(const Polynomial& f_low, double delta_prime) {
    const LatticeConfig& cfg = f_low.config();
    return f_low.filter([&](const Key& k) { return in_fourier_band(k, cfg, delta_prime); });
}

Polynomial derivative(const Polynomial& f, Var v) {
    const int nA = f.nA(), nL = f.nL();
    Polynomial out = f.empty_like();
    for (const auto& [key, c] : f.terms()) {
        if (v.kind == VarKind::phi) {
            if (key.k(v.index) != 0) out.add(key, I * static_cast<double>(key.k(v.index)) * c);
            continue;
        }
        const int code = v.kind == VarKind::r ? v.index : (v.kind == VarKind::u ? nA + v.index : nA + nL + v.index);
        const int e = exponent_of(key, code);
        if (e == 0) continue;
        Key one;
        one.data = {nA, nL};
        for (int i = 0; i < nA; ++i) one.data.push_back(0);
        out.add(combine(key, one, code), static_cast<double>(e) * c);
    }
    out.prune();
    return out;
}

namespace {

/// Expands every normal factor of f through a linear 2×2 substitution: slot u ↦ m00·u + m01·v, slot v ↦ m10·u + m11·v.
Polynomial substitute_normal(const Polynomial& f, cplx m00, cplx m01, cplx m10, cplx m11, Coordinates target) {
    const int nA = f.nA(), nL = f.nL();
    Polynomial out(f.config_ptr(), f.degree_cutoff(), target);
    for (const auto& [key, c] : f.terms()) {
        // Per site: list of (u exponent, v exponent, coefficient).
        std::map<int, std::pair<int, int>> site_exps;
        std::vector<std::pair<int, int>> fixed;
        std::vector<int> k(nA);
        for (int i = 0; i < nA; ++i) k[i] = key.k(i);
        for (int fc = 0; fc < key.n_factors(); ++fc) {
            const Var v = key.var(fc);
            if (v.kind == VarKind::r) fixed.emplace_back(key.code(fc), key.exponent(fc));
            else if (v.kind == VarKind::u) site_exps[v.index].first = key.exponent(fc);
            else site_exps[v.index].second = key.exponent(fc);
        }
        std::vector<std::pair<std::vector<std::pair<int, int>>, cplx>> partial{{fixed, c}};
        for (const auto& [j, mn] : site_exps) {
            const auto [m, n] = mn;
            std::map<std::pair<int, int>, cplx> expansion;
            for (int p = 0; p <= m; ++p)
                for (int q = 0; q <= n; ++q) {
                    // (m00 u + m01 v)^m (m10 u + m11 v)^n
                    const cplx w = binom(m, p) * binom(n, q) * std::pow(m00, p) * std::pow(m01, m - p) *
                                   std::pow(m10, q) * std::pow(m11, n - q);
                    expansion[{p + q, (m - p) + (n - q)}] += w;
                }
            std::vector<std::pair<std::vector<std::pair<int, int>>, cplx>> next;
            for (const auto& [factors, coef] : partial)
                for (const auto& [ab, w] : expansion) {
                    if (w == cplx(0.0, 0.0)) continue;
                    auto fs = factors;
                    if (ab.first) fs.emplace_back(nA + j, ab.first);
                    if (ab.second) fs.emplace_back(nA + nL + j, ab.second);
                    next.emplace_back(std::move(fs), coef * w);
                }
            partial = std::move(next);
        }
        for (auto& [factors, coef] : partial) out.add(key_from_factors(nA, nL, k, factors), coef);
    }
    out.prune();
    return out;
}

}  // namespace

Polynomial to_real(const Polynomial& f) {
    if (f.coordinates() == Coordinates::real) return f;
    const double s = 1.0 / std::sqrt(2.0);
    // u = (ξ + iη)/√2, v = (ξ − iη)/√2
    return substitute_normal(f, s, I * s, s, -I * s, Coordinates::real);
}

Polynomial to_complex(const Polynomial& f) {
    if (f.coordinates() == Coordinates::complex) return f;
    const double s = 1.0 / std::sqrt(2.0);
    // ξ = (u + v)/√2, η = −i(u − v)/√2
    return substitute_normal(f, s, s, -I * s, I * s, Coordinates::complex);
}

double reality_defect(const Polynomial& f) {
    if (f.coordinates() == Coordinates::real) {
        double worst = 0.0;
        for (const auto& [key, c] : f.terms()) {
            Key neg = key;
            for (int i = 0; i < key.nA(); ++i) neg.data[2 + i] = -key.k(i);
            worst = std::max(worst, std::abs(c - std::conj(f.coeff(neg))));
        }
        return worst;
    }
    double worst = 0.0;
    for (const auto& [key, c] : f.terms()) worst = std::max(worst, std::abs(c - std::conj(f.coeff(conjugate_key(key)))));
    return worst;
}

PhasePoint to_point(const PhaseState& s) {
    const double h = 1.0 / std::sqrt(2.0);
    PhasePoint p{s.phi, s.r, {}, {}};
    p.u.resize(s.xi.size());
    p.v.resize(s.xi.size());
    for (std::size_t j = 0; j < s.xi.size(); ++j) {
        p.u[j] = h * (s.xi[j] + I * s.eta[j]);
        p.v[j] = h * (s.xi[j] - I * s.eta[j]);
    }
    return p;
}

PhaseState to_state(const PhasePoint& p) {
    const double h = 1.0 / std::sqrt(2.0);
    PhaseState s{p.phi, p.r, {}, {}};
    s.xi.resize(p.u.size());
    s.eta.resize(p.u.size());
    for (std::size_t j = 0; j < p.u.size(); ++j) {
        s.xi[j] = h * (p.u[j] + p.v[j]);
        s.eta[j] = -I * h * (p.u[j] - p.v[j]);
    }
    return s;
}

namespace {

cplx slot_value(const Var& v, const PhasePoint& z) {
    switch (v.kind) {
        case VarKind::r: return z.r[v.index];
        case VarKind::u: return z.u[v.index];
        case VarKind::v: return z.v[v.index];
        default: return 0.0;
    }
}

cplx phase(const Key& key, const PhasePoint& z) {
    cplx arg = 0.0;
    for (int i = 0; i < key.nA(); ++i)
        if (key.k(i)) arg += static_cast<double>(key.k(i)) * z.phi[i];
    return std::exp(I * arg);
}

void check_point(const Polynomial& f, const PhasePoint& z) {
    if (static_cast<int>(z.phi.size()) != f.nA() || static_cast<int>(z.r.size()) != f.nA() ||
        static_cast<int>(z.u.size()) != f.nL() || static_cast<int>(z.v.size()) != f.nL())
        throw std::invalid_argument("phase point dimensions do not match the configuration");
}

}  // namespace

cplx evaluate(const Polynomial& f, const PhasePoint& z) {
    check_point(f, z);
    cplx total = 0.0;
    for (const auto& [key, c] : f.terms()) {
        cplx t = c * phase(key, z);
        for (int fc = 0; fc < key.n_factors(); ++fc) t *= std::pow(slot_value(key.var(fc), z), key.exponent(fc));
        total += t;
    }
    return total;
}

Gradient gradient(const Polynomial& f, const PhasePoint& z) {
    check_point(f, z);
    Gradient g;
    g.phi.assign(f.nA(), 0.0);
    g.r.assign(f.nA(), 0.0);
    g.u.assign(f.nL(), 0.0);
    g.v.assign(f.nL(), 0.0);
    std::vector<cplx> vals, prefix, suffix;
    for (const auto& [key, c] : f.terms()) {
        const cplx base = c * phase(key, z);
        const int nf = key.n_factors();
        vals.resize(nf);
        for (int fc = 0; fc < nf; ++fc) vals[fc] = std::pow(slot_value(key.var(fc), z), key.exponent(fc));
        prefix.assign(nf + 1, 1.0);
        suffix.assign(nf + 1, 1.0);
        for (int fc = 0; fc < nf; ++fc) prefix[fc + 1] = prefix[fc] * vals[fc];
        for (int fc = nf - 1; fc >= 0; --fc) suffix[fc] = suffix[fc + 1] * vals[fc];
        const cplx full = base * prefix[nf];
        for (int i = 0; i < key.nA(); ++i)
            if (key.k(i)) g.phi[i] += I * static_cast<double>(key.k(i)) * full;
        for (int fc = 0; fc < nf; ++fc) {
            const Var v = key.var(fc);
            const int e = key.exponent(fc);
            const cplx d = base * prefix[fc] * suffix[fc + 1] * static_cast<double>(e) *
                           std::pow(slot_value(v, z), e - 1);
            if (v.kind == VarKind::r) g.r[v.index] += d;
            else if (v.kind == VarKind::u) g.u[v.index] += d;
            else g.v[v.index] += d;
        }
    }
    return g;
}

Tangent vector_field_eval(const Polynomial& f, const PhaseState& state) {
    Tangent t;
    const int nL = f.nL();
    t.xi.resize(nL);
    t.eta.resize(nL);
    std::vector<cplx> dxi(nL), deta(nL);
    Gradient g;
    if (f.coordinates() == Coordinates::complex) {
        g = gradient(f, to_point(state));
        const double h = 1.0 / std::sqrt(2.0);
        for (int j = 0; j < nL; ++j) {
            dxi[j] = h * (g.u[j] + g.v[j]);
            deta[j] = I * h * (g.u[j] - g.v[j]);
        }
    } else {
        g = gradient(f, PhasePoint{state.phi, state.r, state.xi, state.eta});
        dxi = g.u;
        deta = g.v;
    }
    t.phi = g.r;
    t.r.resize(g.phi.size());
    for (std::size_t i = 0; i < g.phi.size(); ++i) t.r[i] = -g.phi[i];
    for (int j = 0; j < nL; ++j) {
        t.xi[j] = deta[j];
        t.eta[j] = -dxi[j];
    }
    return t;
}

nlohmann::json to_json(const Polynomial& f) {
    const LatticeConfig& cfg = f.config();
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& [key, c] : f.sorted_terms()) {
        const Monomial m = to_monomial(key, c);
        nlohmann::json k = nlohmann::json::array(), alpha = nlohmann::json::array(), mu = nlohmann::json::array(),
                       nu = nlohmann::json::array();
        for (int i = 0; i < f.nA(); ++i)
            if (m.k[i]) k.push_back({cfg.tangential()[i], m.k[i]});
        for (auto [i, e] : m.alpha) alpha.push_back({cfg.tangential()[i], e});
        for (auto [j, e] : m.mu) mu.push_back({cfg.normal()[j], e});
        for (auto [j, e] : m.nu) nu.push_back({cfg.normal()[j], e});
        terms.push_back({{"k", k}, {"alpha", alpha}, {"mu", mu}, {"nu", nu}, {"re", c.real()}, {"im", c.imag()}});
    }
    return {{"coordinates", f.coordinates() == Coordinates::complex ? "complex" : "real"},
            {"degree_cutoff", f.degree_cutoff()},
            {"terms", terms}};
}

Polynomial polynomial_from_json(const nlohmann::json& j, ConfigPtr cfg) {
    const Coordinates coords = j.at("coordinates").get<std::string>() == "real" ? Coordinates::real : Coordinates::complex;
    Polynomial f(cfg, j.at("degree_cutoff").get<int>(), coords);
    auto tang = [&](const nlohmann::json& s) {
        auto idx = cfg->tangential_index(s.get<Site>());
        if (!idx) throw std::invalid_argument("unknown tangential site in polynomial record");
        return *idx;
    };
    auto normal = [&](const nlohmann::json& s) {
        auto idx = cfg->normal_index(s.get<Site>());
        if (!idx) throw std::invalid_argument("unknown normal site in polynomial record");
        return *idx;
    };
    for (const auto& t : j.at("terms")) {
        Monomial m;
        m.k.assign(cfg->n_tangential(), 0);
        for (const auto& e : t.at("k")) m.k[tang(e.at(0))] = e.at(1).get<int>();
        for (const auto& e : t.at("alpha")) m.alpha.emplace_back(tang(e.at(0)), e.at(1).get<int>());
        for (const auto& e : t.at("mu")) m.mu.emplace_back(normal(e.at(0)), e.at(1).get<int>());
        for (const auto& e : t.at("nu")) m.nu.emplace_back(normal(e.at(0)), e.at(1).get<int>());
        m.coeff = cplx(t.at("re").get<double>(), t.at("im").get<double>());
        f.add(m);
    }
    return f;
}

}  // namespace nlskam
