#include "nlskam/lattice.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace nlskam {

long norm2(const Site& a) {
    long s = 0;
    for (int x : a) s += static_cast<long>(x) * x;
    return s;
}

double norm(const Site& a) { return std::sqrt(static_cast<double>(norm2(a))); }

int sup_norm(const Site& a) {
    int m = 0;
    for (int x : a) m = std::max(m, std::abs(x));
    return m;
}

Site operator+(const Site& a, const Site& b) {
    Site c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

Site operator-(const Site& a, const Site& b) {
    Site c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

Site operator*(int t, const Site& a) {
    Site c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = t * a[i];
    return c;
}

double distance(const Site& a, const Site& b) { return norm(a - b); }

namespace {

/// Calls fn on every site of the box [-radius, radius]^dim in lexicographic order.
template <class Fn>
void for_each_in_box(int dim, int radius, Fn&& fn) {
    Site s(dim, -radius);
    while (true) {
        fn(s);
        int i = dim - 1;
        while (i >= 0 && s[i] == radius) {
            s[i] = -radius;
            --i;
        }
        if (i < 0) return;
        ++s[i];
    }
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

LatticeConfig::LatticeConfig(int dim, std::vector<Site> tangential, int cutoff)
    : dim_(dim), cutoff_(cutoff), tangential_(std::move(tangential)) {
    if (dim_ < 1) throw std::invalid_argument("lattice dimension must be positive");
    if (cutoff_ < 0) throw std::invalid_argument("lattice cutoff must be nonnegative");
    std::map<Site, int> tang;
    for (std::size_t i = 0; i < tangential_.size(); ++i) {
        const Site& a = tangential_[i];
        if (static_cast<int>(a.size()) != dim_)
            throw std::invalid_argument("tangential site has wrong dimension");
        if (sup_norm(a) > cutoff_)
            throw std::invalid_argument("tangential site lies outside the retained box");
        if (!tang.emplace(a, static_cast<int>(i)).second)
            throw std::invalid_argument("duplicate tangential site");
    }
    for_each_in_box(dim_, cutoff_, [&](const Site& s) {
        if (tang.count(s)) return;
        normal_index_.emplace(s, static_cast<int>(normal_.size()));
        normal_.push_back(s);
    });
}

std::optional<int> LatticeConfig::normal_index(const Site& a) const {
    auto it = normal_index_.find(a);
    if (it == normal_index_.end()) return std::nullopt;
    return it->second;
}

std::optional<int> LatticeConfig::tangential_index(const Site& a) const {
    for (std::size_t i = 0; i < tangential_.size(); ++i)
        if (tangential_[i] == a) return static_cast<int>(i);
    return std::nullopt;
}

bool LatticeConfig::operator==(const LatticeConfig& other) const {
    return dim_ == other.dim_ && cutoff_ == other.cutoff_ && tangential_ == other.tangential_;
}

ConfigPtr make_config(int dim, std::vector<Site> tangential, int cutoff) {
    return std::make_shared<const LatticeConfig>(dim, std::move(tangential), cutoff);
}

BlockDecomposition build_blocks(ConfigPtr cfg, double delta) {
    if (!(delta >= 0.0)) throw std::invalid_argument("block radius delta must be nonnegative");
    const auto& L = cfg->normal();
    const int n = cfg->n_normal();
    const double d2 = delta * delta;

    std::map<long, std::vector<int>> shells;
    for (int i = 0; i < n; ++i) shells[norm2(L[i])].push_back(i);

    UnionFind uf(n);
    for (const auto& [r2, members] : shells)
        for (std::size_t x = 0; x < members.size(); ++x)
            for (std::size_t y = x + 1; y < members.size(); ++y) {
                const Site diff = L[members[x]] - L[members[y]];
                if (static_cast<double>(norm2(diff)) <= d2 + 1e-9) uf.unite(members[x], members[y]);
            }

    // Any lattice point of equal norm outside the box is within the sup-radius floor(sqrt(d)*cutoff).
    const int outer = static_cast<int>(std::floor(std::sqrt(static_cast<double>(cfg->dim())) * cfg->cutoff()));
    if (outer > cfg->cutoff() && delta > 0.0) {
        for_each_in_box(cfg->dim(), outer, [&](const Site& b) {
            if (sup_norm(b) <= cfg->cutoff()) return;
            auto it = shells.find(norm2(b));
            if (it == shells.end()) return;
            for (int i : it->second)
                if (static_cast<double>(norm2(L[i] - b)) <= d2 + 1e-9)
                    throw std::domain_error("a pre-equivalence edge leaves the retained box; enlarge the cutoff or reduce delta");
        });
    }

    BlockDecomposition dec;
    dec.config = cfg;
    dec.delta = delta;
    dec.block_of.assign(n, -1);
    std::map<int, int> root_to_block;
    for (int i = 0; i < n; ++i) {
        const int root = uf.find(i);
        auto [it, inserted] = root_to_block.emplace(root, static_cast<int>(dec.blocks.size()));
        if (inserted) dec.blocks.emplace_back();
        dec.blocks[it->second].push_back(i);
        dec.block_of[i] = it->second;
    }
    dec.d_delta = block_diameter(dec);
    return dec;
}

double block_diameter(const BlockDecomposition& dec) {
    const auto& L = dec.config->normal();
    double diam = 0.0;
    for (const auto& b : dec.blocks)
        for (std::size_t x = 0; x < b.size(); ++x)
            for (std::size_t y = x + 1; y < b.size(); ++y) diam = std::max(diam, distance(L[b[x]], L[b[y]]));
    return diam;
}

double block_distance(const BlockDecomposition& dec, int b1, int b2) {
    const auto& L = dec.config->normal();
    double best = std::numeric_limits<double>::infinity();
    for (int i : dec.blocks[b1])
        for (int j : dec.blocks[b2]) best = std::min(best, distance(L[i], L[j]));
    return best;
}

bool is_normal_form(const Eigen::MatrixXcd& Q, const BlockDecomposition& dec, double tol) {
    const int n = dec.config->n_normal();
    if (Q.rows() != n || Q.cols() != n)
        throw std::invalid_argument("quadratic form dimension does not match the decomposition");
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            if (std::abs(Q(a, b) - std::conj(Q(b, a))) > tol) return false;
            if (dec.block_of[a] != dec.block_of[b] && std::abs(Q(a, b)) > tol) return false;
        }
    return true;
}

nlohmann::json to_json(const BlockDecomposition& dec) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : dec.blocks) {
        nlohmann::json sites = nlohmann::json::array();
        for (int i : b) sites.push_back(dec.config->normal()[i]);
        blocks.push_back(sites);
    }
    return {{"delta", dec.delta}, {"d_delta", dec.d_delta}, {"blocks", blocks}};
}

}  // namespace nlskam
