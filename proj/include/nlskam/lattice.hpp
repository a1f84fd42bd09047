#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"

namespace nlskam {

using Site = std::vector<int>;

long norm2(const Site& a);
double norm(const Site& a);
int sup_norm(const Site& a);
Site operator+(const Site& a, const Site& b);
Site operator-(const Site& a, const Site& b);
Site operator*(int t, const Site& a);
double distance(const Site& a, const Site& b);

/// Retained lattice: tangential sites A and the normal sites L = box \ A in lexicographic order.
class LatticeConfig {
public:
    LatticeConfig(int dim, std::vector<Site> tangential, int cutoff);

    int dim() const { return dim_; }
    int cutoff() const { return cutoff_; }
    const std::vector<Site>& tangential() const { return tangential_; }
    const std::vector<Site>& normal() const { return normal_; }
    int n_tangential() const { return static_cast<int>(tangential_.size()); }
    int n_normal() const { return static_cast<int>(normal_.size()); }
    std::optional<int> normal_index(const Site& a) const;
    std::optional<int> tangential_index(const Site& a) const;

    bool operator==(const LatticeConfig& other) const;

private:
    int dim_;
    int cutoff_;
    std::vector<Site> tangential_;
    std::vector<Site> normal_;
    std::map<Site, int> normal_index_;
};

using ConfigPtr = std::shared_ptr<const LatticeConfig>;

ConfigPtr make_config(int dim, std::vector<Site> tangential, int cutoff);

/// Partition of L into resonance blocks. Blocks hold normal-site indices in ascending order and
/// are themselves ordered by their least member, so block ids follow the lexicographic order.
struct BlockDecomposition {
    ConfigPtr config;
    double delta = 0.0;
    std::vector<std::vector<int>> blocks;
    std::vector<int> block_of;
    double d_delta = 0.0;

    int n_blocks() const { return static_cast<int>(blocks.size()); }
    const Site& block_id(int b) const { return config->normal()[blocks[b].front()]; }
};

BlockDecomposition build_blocks(ConfigPtr cfg, double delta);

double block_diameter(const BlockDecomposition& dec);

/// Minimum pairwise Euclidean distance between two blocks.
double block_distance(const BlockDecomposition& dec, int b1, int b2);

bool is_normal_form(const Eigen::MatrixXcd& Q, const BlockDecomposition& dec, double tol);

nlohmann::json to_json(const BlockDecomposition& dec);

}  // namespace nlskam
