#pragma once

// Graph construction policies (radius, k-nearest, full) and the edge
// add/drop perturbations used by the robustness sweep.

#include "drlabel/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace drlabel {

/// Edges (i, j) for every ordered pair with 0 < |p_i - p_j| < cutoff. With
/// `max_neighbors`, node i keeps only its nearest j (ties: lower index).
DirectedGraph build_radius_graph(const AtomicSystem& system, double cutoff,
                                 std::optional<Index> max_neighbors = std::nullopt);

/// Node i gets edges to its k nearest atoms (ties: lower index). 1 <= k <= N-1.
DirectedGraph build_knn_graph(const AtomicSystem& system, Index k);

DirectedGraph build_full_graph(const AtomicSystem& system);

enum class GraphPolicyKind { radius, knn, full };

struct GraphPolicy {
    GraphPolicyKind kind = GraphPolicyKind::radius;
    double cutoff = 3.0;
    std::optional<Index> max_neighbors;
    Index k = 8;

    friend bool operator==(const GraphPolicy&, const GraphPolicy&) = default;
};

DirectedGraph build_graph(const AtomicSystem& system, const GraphPolicy& policy);

std::string to_string(GraphPolicyKind kind);
GraphPolicyKind parse_graph_policy(const std::string& name);

/// drop: remove marked edges. add: duplicate marked edges (multigraph).
/// add_new_pair: insert edges between marked, previously unconnected pairs.
enum class PerturbMode { drop, add, add_new_pair };

std::string to_string(PerturbMode mode);
PerturbMode parse_perturb_mode(const std::string& name);

/// Dense N x N boolean selection B with its mode and seed.
class PerturbationMask {
public:
    PerturbationMask(Index num_nodes, PerturbMode mode, std::uint64_t seed);

    Index num_nodes() const { return n_; }
    PerturbMode mode() const { return mode_; }
    std::uint64_t seed() const { return seed_; }

    bool at(Index i, Index j) const { return bits_[i * n_ + j]; }
    /// Throws ValidationError for diagonal entries.
    void set(Index i, Index j, bool value);
    Index count() const;

private:
    Index n_;
    PerturbMode mode_;
    std::uint64_t seed_;
    std::vector<bool> bits_;
};

/// Marks round(fraction * |E|) uniformly chosen edges (drop/add) or
/// non-edges (add_new_pair, capped at the number available).
PerturbationMask sample_perturbation_mask(const DirectedGraph& graph, PerturbMode mode,
                                          double fraction, std::uint64_t seed);

/// Multiset of original edge indices that survives a drop/add mask: kept
/// edges in order, then one extra copy of each marked edge for `add`.
std::vector<Index> perturbed_edge_indices(const DirectedGraph& graph, const PerturbationMask& mask);

DirectedGraph perturb_graph(const DirectedGraph& graph, const PerturbationMask& mask);
DirectedGraph perturb_graph(const DirectedGraph& graph, PerturbMode mode, double fraction,
                            std::uint64_t seed);

}  // namespace drlabel
