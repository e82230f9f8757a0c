#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstddef>
#include <vector>

namespace drlabel {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index = std::size_t;

/// Directed edge e_ij. `node` is i, the atom whose displacement is projected
/// onto the edge; `neighbor` is j. Messages in the network flow from the
/// neighbor into the node, and both displacement heads aggregate over the
/// edges a node owns.
struct Edge {
    Index node = 0;
    Index neighbor = 0;

    friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Directed (multi)graph over N atoms. Builders never emit duplicates;
/// perturbation may.
class DirectedGraph {
public:
    DirectedGraph() = default;
    /// Throws ValidationError on self-loops or out-of-range indices.
    DirectedGraph(Index num_nodes, std::vector<Edge> edges);

    Index num_nodes() const { return num_nodes_; }
    Index num_edges() const { return edges_.size(); }
    const std::vector<Edge>& edges() const { return edges_; }
    const Edge& edge(Index e) const { return edges_[e]; }

    /// Indices (into edges()) of the edges owned by node i, in edge order.
    const std::vector<Index>& incident(Index i) const { return incident_[i]; }

    bool has_duplicates() const;
    bool contains(Edge e) const;
    std::vector<Index> isolated_nodes() const;

    friend bool operator==(const DirectedGraph&, const DirectedGraph&) = default;

private:
    Index num_nodes_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::vector<Index>> incident_;
};

/// Atom species, positions and free/fixed flags.
struct AtomicSystem {
    std::vector<int> atom_types;
    std::vector<Vec3> positions;
    std::vector<bool> free_mask;

    Index size() const { return positions.size(); }
};

/// Throws ValidationError unless lengths agree, N >= 2, coordinates are finite
/// and atoms are pairwise more than `min_distance` apart.
void validate(const AtomicSystem& system, double min_distance = 1e-6);

}  // namespace drlabel
