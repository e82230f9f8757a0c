#include "drlabel/graph.hpp"

#include "drlabel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace drlabel {

DirectedGraph::DirectedGraph(Index num_nodes, std::vector<Edge> edges)
    : num_nodes_(num_nodes), edges_(std::move(edges)), incident_(num_nodes) {
    for (Index e = 0; e < edges_.size(); ++e) {
        const Edge& edge = edges_[e];
        if (edge.node >= num_nodes_ || edge.neighbor >= num_nodes_) {
            throw ValidationError("edge index out of range");
        }
        if (edge.node == edge.neighbor) {
            throw ValidationError("self-loop edges are not allowed");
        }
        incident_[edge.node].push_back(e);
    }
}

bool DirectedGraph::has_duplicates() const {
    std::set<Edge> seen;
    for (const Edge& e : edges_) {
        if (!seen.insert(e).second) return true;
    }
    return false;
}

bool DirectedGraph::contains(Edge e) const {
    if (e.node >= num_nodes_) return false;
    for (Index idx : incident_[e.node]) {
        if (edges_[idx].neighbor == e.neighbor) return true;
    }
    return false;
}

std::vector<Index> DirectedGraph::isolated_nodes() const {
    std::vector<Index> out;
    for (Index i = 0; i < num_nodes_; ++i) {
        if (incident_[i].empty()) out.push_back(i);
    }
    return out;
}

void validate(const AtomicSystem& system, double min_distance) {
    const Index n = system.positions.size();
    if (n < 2) throw ValidationError("an atomic system needs at least 2 atoms");
    if (system.atom_types.size() != n || system.free_mask.size() != n) {
        throw ValidationError("atom_types, positions and free_mask differ in length");
    }
    for (const Vec3& p : system.positions) {
        if (!p.allFinite()) throw ValidationError("non-finite atom position");
    }
    for (int t : system.atom_types) {
        if (t < 0) throw ValidationError("negative atom type");
    }
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            if ((system.positions[i] - system.positions[j]).norm() <= min_distance) {
                throw ValidationError("atoms " + std::to_string(i) + " and " + std::to_string(j) +
                                      " coincide");
            }
        }
    }
}

namespace {

// Neighbors of i sorted by (distance, index).
std::vector<std::pair<double, Index>> sorted_neighbors(const AtomicSystem& system, Index i) {
    std::vector<std::pair<double, Index>> out;
    for (Index j = 0; j < system.size(); ++j) {
        if (j == i) continue;
        out.emplace_back((system.positions[i] - system.positions[j]).norm(), j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

DirectedGraph from_sorted(Index n, std::vector<Edge> edges) {
    std::sort(edges.begin(), edges.end());
    return DirectedGraph(n, std::move(edges));
}

}  // namespace

DirectedGraph build_radius_graph(const AtomicSystem& system, double cutoff,
                                 std::optional<Index> max_neighbors) {
    if (!(cutoff > 0.0)) throw ValidationError("radius cutoff must be positive");
    const Index n = system.size();
    std::vector<Edge> edges;
    for (Index i = 0; i < n; ++i) {
        Index kept = 0;
        for (const auto& [dist, j] : sorted_neighbors(system, i)) {
            if (!(dist > 0.0 && dist < cutoff)) continue;
            if (max_neighbors && kept >= *max_neighbors) break;
            edges.push_back({i, j});
            ++kept;
        }
    }
    return from_sorted(n, std::move(edges));
}

DirectedGraph build_knn_graph(const AtomicSystem& system, Index k) {
    const Index n = system.size();
    if (k < 1 || k + 1 > n) throw ValidationError("k must satisfy 1 <= k <= N-1");
    std::vector<Edge> edges;
    for (Index i = 0; i < n; ++i) {
        const auto nbrs = sorted_neighbors(system, i);
        for (Index r = 0; r < k; ++r) edges.push_back({i, nbrs[r].second});
    }
    return from_sorted(n, std::move(edges));
}

DirectedGraph build_full_graph(const AtomicSystem& system) {
    const Index n = system.size();
    if (n < 2) throw ValidationError("a full graph needs at least 2 atoms");
    std::vector<Edge> edges;
    edges.reserve(n * (n - 1));
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (i != j) edges.push_back({i, j});
    return DirectedGraph(n, std::move(edges));
}

DirectedGraph build_graph(const AtomicSystem& system, const GraphPolicy& policy) {
    switch (policy.kind) {
        case GraphPolicyKind::radius:
            return build_radius_graph(system, policy.cutoff, policy.max_neighbors);
        case GraphPolicyKind::knn:
            return build_knn_graph(system, std::min<Index>(policy.k, system.size() - 1));
        case GraphPolicyKind::full:
            return build_full_graph(system);
    }
    throw ValidationError("unknown graph policy");
}

std::string to_string(GraphPolicyKind kind) {
    switch (kind) {
        case GraphPolicyKind::radius: return "radius";
        case GraphPolicyKind::knn: return "knn";
        case GraphPolicyKind::full: return "full";
    }
    return "?";
}

GraphPolicyKind parse_graph_policy(const std::string& name) {
    if (name == "radius") return GraphPolicyKind::radius;
    if (name == "knn") return GraphPolicyKind::knn;
    if (name == "full") return GraphPolicyKind::full;
    throw ValidationError("unknown graph policy '" + name + "'");
}

std::string to_string(PerturbMode mode) {
    switch (mode) {
        case PerturbMode::drop: return "drop";
        case PerturbMode::add: return "add";
        case PerturbMode::add_new_pair: return "add_new_pair";
    }
    return "?";
}

PerturbMode parse_perturb_mode(const std::string& name) {
    if (name == "drop") return PerturbMode::drop;
    if (name == "add" || name == "duplicate") return PerturbMode::add;
    if (name == "add_new_pair") return PerturbMode::add_new_pair;
    throw ValidationError("unknown perturbation mode '" + name + "'");
}

PerturbationMask::PerturbationMask(Index num_nodes, PerturbMode mode, std::uint64_t seed)
    : n_(num_nodes), mode_(mode), seed_(seed), bits_(num_nodes * num_nodes, false) {}

void PerturbationMask::set(Index i, Index j, bool value) {
    if (i == j) throw ValidationError("perturbation mask diagonal must stay false");
    bits_[i * n_ + j] = value;
}

Index PerturbationMask::count() const {
    return static_cast<Index>(std::count(bits_.begin(), bits_.end(), true));
}

PerturbationMask sample_perturbation_mask(const DirectedGraph& graph, PerturbMode mode,
                                          double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ValidationError("perturbation fraction must lie in [0, 1]");
    }
    if (mode != PerturbMode::add_new_pair && graph.has_duplicates()) {
        throw ValidationError("perturbation masks address simple graphs only");
    }
    const Index n = graph.num_nodes();
    PerturbationMask mask(n, mode, seed);
    const auto target = static_cast<Index>(std::llround(fraction * static_cast<double>(graph.num_edges())));

    std::vector<Edge> candidates;
    if (mode == PerturbMode::add_new_pair) {
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                if (i != j && !graph.contains({i, j})) candidates.push_back({i, j});
    } else {
        candidates = graph.edges();
    }
    std::mt19937_64 rng(seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    const Index take = std::min(target, static_cast<Index>(candidates.size()));
    for (Index c = 0; c < take; ++c) mask.set(candidates[c].node, candidates[c].neighbor, true);
    return mask;
}

std::vector<Index> perturbed_edge_indices(const DirectedGraph& graph, const PerturbationMask& mask) {
    if (mask.num_nodes() != graph.num_nodes()) {
        throw ValidationError("mask size does not match graph");
    }
    std::vector<Index> out;
    out.reserve(graph.num_edges());
    std::vector<Index> extra;
    for (Index e = 0; e < graph.num_edges(); ++e) {
        const Edge& edge = graph.edge(e);
        const bool marked = mask.at(edge.node, edge.neighbor);
        switch (mask.mode()) {
            case PerturbMode::drop:
                if (!marked) out.push_back(e);
                break;
            case PerturbMode::add:
                out.push_back(e);
                if (marked) extra.push_back(e);
                break;
            case PerturbMode::add_new_pair:
                out.push_back(e);
                break;
        }
    }
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
}

DirectedGraph perturb_graph(const DirectedGraph& graph, const PerturbationMask& mask) {
    std::vector<Edge> edges;
    for (Index e : perturbed_edge_indices(graph, mask)) edges.push_back(graph.edge(e));
    if (mask.mode() == PerturbMode::add_new_pair) {
        for (Index i = 0; i < graph.num_nodes(); ++i)
            for (Index j = 0; j < graph.num_nodes(); ++j)
                if (i != j && mask.at(i, j)) edges.push_back({i, j});
    }
    return DirectedGraph(graph.num_nodes(), std::move(edges));
}

DirectedGraph perturb_graph(const DirectedGraph& graph, PerturbMode mode, double fraction,
                            std::uint64_t seed) {
    return perturb_graph(graph, sample_perturbation_mask(graph, mode, fraction, seed));
}

}  // namespace drlabel
