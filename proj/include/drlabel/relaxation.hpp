#pragma once

// Synthetic relaxation data: random clusters relaxed under a harmonic pair
// potential by gradient descent with step halving.

#include "drlabel/graph.hpp"
#include "drlabel/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace drlabel {

struct PotentialParams {
    /// Symmetric n_species x n_species table of equilibrium distances.
    Eigen::MatrixXd r0;
    double stiffness = 10.0;
    double cutoff = 1.4;

    Index num_species() const { return static_cast<Index>(r0.rows()); }
    double rest_length(int a, int b) const { return r0(a, b); }

    /// r0(a, b) = base + step * (a + b).
    static PotentialParams make_default(Index n_species, double base = 1.0, double step = 0.05,
                                        double stiffness = 10.0, double cutoff = 1.4);
};

/// Throws ValidationError unless r0 > 0 (symmetric), k > 0, cutoff > max r0.
void validate(const PotentialParams& params);

struct RelaxationInstance {
    AtomicSystem system;  // positions hold the initial state
    std::vector<Vec3> equilibrium_positions;
    double equilibrium_energy = 0.0;
    bool converged = false;
    int steps = 0;
    int forced_steps = 0;  // steps taken after exhausting the halvings

    const std::vector<Vec3>& initial_positions() const { return system.positions; }
    std::vector<Vec3> displacements() const;
};

/// Rejection-samples atoms uniformly in [0, box]^3 at pairwise distance >=
/// min_sep. The lowest floor(fixed_fraction * N) atoms by z (ties: lower
/// index) are fixed. Throws SamplingExhausted after 1e5 rejections.
AtomicSystem sample_system(Index n_atoms, Index n_species, double box, double min_sep,
                           std::uint64_t seed, double fixed_fraction = 0.25);

/// Sum over pairs closer than the cutoff of 1/2 k (r - r0)^2.
double potential_energy(std::span<const Vec3> positions, std::span<const int> species,
                        const PotentialParams& params);

/// Negative analytic gradient of potential_energy (fixed atoms included).
std::vector<Vec3> forces(std::span<const Vec3> positions, std::span<const int> species,
                         const PotentialParams& params);

struct RelaxOptions {
    double step_size = 0.04;
    int max_steps = 5000;
    double f_tol = 1e-4;
    int max_halvings = 20;
};

/// Gradient descent on the free atoms until the largest free-atom force norm
/// drops below f_tol. A step that raises the energy is halved, at most
/// max_halvings times. If the smallest step still raises the energy (a pair
/// crossing into the cutoff, where the truncated potential jumps) it is
/// taken anyway and counted in forced_steps.
RelaxationInstance relax(const AtomicSystem& system, const PotentialParams& params,
                         const RelaxOptions& options = {});

struct RelaxStep {
    double energy = 0.0;
    bool forced = false;
};

/// Same as relax() but records the energy after every step, starting with the
/// initial energy.
RelaxationInstance relax_traced(const AtomicSystem& system, const PotentialParams& params,
                                const RelaxOptions& options, std::vector<RelaxStep>& trace);

struct DatasetConfig {
    Index n_instances = 3000;  // accepted (converged) instances
    Index min_atoms = 8;
    Index max_atoms = 20;
    Index n_species = 4;
    double density = 0.7;  // atoms per unit volume of the sampling box
    double min_sep = 0.9;
    double fixed_fraction = 0.25;
    double min_converged_rate = 0.9;
    PotentialParams potential = PotentialParams::make_default(4);
    RelaxOptions relax;
    GraphPolicy graph{GraphPolicyKind::radius, 2.5, std::nullopt, 8};
};

struct DatasetRecord {
    RelaxationInstance instance;
    DirectedGraph graph;  // built on the initial positions
};

struct GeneratedDataset {
    std::vector<DatasetRecord> records;
    Index attempted = 0;
    Index rejected = 0;  // not converged
};

/// Box edge giving `density` atoms per unit volume.
double box_for(Index n_atoms, double density);

/// Relaxes independent random systems until n_instances have converged,
/// giving up after ceil(n_instances / min_converged_rate) attempts with
/// InsufficientConverged.
GeneratedDataset generate_dataset(const DatasetConfig& config, std::uint64_t seed);

/// Deterministic per-item seed derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace drlabel
