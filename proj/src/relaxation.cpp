#include "drlabel/relaxation.hpp"

#include "drlabel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace drlabel {

PotentialParams PotentialParams::make_default(Index n_species, double base, double step,
                                              double stiffness, double cutoff) {
    PotentialParams p;
    p.r0.resize(static_cast<Eigen::Index>(n_species), static_cast<Eigen::Index>(n_species));
    for (Index a = 0; a < n_species; ++a)
        for (Index b = 0; b < n_species; ++b)
            p.r0(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                base + step * static_cast<double>(a + b);
    p.stiffness = stiffness;
    p.cutoff = cutoff;
    return p;
}

void validate(const PotentialParams& params) {
    if (params.r0.rows() == 0 || params.r0.rows() != params.r0.cols()) {
        throw ValidationError("r0 must be a non-empty square table");
    }
    if (!(params.r0.array() > 0.0).all()) throw ValidationError("r0 must be positive");
    if ((params.r0 - params.r0.transpose()).cwiseAbs().maxCoeff() != 0.0) {
        throw ValidationError("r0 must be symmetric");
    }
    if (!(params.stiffness > 0.0)) throw ValidationError("stiffness must be positive");
    if (!(params.cutoff > params.r0.maxCoeff())) throw ValidationError("cutoff must exceed every r0");
}

std::vector<Vec3> RelaxationInstance::displacements() const {
    std::vector<Vec3> out(equilibrium_positions.size());
    for (Index i = 0; i < out.size(); ++i) out[i] = equilibrium_positions[i] - system.positions[i];
    return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over the combined key
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

AtomicSystem sample_system(Index n_atoms, Index n_species, double box, double min_sep,
                           std::uint64_t seed, double fixed_fraction) {
    if (n_atoms < 2) throw ValidationError("n_atoms must be at least 2");
    if (n_species < 1) throw ValidationError("n_species must be at least 1");
    if (!(min_sep > 0.0) || !(box > 0.0)) throw ValidationError("box and min_sep must be positive");
    if (!(fixed_fraction >= 0.0 && fixed_fraction < 1.0)) {
        throw ValidationError("fixed_fraction must lie in [0, 1)");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coord(0.0, box);
    std::uniform_int_distribution<int> species(0, static_cast<int>(n_species) - 1);

    AtomicSystem sys;
    constexpr int kMaxRejections = 100000;
    int rejections = 0;
    while (sys.positions.size() < n_atoms) {
        const Vec3 p(coord(rng), coord(rng), coord(rng));
        bool ok = true;
        for (const Vec3& q : sys.positions) {
            if ((p - q).norm() < min_sep) {
                ok = false;
                break;
            }
        }
        if (!ok) {
            if (++rejections >= kMaxRejections) {
                throw SamplingExhausted("could not place " + std::to_string(n_atoms) +
                                        " atoms after 1e5 rejected attempts");
            }
            continue;
        }
        sys.positions.push_back(p);
    }
    for (Index i = 0; i < n_atoms; ++i) sys.atom_types.push_back(species(rng));

    std::vector<Index> order(n_atoms);
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return sys.positions[a].z() < sys.positions[b].z();
    });
    const auto n_fixed = static_cast<Index>(std::floor(fixed_fraction * static_cast<double>(n_atoms)));
    sys.free_mask.assign(n_atoms, true);
    for (Index r = 0; r < n_fixed; ++r) sys.free_mask[order[r]] = false;
    return sys;
}

double potential_energy(std::span<const Vec3> positions, std::span<const int> species,
                        const PotentialParams& params) {
    double e = 0.0;
    for (Index i = 0; i < positions.size(); ++i) {
        for (Index j = i + 1; j < positions.size(); ++j) {
            const double r = (positions[i] - positions[j]).norm();
            if (r < params.cutoff) {
                const double dr = r - params.rest_length(species[i], species[j]);
                e += 0.5 * params.stiffness * dr * dr;
            }
        }
    }
    return e;
}

std::vector<Vec3> forces(std::span<const Vec3> positions, std::span<const int> species,
                         const PotentialParams& params) {
    std::vector<Vec3> f(positions.size(), Vec3::Zero());
    for (Index i = 0; i < positions.size(); ++i) {
        for (Index j = i + 1; j < positions.size(); ++j) {
            const Vec3 rij = positions[i] - positions[j];
            const double r = rij.norm();
            if (r < params.cutoff && r > 0.0) {
                const double dr = r - params.rest_length(species[i], species[j]);
                const Vec3 fij = -params.stiffness * dr * rij / r;
                f[i] += fij;
                f[j] -= fij;
            }
        }
    }
    return f;
}

namespace {

double max_free_force(const std::vector<Vec3>& f, const std::vector<bool>& free_mask) {
    double m = 0.0;
    for (Index i = 0; i < f.size(); ++i)
        if (free_mask[i]) m = std::max(m, f[i].norm());
    return m;
}

RelaxationInstance relax_impl(const AtomicSystem& system, const PotentialParams& params,
                              const RelaxOptions& options, std::vector<RelaxStep>* trace) {
    if (!(options.step_size > 0.0)) throw ValidationError("step_size must be positive");
    validate(params);
    const Index n = system.size();
    for (int t : system.atom_types) {
        if (static_cast<Index>(t) >= params.num_species()) {
            throw ValidationError("atom type outside the potential's species table");
        }
    }

    RelaxationInstance out;
    out.system = system;
    std::vector<Vec3> pos = system.positions;
    double energy = potential_energy(pos, system.atom_types, params);
    if (trace) trace->push_back({energy, false});

    std::vector<Vec3> trial(n);
    int steps = 0;
    bool converged = false;
    while (true) {
        const std::vector<Vec3> f = forces(pos, system.atom_types, params);
        if (max_free_force(f, system.free_mask) < options.f_tol) {
            converged = true;
            break;
        }
        if (steps >= options.max_steps) break;

        double step = options.step_size;
        bool accepted = false;
        for (int h = 0; h <= options.max_halvings; ++h) {
            for (Index i = 0; i < n; ++i) trial[i] = system.free_mask[i] ? Vec3(pos[i] + step * f[i]) : pos[i];
            const double e_trial = potential_energy(trial, system.atom_types, params);
            if (e_trial <= energy) {
                pos.swap(trial);
                energy = e_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // Only a pair entering the cutoff raises the energy for every
            // step length: take the smallest step across the jump.
            pos.swap(trial);
            energy = potential_energy(pos, system.atom_types, params);
            ++out.forced_steps;
        }
        ++steps;
        if (trace) trace->push_back({energy, !accepted});
    }
    out.equilibrium_positions = std::move(pos);
    out.equilibrium_energy = energy;
    out.converged = converged;
    out.steps = steps;
    return out;
}

}  // namespace

RelaxationInstance relax(const AtomicSystem& system, const PotentialParams& params,
                         const RelaxOptions& options) {
    return relax_impl(system, params, options, nullptr);
}

RelaxationInstance relax_traced(const AtomicSystem& system, const PotentialParams& params,
                                const RelaxOptions& options, std::vector<RelaxStep>& trace) {
    trace.clear();
    return relax_impl(system, params, options, &trace);
}

double box_for(Index n_atoms, double density) {
    return std::cbrt(static_cast<double>(n_atoms) / density);
}

GeneratedDataset generate_dataset(const DatasetConfig& config, std::uint64_t seed) {
    if (config.min_atoms < 2 || config.max_atoms < config.min_atoms) {
        throw ValidationError("invalid atom count range");
    }
    if (!(config.density > 0.0)) throw ValidationError("density must be positive");
    if (config.potential.num_species() < config.n_species) {
        throw ValidationError("potential does not cover every species");
    }
    validate(config.potential);

    if (!(config.min_converged_rate > 0.0 && config.min_converged_rate <= 1.0)) {
        throw ValidationError("min_converged_rate must lie in (0, 1]");
    }
    const auto max_attempts = static_cast<Index>(
        std::ceil(static_cast<double>(config.n_instances) / config.min_converged_rate - 1e-9));

    GeneratedDataset out;
    for (Index k = 0; out.records.size() < config.n_instances && k < max_attempts; ++k) {
        const std::uint64_t s = derive_seed(seed, k);
        std::mt19937_64 rng(s);
        const auto n_atoms = std::uniform_int_distribution<Index>(config.min_atoms, config.max_atoms)(rng);
        const AtomicSystem sys = sample_system(n_atoms, config.n_species, box_for(n_atoms, config.density),
                                               config.min_sep, derive_seed(s, 1), config.fixed_fraction);
        ++out.attempted;
        RelaxationInstance inst = relax(sys, config.potential, config.relax);
        if (!inst.converged) {
            ++out.rejected;
            continue;
        }
        DirectedGraph g = build_graph(inst.system, config.graph);
        out.records.push_back({std::move(inst), std::move(g)});
    }
    if (out.records.size() < config.n_instances) {
        throw InsufficientConverged("only " + std::to_string(out.records.size()) + " of " +
                                    std::to_string(out.attempted) + " relaxations converged");
    }
    return out;
}

}  // namespace drlabel
