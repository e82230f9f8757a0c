#include "drlabel/audit.hpp"

#include "drlabel/errors.hpp"
#include "drlabel/geometry.hpp"
#include "drlabel/graph.hpp"
#include "drlabel/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace drlabel {

bool AuditReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const AuditCheck& c) { return c.passed; });
}

void AuditReport::enforce() const {
    std::string failed;
    for (const AuditCheck& c : checks) {
        if (c.passed) continue;
        if (!failed.empty()) failed += ", ";
        std::ostringstream msg;
        msg << c.name << " (max error " << std::scientific << c.max_error << ", tolerance " << c.tolerance << ")";
        failed += msg.str();
    }
    if (!failed.empty()) throw AuditFailure("audit failed: " + failed);
}

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    while (true) {
        const Vec3 v(n(rng), n(rng), n(rng));
        if (v.norm() > 1e-3) return v.normalized();
    }
}

Vec3 random_vector(std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    return {n(rng), n(rng), n(rng)};
}

// Node 0 at `center` with one neighbor per direction, at distance 1-3.
struct Star {
    std::vector<Vec3> positions;
    DirectedGraph graph;
};

Star make_star(const Vec3& center, const std::vector<Vec3>& directions, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(1.0, 3.0);
    Star s;
    s.positions.push_back(center);
    std::vector<Edge> edges;
    for (Index k = 0; k < directions.size(); ++k) {
        s.positions.push_back(center - dist(rng) * directions[k]);
        edges.push_back({0, k + 1});
    }
    s.graph = DirectedGraph(s.positions.size(), std::move(edges));
    return s;
}

// Random system with free-atom displacements and its radius graph.
struct RandomSystem {
    AtomicSystem system;
    std::vector<Vec3> displacements;
};

RandomSystem random_system(std::mt19937_64& rng) {
    const auto n = std::uniform_int_distribution<Index>(8, 16)(rng);
    RandomSystem r;
    r.system = sample_system(n, 4, box_for(n, 0.7), 0.9, rng(), 0.25);
    for (Index i = 0; i < n; ++i) {
        r.displacements.push_back(r.system.free_mask[i] ? random_vector(rng, 0.3) : Vec3::Zero());
    }
    return r;
}

double max_free_deviation(const Reconstruction& a, const Reconstruction& b, const std::vector<bool>& free_mask) {
    double m = 0.0;
    for (Index i = 0; i < a.positions.size(); ++i) {
        if (!free_mask[i] || a.status[i] != FitStatus::ok) continue;
        m = std::max(m, (a.positions[i] - b.positions[i]).norm());
    }
    return m;
}

AuditCheck finish(std::string name, Index trials, double max_error, double tolerance) {
    return {std::move(name), trials, max_error, tolerance, max_error <= tolerance && std::isfinite(max_error)};
}

}  // namespace

AuditCheck audit_reversibility(Index trials, std::uint64_t seed, bool corrupt_magnitude) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (Index t = 0; t < trials; ++t) {
        const auto n_dirs = std::uniform_int_distribution<Index>(3, 12)(rng);
        std::vector<Vec3> dirs;
        for (Index k = 0; k < n_dirs; ++k) dirs.push_back(random_unit(rng));
        const Star star = make_star(random_vector(rng, 5.0), dirs, rng);
        const Vec3 dp = random_vector(rng, 1.0);
        std::vector<Vec3> disp(star.positions.size(), Vec3::Zero());
        disp[0] = dp;

        MagnitudeMatrix m = deconstruct_labels(star.positions, disp, star.graph);
        if (corrupt_magnitude) m.set(star.graph.edge(0), m.at(star.graph.edge(0)) + 1e-6);
        const Reconstruction rec = reconstruct_positions(m, star.graph, star.positions);
        if (rec.status[0] != FitStatus::ok) {
            --t;  // projections failed to span 3D; redraw
            continue;
        }
        worst = std::max(worst, (rec.displacements[0] - dp).norm());
    }
    return finish("reversibility", trials, worst, 1e-9);
}

std::vector<AuditCheck> audit_equivariance(Index systems, Index transforms_per_system, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst_mag = 0.0, worst_pos = 0.0;
    for (Index s = 0; s < systems; ++s) {
        const RandomSystem r = random_system(rng);
        const DirectedGraph g = build_radius_graph(r.system, 2.5);
        const MagnitudeMatrix m = deconstruct_labels(r.system.positions, r.displacements, g);
        const Reconstruction rec = reconstruct_positions(m, g, r.system.positions);
        for (Index k = 0; k < transforms_per_system; ++k) {
            const E3Transform tf = E3Transform::random(rng, true);
            const std::vector<Vec3> pos_t = apply_e3(tf, r.system.positions);
            const std::vector<Vec3> disp_t = rotate_vectors(tf, r.displacements);
            const MagnitudeMatrix m_t = deconstruct_labels(pos_t, disp_t, g);
            for (const auto& [edge, value] : m) worst_mag = std::max(worst_mag, std::abs(m_t.at(edge) - value));
            const Reconstruction rec_t = reconstruct_positions(m_t, g, pos_t);
            for (Index i = 0; i < rec.positions.size(); ++i) {
                if (rec.status[i] != rec_t.status[i]) {
                    worst_pos = std::max(worst_pos, 1.0);  // classification must not depend on the frame
                    continue;
                }
                worst_pos = std::max(worst_pos, (tf.apply(rec.positions[i]) - rec_t.positions[i]).norm());
            }
        }
    }
    const Index trials = systems * transforms_per_system;
    return {finish("equivariance.magnitudes", trials, worst_mag, 1e-10),
            finish("equivariance.positions", trials, worst_pos, 1e-9)};
}

AuditCheck audit_uniqueness(Index systems, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (Index s = 0; s < systems; ++s) {
        const RandomSystem r = random_system(rng);
        const DirectedGraph graphs[] = {build_radius_graph(r.system, 2.5), build_knn_graph(r.system, 6),
                                        build_full_graph(r.system)};
        std::vector<MagnitudeMatrix> ms;
        for (const DirectedGraph& g : graphs) ms.push_back(deconstruct_labels(r.system.positions, r.displacements, g));
        for (Index a = 0; a < ms.size(); ++a)
            for (Index b = a + 1; b < ms.size(); ++b)
                for (const auto& [edge, value] : ms[a]) {
                    if (!ms[b].contains(edge)) continue;
                    // Any difference at all, including the last bit, fails.
                    if (ms[b].at(edge) != value) worst = std::max(worst, std::max(std::abs(ms[b].at(edge) - value), 1e-300));
                }
    }
    return finish("uniqueness", systems, worst, 0.0);
}

AuditCheck audit_duplication(Index systems, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    Index trials = 0;
    for (Index s = 0; s < systems; ++s) {
        const RandomSystem r = random_system(rng);
        const DirectedGraph g = build_radius_graph(r.system, 2.5);
        const MagnitudeMatrix m = deconstruct_labels(r.system.positions, r.displacements, g);
        const Reconstruction clean = reconstruct_positions(m, g, r.system.positions);
        for (double f : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) {
            const DirectedGraph dup = perturb_graph(g, PerturbMode::add, f, rng());
            const Reconstruction rec = reconstruct_positions(m, dup, r.system.positions);
            worst = std::max(worst, max_free_deviation(clean, rec, r.system.free_mask));
            ++trials;
        }
    }
    return finish("duplication", trials, worst, 1e-9);
}

AuditCheck audit_degeneracy(Index trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Index wrong = 0;
    for (Index t = 0; t < trials; ++t) {
        const auto n_dirs = std::uniform_int_distribution<Index>(3, 12)(rng);
        const E3Transform frame = E3Transform::random(rng, true, 0.0);
        std::vector<Vec3> dirs;
        FitStatus expected = FitStatus::degenerate;
        Vec3 dp = random_vector(rng, 1.0);
        switch (t % 4) {
            case 0:  // coplanar
                for (Index k = 0; k < n_dirs; ++k) {
                    const double a = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
                    dirs.push_back(frame.rotate(Vec3(std::cos(a), std::sin(a), 0.0)));
                }
                break;
            case 1: {  // collinear
                const Vec3 u = random_unit(rng);
                for (Index k = 0; k < n_dirs; ++k) dirs.push_back(k % 2 == 0 ? u : Vec3(-u));
                break;
            }
            case 2:  // no displacement
                for (Index k = 0; k < n_dirs; ++k) dirs.push_back(random_unit(rng));
                dp = Vec3::Zero();
                expected = FitStatus::zero_shortcut;
                break;
            default:  // generic: the three axes of a random frame plus extras
                dirs = {frame.rotate(Vec3::UnitX()), frame.rotate(Vec3::UnitY()), frame.rotate(Vec3::UnitZ())};
                for (Index k = 3; k < n_dirs; ++k) dirs.push_back(random_unit(rng));
                // Keep every projection clear of zero so the fit is well posed.
                dp = frame.rotate(Vec3(1.0, 1.0, 1.0)) * std::uniform_real_distribution<double>(0.5, 2.0)(rng);
                expected = FitStatus::ok;
                break;
        }
        const Star star = make_star(random_vector(rng, 5.0), dirs, rng);
        std::vector<Vec3> disp(star.positions.size(), Vec3::Zero());
        disp[0] = dp;
        const Reconstruction rec =
            reconstruct_positions(deconstruct_labels(star.positions, disp, star.graph), star.graph, star.positions);
        const bool ok_status = rec.status[0] == expected;
        const bool ok_fallback = expected == FitStatus::ok || rec.displacements[0] == Vec3::Zero();
        if (!ok_status || !ok_fallback) ++wrong;
    }
    return finish("degeneracy", trials, static_cast<double>(wrong), 0.0);
}

AuditReport run_audit(const AuditOptions& options) {
    if (options.trials < 1) throw ValidationError("audit needs at least one trial");
    const Index systems = std::max<Index>(1, options.trials / 10);
    AuditReport report;
    report.checks.push_back(audit_reversibility(options.trials, derive_seed(options.seed, 0), options.corrupt_magnitude));
    for (AuditCheck& c : audit_equivariance(systems, 10, derive_seed(options.seed, 1))) report.checks.push_back(std::move(c));
    report.checks.push_back(audit_uniqueness(systems, derive_seed(options.seed, 2)));
    report.checks.push_back(audit_duplication(systems, derive_seed(options.seed, 3)));
    report.checks.push_back(audit_degeneracy(options.trials, derive_seed(options.seed, 4)));
    return report;
}

}  // namespace drlabel
