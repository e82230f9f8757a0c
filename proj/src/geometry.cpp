#include "drlabel/geometry.hpp"

#include "drlabel/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <string>

namespace drlabel {

UnitVec3 UnitVec3::normalize(const Vec3& v) {
    const double n = v.norm();
    if (!(n > 1e-9)) {
        throw CoincidentAtoms("cannot normalize a vector of length " + std::to_string(n));
    }
    return UnitVec3(v / n);
}

UnitVec3 unit_direction(const Vec3& p_i, const Vec3& p_j) {
    return UnitVec3::normalize(p_i - p_j);
}

Projection project_displacement(const Vec3& delta_p, const UnitVec3& d) {
    const double m = d.dot(delta_p);
    return {m, m * d.vec()};
}

std::vector<double> MagnitudeMatrix::aligned(const DirectedGraph& graph) const {
    std::vector<double> out;
    out.reserve(graph.num_edges());
    for (const Edge& e : graph.edges()) out.push_back(at(e));
    return out;
}

MagnitudeMatrix MagnitudeMatrix::from_aligned(const DirectedGraph& graph,
                                              std::span<const double> values) {
    if (values.size() != graph.num_edges()) {
        throw ValidationError("magnitude count does not match edge count");
    }
    MagnitudeMatrix m;
    for (Index e = 0; e < values.size(); ++e) m.set(graph.edge(e), values[e]);
    return m;
}

bool MagnitudeMatrix::covers_exactly(const DirectedGraph& graph) const {
    std::set<Edge> keys(graph.edges().begin(), graph.edges().end());
    if (keys.size() != entries_.size()) return false;
    for (const Edge& e : keys) {
        if (!contains(e)) return false;
    }
    return true;
}

namespace {

void check_lengths(std::span<const Vec3> positions, std::span<const Vec3> displacements,
                   const DirectedGraph& graph) {
    if (positions.size() != displacements.size()) {
        throw ValidationError("positions and displacements differ in length");
    }
    if (graph.num_nodes() != positions.size()) {
        throw ValidationError("graph node count does not match positions");
    }
}

}  // namespace

MagnitudeMatrix deconstruct_labels(std::span<const Vec3> positions,
                                   std::span<const Vec3> displacements,
                                   const DirectedGraph& graph) {
    check_lengths(positions, displacements, graph);
    MagnitudeMatrix out;
    for (const Edge& e : graph.edges()) {
        const UnitVec3 d = unit_direction(positions[e.node], positions[e.neighbor]);
        out.set(e, project_displacement(displacements[e.node], d).magnitude);
    }
    return out;
}

EdgeProjectionSet project_labels(std::span<const Vec3> positions,
                                 std::span<const Vec3> displacements,
                                 const DirectedGraph& graph) {
    check_lengths(positions, displacements, graph);
    EdgeProjectionSet out;
    out.per_node.resize(positions.size());
    for (const Edge& e : graph.edges()) {
        const UnitVec3 d = unit_direction(positions[e.node], positions[e.neighbor]);
        out.per_node[e.node].emplace_back(e.neighbor,
                                          project_displacement(displacements[e.node], d).vector);
    }
    return out;
}

bool solve3x3(const Mat3& m, const Vec3& rhs, Vec3& out) {
    Mat3 cof;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            const int r1 = (r + 1) % 3, r2 = (r + 2) % 3;
            const int c1 = (c + 1) % 3, c2 = (c + 2) % 3;
            cof(r, c) = m(r1, c1) * m(r2, c2) - m(r1, c2) * m(r2, c1);
        }
    }
    const double det = m.row(0).dot(cof.row(0));
    if (det == 0.0 || !std::isfinite(det)) return false;
    out = cof.transpose() * rhs / det;
    return true;
}

SphereFit sphere_fit(std::span<const Vec3> projections) {
    SphereFit fit;
    if (projections.empty()) {
        fit.status = FitStatus::degenerate;
        return fit;
    }
    bool all_zero = true;
    for (const Vec3& x : projections) {
        if (x.norm() >= SphereFitTolerances::zero_norm) {
            all_zero = false;
            break;
        }
    }
    if (all_zero) {
        fit.status = FitStatus::zero_shortcut;
        return fit;
    }

    const double inv_n = 1.0 / static_cast<double>(projections.size());
    for (const Vec3& x : projections) {
        fit.rhs += x.squaredNorm() * x * inv_n;
        fit.normal += x * x.transpose() * inv_n;
    }

    Eigen::SelfAdjointEigenSolver<Mat3> eig(fit.normal, Eigen::EigenvaluesOnly);
    const Vec3& lambda = eig.eigenvalues();  // ascending
    if (!(lambda(0) > SphereFitTolerances::rank_ratio * lambda(2))) {
        fit.status = FitStatus::degenerate;
        return fit;
    }

    // Same solution as (2A) C = b, but least squares on the rows x_j . C =
    // |x_j|^2 / 2 keeps the conditioning of X instead of squaring it.
    Eigen::Matrix<double, Eigen::Dynamic, 3> rows(static_cast<Eigen::Index>(projections.size()), 3);
    Eigen::VectorXd half_sq(static_cast<Eigen::Index>(projections.size()));
    for (Index j = 0; j < projections.size(); ++j) {
        rows.row(static_cast<Eigen::Index>(j)) = projections[j].transpose();
        half_sq(static_cast<Eigen::Index>(j)) = 0.5 * projections[j].squaredNorm();
    }
    const Vec3 c = rows.householderQr().solve(half_sq);
    const Mat3 two_a = 2.0 * fit.normal;
    if (!c.allFinite() ||
        (two_a * c - fit.rhs).norm() > SphereFitTolerances::residual_ratio * fit.rhs.norm()) {
        fit.status = FitStatus::degenerate;
        return fit;
    }
    fit.center = c;
    fit.displacement = 2.0 * c;
    return fit;
}

Index Reconstruction::degenerate_count() const {
    Index n = 0;
    for (FitStatus s : status) n += (s == FitStatus::degenerate);
    return n;
}

Reconstruction reconstruct_positions(const MagnitudeMatrix& magnitudes,
                                     const DirectedGraph& graph,
                                     std::span<const Vec3> initial_positions) {
    if (graph.num_nodes() != initial_positions.size()) {
        throw ValidationError("graph node count does not match positions");
    }
    if (!magnitudes.covers_exactly(graph)) {
        throw ValidationError("magnitudes do not cover exactly the graph's edge set");
    }
    const Index n = initial_positions.size();
    Reconstruction out;
    out.positions.assign(initial_positions.begin(), initial_positions.end());
    out.displacements.assign(n, Vec3::Zero());
    out.status.assign(n, FitStatus::ok);

    std::vector<Vec3> xs;
    for (Index i = 0; i < n; ++i) {
        xs.clear();
        for (Index e : graph.incident(i)) {
            const Edge& edge = graph.edge(e);
            const UnitVec3 d = unit_direction(initial_positions[i], initial_positions[edge.neighbor]);
            xs.push_back(magnitudes.at(edge) * d.vec());
        }
        const SphereFit fit = sphere_fit(xs);
        out.status[i] = fit.status;
        out.displacements[i] = fit.displacement;
        out.positions[i] += fit.displacement;
    }
    return out;
}

E3Transform::E3Transform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
    if (!rotation.allFinite() || !translation.allFinite()) {
        throw ValidationError("E3Transform entries must be finite");
    }
    const double ortho_err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho_err > 1e-12) {
        throw ValidationError("E3Transform matrix is not orthogonal");
    }
    if (std::abs(std::abs(rotation.determinant()) - 1.0) > 1e-12) {
        throw ValidationError("E3Transform determinant is not +-1");
    }
}

E3Transform E3Transform::random(std::mt19937_64& rng, bool allow_reflection,
                                double translation_scale) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat3 g;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) g(r, c) = gauss(rng);
    Eigen::HouseholderQR<Mat3> qr(g);
    Mat3 q = qr.householderQ();
    // Fix the sign ambiguity of QR so q is Haar-distributed.
    const Mat3 r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int c = 0; c < 3; ++c) {
        if (r(c, c) < 0) q.col(c) *= -1.0;
    }
    if (q.determinant() < 0) q.col(0) *= -1.0;
    if (allow_reflection && std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
        q.col(2) *= -1.0;
    }
    std::uniform_real_distribution<double> shift(-translation_scale, translation_scale);
    Vec3 t(shift(rng), shift(rng), shift(rng));
    return E3Transform(q, t);
}

std::vector<Vec3> apply_e3(const E3Transform& t, std::span<const Vec3> positions) {
    std::vector<Vec3> out;
    out.reserve(positions.size());
    for (const Vec3& p : positions) out.push_back(t.apply(p));
    return out;
}

std::vector<Vec3> rotate_vectors(const E3Transform& t, std::span<const Vec3> vectors) {
    std::vector<Vec3> out;
    out.reserve(vectors.size());
    for (const Vec3& v : vectors) out.push_back(t.rotate(v));
    return out;
}

}  // namespace drlabel
