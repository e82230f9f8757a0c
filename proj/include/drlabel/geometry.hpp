#pragma once

// Label deconstruction onto edges and sphere-fit reconstruction back onto
// nodes, plus the E(3) transform used by the property harnesses.

#include "drlabel/types.hpp"

#include <map>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace drlabel {

/// Unit-norm direction. Only constructible through normalize().
class UnitVec3 {
public:
    /// Throws CoincidentAtoms when |v| <= 1e-9.
    static UnitVec3 normalize(const Vec3& v);

    const Vec3& vec() const { return dir_; }
    double dot(const Vec3& v) const { return dir_.dot(v); }

private:
    explicit UnitVec3(const Vec3& d) : dir_(d) {}
    Vec3 dir_;
};

/// Direction of edge e_ij: (p_i - p_j) / |p_i - p_j|, pointing from the
/// neighbor j toward node i.
UnitVec3 unit_direction(const Vec3& p_i, const Vec3& p_j);

struct Projection {
    double magnitude = 0.0;
    Vec3 vector = Vec3::Zero();
};

Projection project_displacement(const Vec3& delta_p, const UnitVec3& d);

/// Sparse asymmetric map (i, j) -> projection magnitude m_ij.
class MagnitudeMatrix {
public:
    using Map = std::map<Edge, double>;

    void set(Edge e, double magnitude) { entries_[e] = magnitude; }
    /// Throws std::out_of_range for absent edges.
    double at(Edge e) const { return entries_.at(e); }
    bool contains(Edge e) const { return entries_.count(e) != 0; }
    Index size() const { return entries_.size(); }

    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }

    /// One magnitude per edge of `graph`, in edge order.
    std::vector<double> aligned(const DirectedGraph& graph) const;
    static MagnitudeMatrix from_aligned(const DirectedGraph& graph, std::span<const double> values);

    /// True iff the key set is exactly the distinct edges of `graph`.
    bool covers_exactly(const DirectedGraph& graph) const;

    friend bool operator==(const MagnitudeMatrix&, const MagnitudeMatrix&) = default;

private:
    Map entries_;
};

/// Per-node list of (neighbor, projection vector), the vector form of the
/// deconstructed labels.
struct EdgeProjectionSet {
    std::vector<std::vector<std::pair<Index, Vec3>>> per_node;
};

/// Magnitudes m_ij = delta_p_i . d_ij for every directed edge.
MagnitudeMatrix deconstruct_labels(std::span<const Vec3> positions,
                                   std::span<const Vec3> displacements,
                                   const DirectedGraph& graph);

EdgeProjectionSet project_labels(std::span<const Vec3> positions,
                                 std::span<const Vec3> displacements,
                                 const DirectedGraph& graph);

enum class FitStatus { ok, zero_shortcut, degenerate };

struct SphereFit {
    Vec3 center = Vec3::Zero();
    Vec3 displacement = Vec3::Zero();
    FitStatus status = FitStatus::ok;
    Mat3 normal = Mat3::Zero();  // A
    Vec3 rhs = Vec3::Zero();     // b
};

/// Tolerances of the sphere fit.
struct SphereFitTolerances {
    static constexpr double zero_norm = 1e-10;       // every |x_j| below: zero shortcut
    static constexpr double rank_ratio = 1e-12;      // lambda_min(A) <= ratio * lambda_max(A): degenerate
    static constexpr double residual_ratio = 1e-6;   // |2A C - b| > ratio * |b|: degenerate
};

/// Least-squares sphere through the origin closest to the projection
/// endpoints: (2A) C = b with A = mean(x x^T), b = mean(|x|^2 x), solved by
/// Householder QR on the rows x_j; displacement = 2C. An empty input is
/// reported as degenerate.
SphereFit sphere_fit(std::span<const Vec3> projections);

/// Direct cofactor solve of a 3x3 system. Returns false when det(M) == 0.
bool solve3x3(const Mat3& m, const Vec3& rhs, Vec3& out);

struct Reconstruction {
    std::vector<Vec3> positions;
    std::vector<Vec3> displacements;
    std::vector<FitStatus> status;

    Index degenerate_count() const;
};

/// p_i = p0_i + SphereFit({m_ij d_ij}) over every edge of `graph` (duplicates
/// included). Degenerate nodes fall back to zero displacement.
Reconstruction reconstruct_positions(const MagnitudeMatrix& magnitudes,
                                     const DirectedGraph& graph,
                                     std::span<const Vec3> initial_positions);

/// Rotation-or-reflection followed by translation: p -> R p + t.
class E3Transform {
public:
    E3Transform() = default;
    /// Throws ValidationError unless R R^T = I within 1e-12 and det R = +-1.
    E3Transform(const Mat3& rotation, const Vec3& translation);

    static E3Transform random(std::mt19937_64& rng, bool allow_reflection = true,
                              double translation_scale = 5.0);

    const Mat3& matrix() const { return rotation_; }
    const Vec3& translation() const { return translation_; }

    Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
    /// Transforms a free vector (no translation).
    Vec3 rotate(const Vec3& v) const { return rotation_ * v; }

private:
    Mat3 rotation_ = Mat3::Identity();
    Vec3 translation_ = Vec3::Zero();
};

std::vector<Vec3> apply_e3(const E3Transform& t, std::span<const Vec3> positions);
std::vector<Vec3> rotate_vectors(const E3Transform& t, std::span<const Vec3> vectors);

}  // namespace drlabel
