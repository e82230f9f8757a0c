#pragma once

// Randomized property suites for label deconstruction and reconstruction.

#include "drlabel/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace drlabel {

struct AuditCheck {
    std::string name;
    Index trials = 0;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct AuditReport {
    std::vector<AuditCheck> checks;

    bool passed() const;
    /// Throws AuditFailure naming every failed check.
    void enforce() const;
};

/// Single nodes with 3-12 random directions: deconstruct then refit.
/// `corrupt_magnitude` perturbs one magnitude per trial (negative control).
AuditCheck audit_reversibility(Index trials, std::uint64_t seed, bool corrupt_magnitude = false);

/// Magnitude invariance and reconstruction equivariance under random
/// rotations, reflections and translations.
std::vector<AuditCheck> audit_equivariance(Index systems, Index transforms_per_system, std::uint64_t seed);

/// Magnitudes of edges shared by radius, k-NN and full graphs must be
/// bit-identical.
AuditCheck audit_uniqueness(Index systems, std::uint64_t seed);

/// Oracle magnitudes on graphs with 10-60% of edges duplicated reconstruct
/// the same positions.
AuditCheck audit_duplication(Index systems, std::uint64_t seed);

/// Coplanar and collinear direction sets must be flagged degenerate, zero
/// displacements must take the shortcut and generic sets must fit. The error
/// is the number of misclassified trials.
AuditCheck audit_degeneracy(Index trials, std::uint64_t seed);

struct AuditOptions {
    Index trials = 1000;
    std::uint64_t seed = 0;
    bool corrupt_magnitude = false;
};

/// All suites; system-level suites use max(1, trials / 10) systems.
AuditReport run_audit(const AuditOptions& options);

}  // namespace drlabel
