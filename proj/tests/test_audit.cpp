#include "drlabel/audit.hpp"
#include "drlabel/errors.hpp"

#include <doctest.h>

using namespace drlabel;

TEST_CASE("the full audit passes on its default trial count") {
    const AuditReport r = run_audit(AuditOptions{1000, 0, false});
    for (const AuditCheck& c : r.checks) {
        CAPTURE(c.name);
        CAPTURE(c.max_error);
        CHECK(c.passed);
        CHECK(c.max_error <= c.tolerance);
    }
    CHECK(r.passed());
    CHECK_NOTHROW(r.enforce());
    CHECK(r.checks.size() == 6);
}

TEST_CASE("a corrupted magnitude is caught") {
    const AuditReport r = run_audit(AuditOptions{100, 0, true});
    CHECK_FALSE(r.passed());
    CHECK_FALSE(r.checks.front().passed);
    CHECK(r.checks.front().max_error > 1e-8);
    CHECK_THROWS_AS(r.enforce(), AuditFailure);
}

TEST_CASE("audits are reproducible for a seed") {
    const AuditReport a = run_audit(AuditOptions{100, 3, false});
    const AuditReport b = run_audit(AuditOptions{100, 3, false});
    REQUIRE(a.checks.size() == b.checks.size());
    for (Index k = 0; k < a.checks.size(); ++k) {
        CHECK(a.checks[k].name == b.checks[k].name);
        CHECK(a.checks[k].max_error == b.checks[k].max_error);
    }
}

TEST_CASE("individual suites") {
    CHECK(audit_reversibility(200, 1).passed);
    for (const AuditCheck& c : audit_equivariance(10, 5, 2)) CHECK(c.passed);
    CHECK(audit_uniqueness(10, 3).passed);
    CHECK(audit_duplication(10, 4).passed);
    const AuditCheck d = audit_degeneracy(400, 5);
    CHECK(d.passed);
    CHECK(d.max_error == 0.0);
    CHECK_THROWS_AS(run_audit(AuditOptions{0, 0, false}), ValidationError);
}
