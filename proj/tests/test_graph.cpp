#include "drlabel/errors.hpp"
#include "drlabel/graph.hpp"
#include "drlabel/relaxation.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace drlabel;

namespace {

// Four atoms on the x axis at 0, 1, 2.5, 5.
AtomicSystem line_system() {
    AtomicSystem s;
    s.atom_types = {0, 1, 0, 1};
    s.positions = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2.5, 0, 0), Vec3(5, 0, 0)};
    s.free_mask = {true, true, true, true};
    return s;
}

}  // namespace

TEST_CASE("graph construction validates edges") {
    CHECK_THROWS_AS(DirectedGraph(2, {{0, 0}}), ValidationError);
    CHECK_THROWS_AS(DirectedGraph(2, {{0, 2}}), ValidationError);
    const DirectedGraph g(3, {{0, 1}, {2, 1}, {0, 2}, {0, 1}});
    CHECK(g.has_duplicates());
    CHECK(g.incident(0) == std::vector<Index>{0, 2, 3});
    CHECK(g.incident(1).empty());
    CHECK(g.contains({2, 1}));
    CHECK_FALSE(g.contains({1, 2}));
    CHECK(g.isolated_nodes() == std::vector<Index>{1});
}

TEST_CASE("atomic system validation") {
    AtomicSystem s = line_system();
    CHECK_NOTHROW(validate(s));
    s.positions[1] = s.positions[0];
    CHECK_THROWS_AS(validate(s), ValidationError);
    s = line_system();
    s.free_mask.pop_back();
    CHECK_THROWS_AS(validate(s), ValidationError);
    s = line_system();
    s.positions[2].x() = std::nan("");
    CHECK_THROWS_AS(validate(s), ValidationError);
}

TEST_CASE("radius graph uses a strict cutoff in both directions") {
    const AtomicSystem s = line_system();
    const DirectedGraph g = build_radius_graph(s, 1.6);
    CHECK(g.num_edges() == 4);
    CHECK(g.contains({0, 1}));
    CHECK(g.contains({1, 0}));
    CHECK(g.contains({1, 2}));
    CHECK(g.contains({2, 1}));
    CHECK_FALSE(g.contains({2, 3}));  // 2.5 apart
    CHECK(build_radius_graph(s, 1.0).num_edges() == 0);  // exactly at the cutoff
}

TEST_CASE("radius graph neighbor cap keeps the nearest") {
    const AtomicSystem s = line_system();
    const DirectedGraph g = build_radius_graph(s, 10.0, 1);
    CHECK(g.num_edges() == 4);
    CHECK(g.contains({0, 1}));
    CHECK(g.contains({1, 0}));  // distance 1 beats 1.5
    CHECK(g.contains({2, 1}));
    CHECK(g.contains({3, 2}));
}

TEST_CASE("k-nearest graph") {
    const AtomicSystem s = line_system();
    const DirectedGraph g = build_knn_graph(s, 2);
    CHECK(g.num_edges() == 8);
    for (Index i = 0; i < 4; ++i) CHECK(g.incident(i).size() == 2);
    CHECK(g.contains({3, 2}));
    CHECK(g.contains({3, 1}));
    CHECK_FALSE(g.contains({3, 0}));
    CHECK_THROWS_AS(build_knn_graph(s, 0), ValidationError);
    CHECK_THROWS_AS(build_knn_graph(s, 4), ValidationError);
}

TEST_CASE("k-nearest ties go to the lower index") {
    AtomicSystem s = line_system();
    s.positions = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 3, 0)};
    const DirectedGraph g = build_knn_graph(s, 1);
    CHECK(g.contains({0, 1}));
    CHECK_FALSE(g.contains({0, 2}));
}

TEST_CASE("full graph has N(N-1) edges and every builder agrees with it") {
    const AtomicSystem s = sample_system(12, 3, box_for(12, 0.7), 0.9, 42);
    const DirectedGraph full = build_full_graph(s);
    CHECK(full.num_edges() == 12 * 11);
    CHECK_FALSE(full.has_duplicates());
    for (const DirectedGraph& g : {build_radius_graph(s, 2.5), build_knn_graph(s, 5)})
        for (const Edge& e : g.edges()) CHECK(full.contains(e));
    CHECK(build_graph(s, GraphPolicy{GraphPolicyKind::knn, 3.0, std::nullopt, 5}) == build_knn_graph(s, 5));
}

TEST_CASE("policy and mode names round trip") {
    for (auto k : {GraphPolicyKind::radius, GraphPolicyKind::knn, GraphPolicyKind::full})
        CHECK(parse_graph_policy(to_string(k)) == k);
    for (auto m : {PerturbMode::drop, PerturbMode::add, PerturbMode::add_new_pair})
        CHECK(parse_perturb_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_graph_policy("delaunay"), ValidationError);
    CHECK_THROWS_AS(parse_perturb_mode("shuffle"), ValidationError);
}

TEST_CASE("perturbation masks") {
    const AtomicSystem s = sample_system(10, 2, box_for(10, 0.7), 0.9, 8);
    const DirectedGraph g = build_radius_graph(s, 2.5);
    REQUIRE(g.num_edges() > 10);

    SUBCASE("drop removes the marked edges") {
        const PerturbationMask mask = sample_perturbation_mask(g, PerturbMode::drop, 0.3, 1);
        CHECK(mask.count() == static_cast<Index>(std::llround(0.3 * g.num_edges())));
        const DirectedGraph d = perturb_graph(g, mask);
        CHECK(d.num_edges() == g.num_edges() - mask.count());
        for (const Edge& e : d.edges()) CHECK_FALSE(mask.at(e.node, e.neighbor));
    }
    SUBCASE("add duplicates the marked edges") {
        const DirectedGraph a = perturb_graph(g, PerturbMode::add, 0.5, 2);
        CHECK(a.num_edges() == g.num_edges() + static_cast<Index>(std::llround(0.5 * g.num_edges())));
        CHECK(a.has_duplicates());
        for (const Edge& e : a.edges()) CHECK(g.contains(e));
    }
    SUBCASE("add_new_pair only connects unconnected pairs") {
        const PerturbationMask mask = sample_perturbation_mask(g, PerturbMode::add_new_pair, 0.2, 3);
        for (Index i = 0; i < 10; ++i)
            for (Index j = 0; j < 10; ++j)
                if (mask.at(i, j)) CHECK_FALSE(g.contains({i, j}));
        const DirectedGraph a = perturb_graph(g, mask);
        CHECK(a.num_edges() == g.num_edges() + mask.count());
        CHECK_FALSE(a.has_duplicates());
    }
    SUBCASE("indices of an add perturbation") {
        const PerturbationMask mask = sample_perturbation_mask(g, PerturbMode::add, 0.2, 4);
        const std::vector<Index> idx = perturbed_edge_indices(g, mask);
        CHECK(idx.size() == g.num_edges() + mask.count());
        for (Index e = 0; e < g.num_edges(); ++e) CHECK(idx[e] == e);
    }
    SUBCASE("same seed, same mask") {
        CHECK(perturb_graph(g, PerturbMode::drop, 0.4, 9) == perturb_graph(g, PerturbMode::drop, 0.4, 9));
        CHECK_FALSE(perturb_graph(g, PerturbMode::drop, 0.4, 9) == perturb_graph(g, PerturbMode::drop, 0.4, 10));
    }
    SUBCASE("fraction zero is the identity") { CHECK(perturb_graph(g, PerturbMode::drop, 0.0, 1) == g); }
    SUBCASE("invalid fractions") {
        CHECK_THROWS_AS(sample_perturbation_mask(g, PerturbMode::drop, 1.5, 1), ValidationError);
        CHECK_THROWS_AS(sample_perturbation_mask(g, PerturbMode::drop, -0.1, 1), ValidationError);
    }
    SUBCASE("diagonal entries are rejected") {
        PerturbationMask m(3, PerturbMode::drop, 0);
        CHECK_THROWS_AS(m.set(1, 1, true), ValidationError);
    }
}
