#include <doctest.h>

#include <cmath>
#include <numeric>

#include "nmaout/errors.hpp"
#include "nmaout/simgen.hpp"
#include "nmaout/stats.hpp"

using namespace nmaout;

TEST_CASE("geometry fixtures") {
    CHECK(load_geometry(Geometry::balanced_100).total_studies() == 100);
    CHECK(load_geometry(Geometry::unbalanced_well_35).total_studies() == 35);
    CHECK(load_geometry(Geometry::unbalanced_fair_27).total_studies() == 27);
    CHECK(load_geometry(Geometry::unbalanced_poor_15).total_studies() == 15);
    for (auto g : {Geometry::balanced_100, Geometry::unbalanced_poor_15}) CHECK(load_geometry(g).num_treatments == 5);
    CHECK(parse_geometry("fair_27") == Geometry::unbalanced_fair_27);
    CHECK(parse_geometry("unbalanced_poor_15") == Geometry::unbalanced_poor_15);
    CHECK_THROWS_AS(parse_geometry("dense"), ValidationError);
    CHECK_THROWS_AS(parse_geometry_csv("treatment_a,treatment_b,studies\n1,1,3\n", Geometry::balanced_100),
                    ValidationError);
    CHECK_THROWS_AS(parse_geometry_csv("treatment_a,treatment_b,studies\n1,x,3\n", Geometry::balanced_100),
                    ValidationError);
}

TEST_CASE("scenario grid") {
    const auto grid = scenario_grid();
    REQUIRE(grid.size() == 32);
    CHECK(grid[0].geometry == Geometry::balanced_100);
    CHECK(grid[0].tau2 == 0.0);
    CHECK(grid[0].num_outliers == 1);
    const auto s17 = grid_scenario(17);
    CHECK(s17.geometry == Geometry::unbalanced_fair_27);
    CHECK(s17.tau2 == 0.0);
    CHECK(s17.num_outliers == 1);
    CHECK(grid_scenario(20).tau2 == 0.287);
    const auto s32 = grid_scenario(32);
    CHECK(s32.geometry == Geometry::unbalanced_poor_15);
    CHECK(s32.num_outliers == 3);
    CHECK(s32.tau2 == 0.287);
    CHECK_THROWS_AS(grid_scenario(33), ValidationError);
}

TEST_CASE("contamination and validation") {
    SimScenario s;
    s.s_range = {4.0, 12.25};
    CHECK(s.contamination() == doctest::Approx(10.5));
    s.severity = 2.5;
    s.tau2 = 0.287;
    CHECK(s.contamination() == doctest::Approx(2.5 * std::sqrt(12.537)));
    s.tau2 = 0.1;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.tau2 = 0.0;
    s.num_outliers = 2;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.num_outliers = 1;
    s.severity = 4;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.severity = 3;
    s.s_range = {1.0, 2.0};
    CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("generation is deterministic in the seed") {
    auto sc = grid_scenario(25);
    sc.seed = 77;
    const auto a = generate(sc);
    const auto b = generate(sc);
    CHECK(a.dataset == b.dataset);
    CHECK(a.outlier_ids == b.outlier_ids);
    CHECK(truth_to_json(sc, a) == truth_to_json(sc, b));
    sc.seed = 78;
    CHECK_FALSE(generate(sc).dataset == a.dataset);
}

TEST_CASE("structure of a generated network") {
    auto sc = grid_scenario(17);
    sc.seed = 3;
    const auto net = generate(sc);
    const auto& ds = net.dataset;
    CHECK(ds.num_studies() == 27);
    CHECK(ds.num_treatments() == 5);
    REQUIRE(net.truth.size() == 4);
    CHECK(net.truth[0] == doctest::Approx(0.25));
    CHECK(net.truth[3] == doctest::Approx(1.0));
    REQUIRE(net.outlier_ids.size() == 1);
    CHECK(std::abs(net.outlier_directions[0]) == 1);
    CHECK(net.s2 >= 0.25);
    CHECK(net.s2 <= 4.0);
    CHECK(net.contamination == doctest::Approx(6.0));

    // tau2 = 0: every non-outlier log-OR is exactly the true contrast.
    const auto geo = load_geometry(sc.geometry);
    std::size_t i = 0;
    for (const auto& e : geo.edges) {
        const double t = net.truth[static_cast<std::size_t>(e.b - 2)] - (e.a == 1 ? 0.0 : net.truth[static_cast<std::size_t>(e.a - 2)]);
        for (int c = 0; c < e.studies; ++c, ++i) {
            const auto& id = ds.study(i).id();
            const bool outlier = id == net.outlier_ids[0];
            const double expect = t + (outlier ? net.outlier_directions[0] * net.contamination : 0.0);
            CHECK(net.study_log_or[i] == doctest::Approx(expect).epsilon(1e-12));
            CHECK(ds.study(i).arms()[0].treatment == e.a);
            CHECK(ds.study(i).arms()[1].treatment == e.b);
        }
    }
}

TEST_CASE("marginal checks over many replications") {
    auto sc = grid_scenario(4);  // balanced, tau2 = 0.287
    sc.num_outliers = 0;
    double size_sum = 0.0;
    std::size_t arms = 0;
    std::vector<double> resid;
    const auto geo = load_geometry(sc.geometry);
    for (std::uint64_t seed = 1; seed <= 60; ++seed) {
        sc.seed = seed;
        const auto net = generate(sc, geo);
        std::size_t i = 0;
        for (const auto& e : geo.edges) {
            const double t = net.truth[static_cast<std::size_t>(e.b - 2)] -
                             (e.a == 1 ? 0.0 : net.truth[static_cast<std::size_t>(e.a - 2)]);
            for (int c = 0; c < e.studies; ++c, ++i) {
                resid.push_back(net.study_log_or[i] - t);
                for (const auto& a : net.dataset.study(i).arms()) {
                    size_sum += a.total;
                    ++arms;
                    CHECK(a.total >= 50);
                    CHECK(a.total <= 200);
                }
            }
        }
    }
    const double mean_size = size_sum / arms;
    CHECK(mean_size >= 120);
    CHECK(mean_size <= 130);
    const double m = std::accumulate(resid.begin(), resid.end(), 0.0) / resid.size();
    double v = 0.0;
    for (double r : resid) v += (r - m) * (r - m);
    v /= resid.size() - 1;
    CHECK(v == doctest::Approx(0.287).epsilon(0.2));
    CHECK(std::abs(m) < 0.05);
}

TEST_CASE("outlier directions are balanced and three outliers are distinct") {
    auto sc = grid_scenario(32);
    int plus = 0, total = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        sc.seed = seed;
        const auto net = generate(sc);
        REQUIRE(net.outlier_ids.size() == 3);
        CHECK(net.outlier_ids[0] != net.outlier_ids[1]);
        CHECK(net.outlier_ids[1] != net.outlier_ids[2]);
        for (int d : net.outlier_directions) {
            plus += d > 0;
            ++total;
        }
    }
    CHECK(plus > total * 0.35);
    CHECK(plus < total * 0.65);
}
