#include <doctest.h>

#include <cmath>

#include "nmaout/downweight.hpp"
#include "nmaout/errors.hpp"
#include "nmaout/simgen.hpp"

using namespace nmaout;

namespace {

SamplerConfig quick(std::size_t iters = 3000) {
    SamplerConfig cfg;
    cfg.iterations = iters;
    cfg.burn_in = iters / 5;
    return cfg;
}

NetworkDataset triangle() {
    return NetworkDataset({Study("1", {{1, 20, 100}, {2, 30, 100}}), Study("2", {{1, 25, 120}, {3, 40, 110}}),
                           Study("3", {{2, 33, 90}, {3, 35, 95}}), Study("4", {{1, 10, 60}, {2, 18, 70}, {3, 20, 65}})},
                          3);
}

}  // namespace

TEST_CASE("beta prior levels") {
    CHECK(parse_beta_prior("moderate") == BetaPrior{3, 3});
    CHECK(parse_beta_prior("severe") == BetaPrior{2, 5});
    CHECK(parse_beta_prior("1.5:4") == BetaPrior{1.5, 4});
    CHECK_THROWS_AS(parse_beta_prior("mild"), ValidationError);
    CHECK_THROWS_AS(parse_beta_prior("0:3"), ValidationError);
    CHECK_THROWS_AS(parse_beta_prior("2:x"), ValidationError);
}

TEST_CASE("plan parsing and validation") {
    const std::vector<std::string> items{"study3=moderate", "1=severe", "2", "4=2:8"};
    const auto plan = parse_plan(items, {4, 4});
    REQUIRE(plan.entries.size() == 4);
    CHECK(plan.entries[0] == std::pair<std::string, BetaPrior>{"3", {3, 3}});
    CHECK(plan.entries[1].second == BetaPrior{2, 5});
    CHECK(plan.entries[2].second == BetaPrior{4, 4});
    CHECK(plan.entries[3].second == BetaPrior{2, 8});

    const auto ds = triangle();
    const auto spec = plan.model_spec(ds, {});
    REQUIRE(spec.downweighting());
    CHECK(spec.downweighting()->studies == std::vector<std::size_t>{2, 0, 1, 3});

    const std::vector<std::string> unknown{"9=moderate"};
    CHECK_THROWS_AS(parse_plan(unknown).validate(ds), ValidationError);
    CHECK_THROWS_AS(DownweightPlan{}.validate(ds), ValidationError);
    const std::vector<std::string> empty_id{"=moderate"};
    CHECK_THROWS_AS(parse_plan(empty_id), ValidationError);
}

TEST_CASE("summaries are consistent across orientation") {
    const auto ds = triangle();
    const auto fit = standard_fit(ds, quick());
    const auto& s = fit.summary;
    CHECK(s.contrasts.size() == 6);
    for (TreatmentId h = 1; h <= 3; ++h) {
        for (TreatmentId k = 1; k <= 3; ++k) {
            if (h == k) continue;
            CHECK(s.contrast(h, k).odds_ratio.median * s.contrast(k, h).odds_ratio.median ==
                  doctest::Approx(1.0).epsilon(1e-9));
            CHECK(s.contrast(h, k).odds_ratio.ci_low <= s.contrast(h, k).odds_ratio.median);
            CHECK(s.contrast(h, k).odds_ratio.median <= s.contrast(h, k).odds_ratio.ci_high);
        }
    }
    CHECK(s.contrast(1, 2).label == ds.label(2) + " vs " + ds.label(1));
    CHECK(s.tau2.ci_low >= 0.0);
    CHECK(s.weights.empty());
    CHECK_THROWS_AS(s.contrast(1, 1), ValidationError);
}

TEST_CASE("down-weighted fit reports its weights, exclusion drops studies") {
    const auto ds = triangle();
    const std::vector<std::string> items{"3=severe"};
    const auto dw = downweighted_fit(ds, parse_plan(items), quick());
    REQUIRE(dw.summary.weights.size() == 1);
    const auto& w = dw.summary.weights[0].second;
    CHECK(w.ci_low > 0.0);
    CHECK(w.ci_high < 1.0);

    const std::vector<std::string> out{"3"};
    const auto ex = exclusion_fit(ds, out, quick());
    CHECK(ex.samples.layout()->num_studies == 3);

    const std::vector<std::string> cut{"1", "3", "4"};
    CHECK_THROWS_AS(exclusion_fit(ds, cut, quick()), ValidationError);  // treatment 2 is left without studies

    const std::vector<ComparisonSummary> all{dw.summary, ex.summary};
    const auto csv = comparisons_to_csv(all);
    CHECK(csv.rfind("contrast,analysis,or_median,ci_low,ci_high\n", 0) == 0);
    // 3 contrasts + tau2 + 1 weight, then 3 contrasts + tau2.
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 + 4);
}

TEST_CASE("relative bias against known truths") {
    ComparisonSummary s;
    auto add = [&](TreatmentId h, TreatmentId k, double lor) {
        ContrastSummary c;
        c.h = h;
        c.k = k;
        c.log_or_median = lor;
        s.contrasts.push_back(c);
    };
    // Estimates theta_12 = 0.6, theta_13 = 1.2 against truths 0.5 and 1.0.
    add(1, 2, 0.6);
    add(1, 3, 1.2);
    add(2, 3, 0.6);
    const std::vector<double> truth{0.5, 1.0};
    const auto b = relative_bias(s, truth);
    REQUIRE(b.size() == 3);
    CHECK(b[0].value == doctest::Approx(0.2));
    CHECK(b[1].value == doctest::Approx(0.2));
    CHECK(b[2].value == doctest::Approx(0.2));
    CHECK_FALSE(b[0].absolute);

    const std::vector<double> flat{0.5, 0.5};
    const auto z = relative_bias(s, flat);
    CHECK(z[2].absolute);
    CHECK(z[2].value == doctest::Approx(0.6));
}
