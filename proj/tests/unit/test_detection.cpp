#include <doctest.h>

#include <cmath>
#include <random>

#include "nmaout/detection.hpp"
#include "nmaout/errors.hpp"
#include "nmaout/nma_sampler.hpp"
#include "nmaout/simgen.hpp"
#include "oracles.hpp"

using namespace nmaout;

namespace {

SamplerConfig quick(std::size_t iters = 3000, std::uint64_t seed = 1) {
    SamplerConfig cfg;
    cfg.iterations = iters;
    cfg.burn_in = iters / 5;
    cfg.chains = 2;
    cfg.seed = seed;
    return cfg;
}

// Fifteen two-arm trials of treatment 2 against 1 near OR 1, one far off.
NetworkDataset one_outlier() {
    std::vector<Study> s;
    std::mt19937_64 rng(5);
    std::binomial_distribution<int> arm(200, 0.4);
    for (int i = 0; i < 15; ++i) s.emplace_back(std::to_string(i + 1), std::vector<Arm>{{1, arm(rng), 200}, {2, arm(rng), 200}});
    s.emplace_back("16", std::vector<Arm>{{1, 80, 200}, {2, 196, 200}});
    return NetworkDataset(std::move(s), 2);
}

}  // namespace

TEST_CASE("f_SDO on a hand-computed pool") {
    const std::vector<double> pool{0.1, 0.2, 0.3, 0.4, 0.5};
    const std::vector<double> arm{0.5};
    CHECK(f_sdo(pool, arm).value == doctest::Approx(2.0));
    CHECK(f_sdo(pool, arm).kind == DiscrepancyKind::sdo);
    const std::vector<double> flat{0.2, 0.2, 0.2};
    CHECK_THROWS_WITH_AS(f_sdo(flat, arm), "degenerate proportion pool", ValidationError);
}

TEST_CASE("f_SDO is invariant under increasing affine maps of the pool") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> pool(5 + rep % 40);
        for (auto& v : pool) v = u(rng);
        const std::vector<double> arms{pool[0], pool[1]};
        const double a = 0.01 + 5 * u(rng), b = 2 * u(rng) - 1;
        auto map = [&](std::vector<double> v) {
            for (auto& x : v) x = a * x + b;
            return v;
        };
        CHECK(f_sdo(map(pool), map(arms)).value == doctest::Approx(f_sdo(pool, arms).value).epsilon(1e-9));
    }
}

TEST_CASE("Gelman chi-square") {
    const std::vector<int> r{60}, n{100};
    const std::vector<double> p{0.5};
    CHECK(f_gelman_chi2(r, n, p).value == doctest::Approx(4.0));
    const std::vector<int> r2{40};
    CHECK(f_gelman_chi2(r2, n, p).value == doctest::Approx(4.0));
    const std::vector<int> r3{50};
    CHECK(f_gelman_chi2(r3, n, p).value == 0.0);
    const std::vector<double> edge{1.0};
    CHECK_THROWS_AS(f_gelman_chi2(r, n, edge), ValidationError);
}

TEST_CASE("f_L is a log-likelihood: far-off counts score lower") {
    const NetworkDataset ds({Study("a", {{1, 50, 100}, {2, 50, 100}}), Study("b", {{1, 30, 100}, {2, 40, 100}})}, 2);
    auto st = ParameterState::zeros(ds, ModelSpec::standard());
    const std::vector<int> central{50, 50, 30, 40}, far{50, 95, 30, 40};
    const auto fc = f_likelihood(ds, central, 0, st).value;
    const auto ff = f_likelihood(ds, far, 0, st).value;
    CHECK(fc <= 0.0);
    CHECK(ff < fc);
    CHECK(fc == doctest::Approx(2 * oracle::binom_logpmf(50, 100, 0.5)));
    CHECK(f_likelihood(ds, 0, st).value == doctest::Approx(fc));

    // With tau2 -> 0 the marginal version collapses onto the conditional one.
    st.tau2 = 1e-12;
    CHECK(f_likelihood_marginal(ds, central, 0, st).value == doctest::Approx(fc).epsilon(1e-6));
}

TEST_CASE("marginal likelihood quadrature against Simpson") {
    const NetworkDataset ds({Study("a", {{1, 20, 80}, {2, 45, 90}}), Study("b", {{1, 30, 100}, {2, 40, 100}})}, 2);
    auto st = ParameterState::zeros(ds, ModelSpec::standard());
    st.mu = {-1.2, -0.8};
    st.theta = {0.4};
    st.tau2 = 0.6;
    const std::vector<int> ev{20, 45, 30, 40};
    const double sd = std::sqrt(st.tau2);
    const double expect = std::log(oracle::simpson(
        [&](double d) {
            return std::exp(oracle::binom_logpmf(20, 80, oracle::expit(-1.2)) +
                            oracle::binom_logpmf(45, 90, oracle::expit(-1.2 + 0.4 + d))) *
                   std::exp(-0.5 * d * d / st.tau2) / (sd * std::sqrt(2 * M_PI));
        },
        -12 * sd, 12 * sd));
    CHECK(f_likelihood_marginal(ds, ev, 0, st).value == doctest::Approx(expect).epsilon(1e-8));
}

TEST_CASE("outlying study gets the smallest p-values and is flagged") {
    const auto ds = one_outlier();
    const auto fit = sample(ds, ModelSpec::standard(), quick(6000));
    PPPConfig pc;
    const auto ppp = ppp_values(ds, fit, pc);
    REQUIRE(ppp.size() == 16);
    for (std::size_t i = 0; i < 15; ++i) {
        CHECK(ppp[15].p_L.value < ppp[i].p_L.value);
        CHECK(ppp[15].p_SDO.value <= ppp[i].p_SDO.value);
    }
    CHECK(ppp[15].p_L.value < 0.05);
    CHECK(ppp[15].p_SDO.value < 0.05);

    // Granularity: every value is a multiple of 1/S.
    const double S = static_cast<double>(fit.total_draws());
    for (const auto& p : ppp) {
        for (double v : {p.p_L.value, p.p_SDO.value, p.p_G.value}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            CHECK(std::abs(v * S - std::round(v * S)) < 1e-9);
        }
    }
    CHECK(ppp_value(ds, fit, 15, DiscrepancyKind::likelihood, pc).value == ppp[15].p_L.value);
}

TEST_CASE("p_SDO is the plain replicate fraction for a data-only discrepancy") {
    const auto ds = one_outlier();
    const auto fit = sample(ds, ModelSpec::standard(), quick(1400));
    PPPConfig pc;
    pc.seed = 9;
    for (auto pool : {SdoPool::replicate, SdoPool::observed}) {
        pc.sdo_pool = pool;
        const auto ppp = ppp_values(ds, fit, pc);
        const auto obs = observed_proportions(ds);
        const auto obs_pool = obs.pool();
        std::vector<std::size_t> count(ds.num_studies(), 0);
        for (std::size_t g = 0; g < fit.total_draws(); ++g) {
            const auto rep = replicate(ds, fit, g, pc.seed);
            std::vector<double> x;
            std::size_t f = 0;
            for (const auto& s : ds.studies()) {
                for (const auto& a : s.arms()) x.push_back(static_cast<double>(rep.events[f++]) / a.total);
            }
            const auto& p = pool == SdoPool::replicate ? x : obs_pool;
            for (std::size_t i = 0; i < ds.num_studies(); ++i) {
                const std::vector<double> rv{x[2 * i], x[2 * i + 1]};
                count[i] += f_sdo(p, rv).value >= f_sdo(obs, ds.study(i).id()).value;
            }
        }
        for (std::size_t i = 0; i < ds.num_studies(); ++i) {
            CHECK(ppp[i].p_SDO.value == static_cast<double>(count[i]) / fit.total_draws());
        }
    }
}

TEST_CASE("replicates are deterministic per draw and respect arm totals") {
    const auto ds = one_outlier();
    const auto fit = sample(ds, ModelSpec::standard(), quick(600));
    const auto a = replicate(ds, fit, 17, 3);
    CHECK(a.events == replicate(ds, fit, 17, 3).events);
    CHECK(a.events != replicate(ds, fit, 18, 3).events);
    std::size_t f = 0;
    for (const auto& s : ds.studies()) {
        for (const auto& arm : s.arms()) {
            CHECK(a.events[f] >= 0);
            CHECK(a.events[f] <= arm.total);
            ++f;
        }
    }
    PPPConfig pc;
    CHECK_THROWS_AS(ppp_values(ds, fit, pc), ValidationError);  // fewer than 1000 draws
}

TEST_CASE("too few draws or a failed R-hat check stop detection") {
    const auto ds = one_outlier();
    DetectionConfig cfg;
    cfg.sampler = quick(2000);
    cfg.rhat_limit = 1.0000001;
    CHECK_THROWS_AS(detect(ds, cfg), SamplerError);
}

TEST_CASE("smoking-cessation screen flags study 3") {
    const auto ds = load_dataset(data_directory() / "smoking_cessation.csv", DataFormat::csv);
    DetectionConfig cfg;
    cfg.sampler = quick(6000, 42);
    const auto report = detect(ds, cfg);
    REQUIRE(report.rows.size() == ds.num_studies());
    const auto i3 = ds.study_index("3");
    CHECK(report.rows[i3].flagged);
    CHECK(report.rows[i3].p_SDO.value < 0.05);

    const auto csv = report.to_csv();
    CHECK(csv.rfind("study,bf,bf_class,p_L,p_SDO,p_G,flagged", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 25);
    const auto json = report.to_json();
    CHECK(json.find("\"study\": \"3\"") != std::string::npos);
}
