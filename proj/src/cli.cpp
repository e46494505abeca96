#include "nmaout/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "nmaout/data.hpp"
#include "nmaout/detection.hpp"
#include "nmaout/downweight.hpp"
#include "nmaout/errors.hpp"
#include "nmaout/harness.hpp"
#include "nmaout/nma_sampler.hpp"
#include "nmaout/rng.hpp"
#include "nmaout/simgen.hpp"

namespace nmaout {

namespace {

struct Globals {
    std::uint64_t seed = 1;
    std::size_t chains = 2;
    std::size_t iterations = 0;  // 0: command default
    std::size_t burn_in = 0;
    std::size_t threads = 1;
    std::string format = "csv";
    std::string prior_scale = "tau2";
};

SamplerConfig sampler_from(const Globals& g, SamplerConfig base) {
    base.seed = g.seed;
    base.chains = g.chains;
    base.threads = g.threads;
    if (g.iterations) base.iterations = g.iterations;
    if (g.burn_in) base.burn_in = g.burn_in;
    else if (g.iterations) base.burn_in = g.iterations / 5;
    base.validate();
    return base;
}

PriorConfig priors_from(const Globals& g) {
    PriorConfig p;
    p.tau_prior_scale = g.prior_scale == "tau" ? TauScale::on_tau : TauScale::on_tau2;
    return p;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("cannot write " + path);
    f << text;
}

NetworkDataset load(const std::string& path) { return load_dataset(path, format_from_path(path)); }

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bayesian outlier detection and down-weighting for binomial network meta-analysis", "nmaout"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Master random seed");
    app.add_option("--chains", g.chains, "MCMC chains")->check(CLI::PositiveNumber);
    app.add_option("--iters", g.iterations, "MCMC iterations per chain, burn-in included")->check(CLI::PositiveNumber);
    app.add_option("--burnin", g.burn_in, "Burn-in iterations (default: a fifth of --iters)");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--prior-scale", g.prior_scale, "Put the uniform heterogeneity prior on tau2 or tau")
        ->check(CLI::IsMember({"tau2", "tau"}));

    std::string data, out_path;

    auto* fit = app.add_subcommand("fit", "Fit the standard random-effects model and summarise the posterior");
    std::string draws_path;
    fit->add_option("--data", data, "Arm-level CSV or JSON")->required();
    fit->add_option("--out", out_path, "Output file (default stdout)");
    fit->add_option("--draws", draws_path, "Also write the posterior draws as CSV");

    auto* det = app.add_subcommand("detect", "Per-study Bayes factors and posterior predictive p-values");
    std::string estimator = "sd", replication = "mixed", sdo_pool = "replicate";
    DetectionThresholds thr;
    double rhat_limit = 1.1;
    det->add_option("--data", data, "Arm-level CSV or JSON")->required();
    det->add_option("--out", out_path, "Output file (default stdout)");
    det->add_option("--estimator", estimator, "Bayes factor estimator: sd (Savage-Dickey) or ss (stepping-stone)")
        ->check(CLI::IsMember({"sd", "ss", "savage_dickey", "stepping_stone"}));
    det->add_option("--replication", replication, "Predictive replication scheme")
        ->check(CLI::IsMember({"mixed", "conditional"}));
    det->add_option("--sdo-pool", sdo_pool, "Median/MAD source for replicated SDO")
        ->check(CLI::IsMember({"replicate", "observed"}));
    det->add_option("--bf-threshold", thr.bf, "Flag when BF exceeds this");
    det->add_option("--p-threshold", thr.p, "Flag when a p-value is below this");
    det->add_option("--rhat-limit", rhat_limit, "Abort when the standard fit's max R-hat exceeds this");

    auto* dw = app.add_subcommand("downweight", "Compare full, down-weighted and exclusion fits");
    std::vector<std::string> plan_items;
    std::string default_prior = "moderate";
    bool no_exclusion = false;
    dw->add_option("--data", data, "Arm-level CSV or JSON")->required();
    dw->add_option("--out", out_path, "Output file (default stdout)");
    dw->add_option("--plan", plan_items, "Entries like 3=moderate, study3=severe, 3=2:5 or a bare id")->required();
    dw->add_option("--default-prior", default_prior, "Prior for bare ids: moderate, severe or a:b");
    dw->add_flag("--no-exclusion", no_exclusion, "Skip the exclusion fit");

    auto* sim = app.add_subcommand("simulate", "Write synthetic networks and their truth sidecars");
    int scenario_id = 0;
    std::string geometry;
    double tau2 = 0.0, severity = 3.0;
    int outliers = -1;
    std::size_t reps = 1;
    std::string out_dir = ".";
    std::string s_range = "small";
    sim->add_option("--scenario", scenario_id, "Grid scenario 1..32")->check(CLI::Range(1, 32));
    sim->add_option("--geometry", geometry, "Geometry name, overrides the scenario's");
    sim->add_option("--tau2", tau2, "Heterogeneity (with --geometry)");
    sim->add_option("--outliers", outliers, "Number of outliers: 0, 1 or 3");
    sim->add_option("--severity", severity, "Contamination multiplier: 2.5 or 3");
    sim->add_option("--s-range", s_range, "small = (0.25, 4), large = (4, 12.25)")
        ->check(CLI::IsMember({"small", "large"}));
    sim->add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber);
    sim->add_option("--out", out_dir, "Output directory");

    auto* bench = app.add_subcommand("bench", "Run the simulation experiment and write summary tables as CSV");
    std::vector<std::string> bench_scen;
    std::size_t bench_reps = 0;
    std::string bench_out = "bench_out";
    bool paper_scale = false, no_null = false, no_contaminated = false, no_bias = false, no_resume = false;
    bool quiet = false;
    bench->add_option("--scenario", bench_scen, "Scenario ids (repeatable, or 'all')")->required();
    bench->add_option("--reps", bench_reps, "Replications per scenario (default 50, 1000 with --paper-scale)");
    bench->add_option("--out", bench_out, "Output directory (checkpoints live under it)");
    bench->add_option("--severity", severity, "Contamination multiplier: 2.5 or 3");
    bench->add_option("--s-range", s_range, "small = (0.25, 4), large = (4, 12.25)")
        ->check(CLI::IsMember({"small", "large"}));
    bench->add_flag("--paper-scale", paper_scale, "1000 replications, 50000 iterations, 10000 burn-in");
    bench->add_flag("--no-null", no_null, "Skip the outlier-free runs");
    bench->add_flag("--no-contaminated", no_contaminated, "Only run the outlier-free variants");
    bench->add_flag("--no-bias", no_bias, "Skip the down-weighting bias analysis");
    bench->add_flag("--no-resume", no_resume, "Recompute every replication");
    bench->add_flag("--quiet", quiet, "No progress on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    const bool json = g.format == "json";
    const auto range = s_range == "large" ? std::pair<double, double>{4.0, 12.25} : std::pair<double, double>{0.25, 4.0};
    try {
        if (fit->parsed()) {
            const auto ds = load(data);
            const auto r = standard_fit(ds, sampler_from(g, {}), priors_from(g));
            const std::vector<ComparisonSummary> s{r.summary};
            emit(json ? comparisons_to_json(s) : comparisons_to_csv(s), out_path, out);
            if (!draws_path.empty()) {
                std::ofstream f(draws_path);
                if (!f) throw ValidationError("cannot write " + draws_path);
                write_draws_csv(r.samples, f);
            }
            const auto rh = max_rhat(r.samples);
            err << "max R-hat " << rh.max_rhat << " (" << rh.worst_param << ")\n";
        } else if (det->parsed()) {
            const auto ds = load(data);
            DetectionConfig dc;
            dc.sampler = sampler_from(g, {});
            dc.priors = priors_from(g);
            dc.thresholds = thr;
            dc.estimator = parse_estimator(estimator);
            dc.mode = parse_replication_mode(replication);
            dc.sdo_pool = sdo_pool == "observed" ? SdoPool::observed : SdoPool::replicate;
            dc.rhat_limit = rhat_limit;
            const auto report = detect(ds, dc);
            emit(json ? report.to_json() : report.to_csv(), out_path, out);
        } else if (dw->parsed()) {
            const auto ds = load(data);
            const auto plan = parse_plan(plan_items, parse_beta_prior(default_prior));
            plan.validate(ds);
            const auto sc = sampler_from(g, {});
            const auto pri = priors_from(g);
            std::vector<ComparisonSummary> s;
            s.push_back(standard_fit(ds, sc, pri).summary);
            s.push_back(downweighted_fit(ds, plan, sc, pri).summary);
            if (!no_exclusion) {
                std::vector<std::string> ids;
                for (const auto& [id, prior] : plan.entries) ids.push_back(id);
                s.push_back(exclusion_fit(ds, ids, sc, pri).summary);
            }
            emit(json ? comparisons_to_json(s) : comparisons_to_csv(s), out_path, out);
        } else if (sim->parsed()) {
            SimScenario sc;
            if (scenario_id) sc = grid_scenario(scenario_id);
            else if (geometry.empty()) throw ValidationError("simulate needs --scenario or --geometry");
            if (!geometry.empty()) {
                sc.geometry = parse_geometry(geometry);
                sc.tau2 = tau2;
                sc.id = 0;
            }
            if (outliers >= 0) sc.num_outliers = outliers;
            sc.severity = severity;
            sc.s_range = range;
            sc.validate();
            std::filesystem::create_directories(out_dir);
            const auto geo = load_geometry(sc.geometry);
            const std::string base = scenario_id ? "scenario" + std::to_string(scenario_id) : "network";
            for (std::size_t r = 0; r < reps; ++r) {
                sc.seed = derive_seed(g.seed, {tag(StreamTag::simulation), static_cast<std::uint64_t>(sc.id), r});
                const auto net = generate(sc, geo);
                const auto stem = std::filesystem::path(out_dir) / (base + "_rep" + std::to_string(r + 1));
                write_dataset(net.dataset, stem.string() + (json ? ".json" : ".csv"),
                              json ? DataFormat::json : DataFormat::csv);
                std::ofstream(stem.string() + ".truth.json") << truth_to_json(sc, net);
                out << stem.string() << '\n';
            }
        } else if (bench->parsed()) {
            ExperimentConfig cfg = paper_scale ? ExperimentConfig::paper_scale() : ExperimentConfig{};
            for (const auto& s : bench_scen) {
                if (s == "all") {
                    for (int i = 1; i <= 32; ++i) cfg.scenarios.push_back(i);
                    continue;
                }
                try {
                    cfg.scenarios.push_back(std::stoi(s));
                } catch (const std::exception&) {
                    throw ValidationError("bad scenario id '" + s + "'");
                }
            }
            if (bench_reps) cfg.replications = bench_reps;
            cfg.mcmc = sampler_from(g, cfg.mcmc);
            cfg.mcmc.threads = 1;
            cfg.seed = g.seed;
            cfg.threads = g.threads;
            cfg.output_dir = bench_out;
            cfg.null_runs = !no_null;
            cfg.contaminated_runs = !no_contaminated;
            cfg.bias = !no_bias;
            cfg.resume = !no_resume;
            cfg.severity = severity;
            cfg.s_range = range;
            cfg.priors = priors_from(g);
            ProgressFn progress;
            if (!quiet) {
                progress = [&err](std::size_t done, std::size_t total) {
                    err << "\rreplications " << done << "/" << total << std::flush;
                    if (done == total) err << '\n';
                };
            }
            const auto res = run_experiment(cfg, progress);
            out << table1_to_csv(res.table1) << '\n' << table2_to_csv(res.table2);
            if (!res.failures.empty()) {
                err << res.failures.size() << " replication(s) failed and were excluded:\n";
                for (const auto& f : res.failures) err << "  " << f;
            }
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const SamplerError& e) {
        err << "sampler error: " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace nmaout
