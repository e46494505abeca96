#include "nmaout/harness.hpp"

#include <algorithm>
#include <cfloat>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nmaout/downweight.hpp"
#include "nmaout/errors.hpp"
#include "nmaout/nma_sampler.hpp"
#include "nmaout/parallel.hpp"
#include "nmaout/rng.hpp"

namespace nmaout {

namespace fs = std::filesystem;

SamplerConfig ExperimentConfig::desk_sampler() {
    SamplerConfig s;
    s.iterations = 10000;
    s.burn_in = 2000;
    s.chains = 2;
    return s;
}

ExperimentConfig ExperimentConfig::paper_scale() {
    ExperimentConfig c;
    c.replications = 1000;
    c.mcmc.iterations = 50000;
    c.mcmc.burn_in = 10000;
    return c;
}

void ExperimentConfig::validate() const {
    if (replications < 1) throw ValidationError("replications must be at least 1");
    if (scenarios.empty()) throw ValidationError("no scenarios requested");
    for (int id : scenarios) grid_scenario(id);
    if (!contaminated_runs && !null_runs) throw ValidationError("nothing to run: both run kinds are disabled");
    if (!(thresholds.bf > 0.0) || !(thresholds.p > 0.0 && thresholds.p < 1.0)) {
        throw ValidationError("invalid detection thresholds");
    }
    if (!(downweight_prior.a > 0.0 && downweight_prior.b > 0.0)) throw ValidationError("invalid down-weighting prior");
    mcmc.validate();
    priors.validate();
    SimScenario probe;
    probe.severity = severity;
    probe.s_range = s_range;
    probe.validate();
}

std::string ExperimentConfig::fingerprint() const {
    nlohmann::ordered_json j;
    j["scenarios"] = scenarios;
    j["replications"] = replications;
    j["mcmc"] = {{"iterations", mcmc.iterations}, {"burn_in", mcmc.burn_in},         {"chains", mcmc.chains},
                 {"thin", mcmc.thin},             {"adapt_window", mcmc.adapt_window}, {"target_accept", mcmc.target_accept}};
    j["thresholds"] = {{"bf", thresholds.bf}, {"p", thresholds.p}};
    j["seed"] = seed;
    j["contaminated_runs"] = contaminated_runs;
    j["null_runs"] = null_runs;
    j["bias"] = bias;
    j["severity"] = severity;
    j["s_range"] = {s_range.first, s_range.second};
    j["estimator"] = to_string(estimator);
    j["priors"] = {{"normal_sd", priors.normal_sd},
                   {"tau_upper", priors.tau_upper},
                   {"tau_prior_scale", priors.tau_prior_scale == TauScale::on_tau2 ? "tau2" : "tau"},
                   {"eta_sd", priors.shift_sd()}};
    j["downweight_prior"] = {downweight_prior.a, downweight_prior.b};
    j["mode"] = to_string(mode);
    j["sdo_pool"] = sdo_pool == SdoPool::replicate ? "replicate" : "observed";
    return j.dump(2) + "\n";
}

namespace {

constexpr double kTau2Grid[] = {0.0, 0.032, 0.096, 0.287};

std::size_t tau_index(double tau2) {
    const auto it = std::find(std::begin(kTau2Grid), std::end(kTau2Grid), tau2);
    return static_cast<std::size_t>(it - std::begin(kTau2Grid));
}

struct Job {
    bool null = false;
    SimScenario scenario;
    std::uint64_t key = 0;
    std::size_t rep = 0;
    std::string stem;
};

std::string num17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string num6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string rep_tag(std::size_t r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "r%04zu", r);
    return buf;
}

std::vector<Job> plan_jobs(const ExperimentConfig& cfg) {
    std::vector<Job> jobs;
    std::set<std::pair<Geometry, std::size_t>> nulls;
    std::vector<SimScenario> null_scenarios;
    for (int id : cfg.scenarios) {
        auto sc = grid_scenario(id);
        sc.severity = cfg.severity;
        sc.s_range = cfg.s_range;
        if (cfg.contaminated_runs) {
            for (std::size_t r = 0; r < cfg.replications; ++r) {
                Job j{false, sc, static_cast<std::uint64_t>(id), r, "s" + std::to_string(id) + "_" + rep_tag(r)};
                jobs.push_back(j);
            }
        }
        if (cfg.null_runs && nulls.insert({sc.geometry, tau_index(sc.tau2)}).second) {
            sc.num_outliers = 0;
            sc.id = 0;
            null_scenarios.push_back(sc);
        }
    }
    for (const auto& sc : null_scenarios) {
        const auto key = 1000 + 10 * static_cast<std::uint64_t>(sc.geometry) + tau_index(sc.tau2);
        for (std::size_t r = 0; r < cfg.replications; ++r) {
            jobs.push_back({true, sc, key, r,
                            "null_" + std::string(to_string(sc.geometry)) + "_tau" + num6(sc.tau2) + "_" + rep_tag(r)});
        }
    }
    return jobs;
}

fs::path checkpoint_dir(const ExperimentConfig& cfg) { return cfg.output_dir / "checkpoints"; }

void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw ValidationError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path detect_file(const ExperimentConfig& cfg, const Job& j) { return checkpoint_dir(cfg) / (j.stem + ".detect.csv"); }
fs::path bias_file(const ExperimentConfig& cfg, const Job& j) { return checkpoint_dir(cfg) / (j.stem + ".bias.csv"); }
fs::path failed_file(const ExperimentConfig& cfg, const Job& j) { return checkpoint_dir(cfg) / (j.stem + ".failed"); }

bool job_done(const ExperimentConfig& cfg, const Job& j) {
    return fs::exists(detect_file(cfg, j)) || fs::exists(failed_file(cfg, j));
}

bool wants_bias(const ExperimentConfig& cfg, const Job& j) { return cfg.bias && !j.null; }

void run_job(const ExperimentConfig& cfg, const Job& job) {
    auto sc = job.scenario;
    sc.seed = derive_seed(cfg.seed, {tag(StreamTag::simulation), job.key, job.rep, 0});
    const auto net = generate(sc);
    const auto& ds = net.dataset;

    DetectionConfig dc;
    dc.sampler = cfg.mcmc;
    dc.sampler.seed = derive_seed(cfg.seed, {tag(StreamTag::simulation), job.key, job.rep, 1});
    dc.sampler.threads = 1;
    dc.priors = cfg.priors;
    dc.thresholds = cfg.thresholds;
    dc.estimator = cfg.estimator;
    dc.mode = cfg.mode;
    dc.sdo_pool = cfg.sdo_pool;

    try {
        const auto fit = sample(ds, ModelSpec::standard(cfg.priors), dc.sampler);
        const auto report = detect_with_fit(ds, fit, dc);

        if (wants_bias(cfg, job)) {
            const auto plain = summarize(ds, fit, "full");
            ComparisonSummary dw = plain;
            const auto flagged = report.flagged_indices();
            if (!flagged.empty()) {
                DownweightPlan plan;
                for (auto i : flagged) plan.entries.emplace_back(ds.study(i).id(), cfg.downweight_prior);
                auto s = dc.sampler;
                s.seed = derive_seed(cfg.seed, {tag(StreamTag::simulation), job.key, job.rep, 2});
                dw = downweighted_fit(ds, plan, s, cfg.priors).summary;
            }
            std::set<std::pair<int, int>> touched;
            for (const auto& id : net.outlier_ids) {
                const auto& st = ds.study(ds.study_index(id));
                for (const auto& a : st.arms()) {
                    for (const auto& b : st.arms()) {
                        if (a.treatment < b.treatment) touched.insert({a.treatment, b.treatment});
                    }
                }
            }
            std::string out = "h,k,truth,plain,downweighted,touched\n";
            const int K = ds.num_treatments();
            for (int h = 1; h <= K; ++h) {
                for (int k = h + 1; k <= K; ++k) {
                    const double t = contrast(net.truth, h, k);
                    out += std::to_string(h) + ',' + std::to_string(k) + ',' + num17(t) + ',' +
                           num17(plain.contrast(h, k).log_or_median) + ',' + num17(dw.contrast(h, k).log_or_median) +
                           ',' + (touched.count({h, k}) ? "1" : "0") + '\n';
                }
            }
            write_atomic(bias_file(cfg, job), out);
        }

        std::string out = "study,outlier_slot,log_bf,lower_bound,p_L,p_SDO,p_G\n";
        for (const auto& row : report.rows) {
            int slot = 0;
            for (std::size_t o = 0; o < net.outlier_ids.size(); ++o) {
                if (net.outlier_ids[o] == row.study) slot = static_cast<int>(o) + 1;
            }
            out += row.study + ',' + std::to_string(slot) + ',' + num17(row.bf.log_value) + ',' +
                   (row.bf.lower_bound ? "1" : "0") + ',' + num17(row.p_L.value) + ',' + num17(row.p_SDO.value) + ',' +
                   num17(row.p_G.value) + '\n';
        }
        write_atomic(detect_file(cfg, job), out);
    } catch (const SamplerError& e) {
        write_atomic(failed_file(cfg, job), std::string("sampler: ") + e.what() + "\n");
    } catch (const ValidationError& e) {
        write_atomic(failed_file(cfg, job), std::string("validation: ") + e.what() + "\n");
    }
}

// Minimal reader for the checkpoint CSVs written above (no quoting needed).
std::vector<std::map<std::string, std::string>> read_rows(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::vector<std::string> header;
    std::vector<std::map<std::string, std::string>> rows;
    auto split = [](const std::string& s) {
        std::vector<std::string> f;
        std::size_t start = 0;
        for (;;) {
            const auto c = s.find(',', start);
            f.push_back(s.substr(start, c - start));
            if (c == std::string::npos) break;
            start = c + 1;
        }
        return f;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split(line);
        if (header.empty()) {
            header = std::move(f);
            continue;
        }
        if (f.size() != header.size()) throw ValidationError("malformed checkpoint " + path.string());
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < f.size(); ++i) row[header[i]] = f[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

double to_double(const std::string& s) {
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ValidationError("bad number '" + s + "' in checkpoint");
    return v;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return NAN;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Arithmetic mean of exp(log values) without overflowing the intermediate sum.
double mean_exp(const std::vector<double>& logs) {
    if (logs.empty()) return NAN;
    const double m = *std::max_element(logs.begin(), logs.end());
    if (!std::isfinite(m)) return m > 0 ? INFINITY : 0.0;
    double s = 0.0;
    for (double x : logs) s += std::exp(x - m);
    const double lm = m + std::log(s / static_cast<double>(logs.size()));
    return lm > std::log(DBL_MAX) ? INFINITY : std::exp(lm);
}

}  // namespace

ExperimentResult aggregate_checkpoints(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto jobs = plan_jobs(cfg);
    ExperimentResult res;

    struct SlotAcc {
        std::vector<double> log_bf, pL, pSDO, pG;
    };
    struct ScenarioAcc {
        SimScenario sc;
        std::size_t reps = 0, failed = 0;
        std::map<int, SlotAcc> slots;
        std::map<std::pair<int, int>, std::tuple<double, double, double, bool, std::size_t>> contrasts;
        std::size_t bias_reps = 0, improved = 0;
    };
    struct NullAcc {
        Geometry g;
        double tau2;
        std::size_t reps = 0, failed = 0, studies = 0;
        std::size_t bf = 0, pL = 0, pSDO = 0, pG = 0, any = 0;
    };
    std::vector<ScenarioAcc> scen;
    std::vector<NullAcc> nulls;
    auto scen_for = [&](const SimScenario& sc) -> ScenarioAcc& {
        for (auto& s : scen) {
            if (s.sc.id == sc.id) return s;
        }
        scen.push_back({sc, 0, 0, {}, {}, 0, 0});
        return scen.back();
    };
    auto null_for = [&](const SimScenario& sc) -> NullAcc& {
        for (auto& n : nulls) {
            if (n.g == sc.geometry && n.tau2 == sc.tau2) return n;
        }
        nulls.push_back({sc.geometry, sc.tau2});
        return nulls.back();
    };
    const double log_bf_cut = std::log(cfg.thresholds.bf);

    for (const auto& job : jobs) {
        const bool done = fs::exists(detect_file(cfg, job));
        const bool failed = fs::exists(failed_file(cfg, job));
        if (job.null) {
            auto& acc = null_for(job.scenario);
            if (failed) {
                ++acc.failed;
                res.failures.push_back(job.stem + ": " + read_text(failed_file(cfg, job)));
            }
            if (!done) continue;
            ++acc.reps;
            for (const auto& row : read_rows(detect_file(cfg, job))) {
                const bool f_bf = to_double(row.at("log_bf")) > log_bf_cut;
                const bool f_pL = to_double(row.at("p_L")) < cfg.thresholds.p;
                const bool f_pSDO = to_double(row.at("p_SDO")) < cfg.thresholds.p;
                const bool f_pG = to_double(row.at("p_G")) < cfg.thresholds.p;
                ++acc.studies;
                acc.bf += f_bf;
                acc.pL += f_pL;
                acc.pSDO += f_pSDO;
                acc.pG += f_pG;
                acc.any += (f_bf || f_pL || f_pSDO || f_pG);
            }
            continue;
        }
        auto& acc = scen_for(job.scenario);
        if (failed) {
            ++acc.failed;
            res.failures.push_back(job.stem + ": " + read_text(failed_file(cfg, job)));
        }
        if (!done) continue;
        ++acc.reps;
        for (const auto& row : read_rows(detect_file(cfg, job))) {
            const int slot = std::stoi(row.at("outlier_slot"));
            if (slot == 0) continue;
            auto& s = acc.slots[slot];
            s.log_bf.push_back(to_double(row.at("log_bf")));
            s.pL.push_back(to_double(row.at("p_L")));
            s.pSDO.push_back(to_double(row.at("p_SDO")));
            s.pG.push_back(to_double(row.at("p_G")));
        }
        if (wants_bias(cfg, job) && fs::exists(bias_file(cfg, job))) {
            double plain_abs = 0.0, dw_abs = 0.0;
            int touched = 0;
            for (const auto& row : read_rows(bias_file(cfg, job))) {
                const std::pair<int, int> hk{std::stoi(row.at("h")), std::stoi(row.at("k"))};
                const double t = to_double(row.at("truth"));
                const double p = to_double(row.at("plain"));
                const double d = to_double(row.at("downweighted"));
                const bool is_touched = row.at("touched") == "1";
                auto& [tt, sp, sd, tch, n] = acc.contrasts[hk];
                tt = t;
                sp += p;
                sd += d;
                tch = tch || is_touched;
                ++n;
                if (is_touched && t != 0.0) {
                    plain_abs += std::abs((p - t) / t);
                    dw_abs += std::abs((d - t) / t);
                    ++touched;
                }
            }
            ++acc.bias_reps;
            if (touched > 0 && dw_abs < plain_abs) ++acc.improved;
        }
    }

    for (const auto& s : scen) {
        for (int slot = 1; slot <= s.sc.num_outliers; ++slot) {
            Table1Row r;
            r.scenario = s.sc.id;
            r.geometry = s.sc.geometry;
            r.tau2 = s.sc.tau2;
            r.num_outliers = s.sc.num_outliers;
            r.outlier_slot = slot;
            r.reps = s.reps;
            r.failed = s.failed;
            if (auto it = s.slots.find(slot); it != s.slots.end()) {
                r.mean_bf = mean_exp(it->second.log_bf);
                r.mean_log_bf = mean_of(it->second.log_bf);
                r.mean_p_L = mean_of(it->second.pL);
                r.mean_p_SDO = mean_of(it->second.pSDO);
                r.mean_p_G = mean_of(it->second.pG);
            } else {
                r.mean_bf = r.mean_log_bf = r.mean_p_L = r.mean_p_SDO = r.mean_p_G = NAN;
            }
            res.table1.push_back(r);
        }
        if (cfg.bias && s.bias_reps > 0) {
            for (const auto& [hk, v] : s.contrasts) {
                const auto& [t, sp, sd, tch, n] = v;
                BiasRow b;
                b.scenario = s.sc.id;
                b.h = hk.first;
                b.k = hk.second;
                b.outlier_touched = tch;
                b.reps = n;
                b.bias_plain = (sp / static_cast<double>(n) - t) / t;
                b.bias_downweighted = (sd / static_cast<double>(n) - t) / t;
                res.bias.push_back(b);
            }
            res.bias_improvement.push_back({s.sc.id, s.bias_reps, s.improved});
        }
    }
    for (const auto& n : nulls) {
        Table2Row r;
        r.geometry = n.g;
        r.tau2 = n.tau2;
        r.reps = n.reps;
        r.failed = n.failed;
        r.studies = n.studies;
        const double d = n.studies ? static_cast<double>(n.studies) : NAN;
        r.fp_bf = n.bf / d;
        r.fp_pL = n.pL / d;
        r.fp_pSDO = n.pSDO / d;
        r.fp_pG = n.pG / d;
        r.fp_any = n.any / d;
        res.table2.push_back(r);
    }
    return res;
}

std::string table1_to_csv(const std::vector<Table1Row>& rows) {
    std::string out =
        "scenario,tau2,outlier_slot,mean_bf,mean_p_L,mean_p_SDO,mean_p_G,geometry,num_outliers,mean_log_bf,reps,failed\n";
    for (const auto& r : rows) {
        out += std::to_string(r.scenario) + ',' + num6(r.tau2) + ',' + std::to_string(r.outlier_slot) + ',' +
               num6(r.mean_bf) + ',' + num6(r.mean_p_L) + ',' + num6(r.mean_p_SDO) + ',' + num6(r.mean_p_G) + ',' +
               std::string(to_string(r.geometry)) + ',' + std::to_string(r.num_outliers) + ',' + num6(r.mean_log_bf) +
               ',' + std::to_string(r.reps) + ',' + std::to_string(r.failed) + '\n';
    }
    return out;
}

std::string table2_to_csv(const std::vector<Table2Row>& rows) {
    std::string out = "design,tau2,fp_bf,fp_pL,fp_pSDO,fp_pG,fp_any,studies,reps,failed\n";
    for (const auto& r : rows) {
        out += std::string(to_string(r.geometry)) + ',' + num6(r.tau2) + ',' + num6(r.fp_bf) + ',' + num6(r.fp_pL) +
               ',' + num6(r.fp_pSDO) + ',' + num6(r.fp_pG) + ',' + num6(r.fp_any) + ',' + std::to_string(r.studies) +
               ',' + std::to_string(r.reps) + ',' + std::to_string(r.failed) + '\n';
    }
    return out;
}

std::string bias_to_csv(const std::vector<BiasRow>& rows) {
    std::string out = "scenario,contrast,bias_plain,bias_downweighted,outlier_touched,reps\n";
    for (const auto& r : rows) {
        out += std::to_string(r.scenario) + ',' + std::to_string(r.k) + " vs " + std::to_string(r.h) + ',' +
               num6(r.bias_plain) + ',' + num6(r.bias_downweighted) + ',' + (r.outlier_touched ? "1" : "0") + ',' +
               std::to_string(r.reps) + '\n';
    }
    return out;
}

std::string bias_improvement_to_csv(const std::vector<BiasImprovement>& rows) {
    std::string out = "scenario,reps,improved,fraction\n";
    for (const auto& r : rows) {
        out += std::to_string(r.scenario) + ',' + std::to_string(r.reps) + ',' + std::to_string(r.improved) + ',' +
               num6(r.fraction()) + '\n';
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    fs::create_directories(checkpoint_dir(cfg));
    const auto fp_path = cfg.output_dir / "config.json";
    const auto fingerprint = cfg.fingerprint();
    if (cfg.resume && fs::exists(fp_path) && read_text(fp_path) != fingerprint) {
        throw ValidationError("checkpoints in " + cfg.output_dir.string() +
                              " were produced with a different configuration; use a new output directory or disable "
                              "resume");
    }
    write_atomic(fp_path, fingerprint);

    const auto jobs = plan_jobs(cfg);
    std::vector<const Job*> todo;
    for (const auto& j : jobs) {
        if (!cfg.resume) {
            fs::remove(detect_file(cfg, j));
            fs::remove(bias_file(cfg, j));
            fs::remove(failed_file(cfg, j));
        }
        if (!job_done(cfg, j)) todo.push_back(&j);
    }
    std::mutex m;
    std::size_t finished = jobs.size() - todo.size();
    if (progress) progress(finished, jobs.size());
    parallel_for(todo.size(), cfg.threads, [&](std::size_t i) {
        run_job(cfg, *todo[i]);
        if (progress) {
            std::lock_guard lock(m);
            progress(++finished, jobs.size());
        }
    });

    auto res = aggregate_checkpoints(cfg);
    write_atomic(cfg.output_dir / "table1.csv", table1_to_csv(res.table1));
    write_atomic(cfg.output_dir / "table2.csv", table2_to_csv(res.table2));
    write_atomic(cfg.output_dir / "bias.csv", bias_to_csv(res.bias));
    write_atomic(cfg.output_dir / "bias_summary.csv", bias_improvement_to_csv(res.bias_improvement));
    return res;
}

}  // namespace nmaout
