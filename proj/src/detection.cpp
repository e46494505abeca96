#include "nmaout/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "nmaout/errors.hpp"
#include "nmaout/nma_sampler.hpp"
#include "nmaout/parallel.hpp"
#include "nmaout/rng.hpp"
#include "nmaout/stats.hpp"

namespace nmaout {

std::string_view to_string(DiscrepancyKind k) noexcept {
    switch (k) {
        case DiscrepancyKind::likelihood: return "likelihood";
        case DiscrepancyKind::sdo: return "sdo";
        case DiscrepancyKind::gelman_chi2: return "gelman_chi2";
    }
    return "?";
}

std::string_view to_string(ReplicationMode m) noexcept { return m == ReplicationMode::mixed ? "mixed" : "conditional"; }

ReplicationMode parse_replication_mode(std::string_view s) {
    if (s == "mixed") return ReplicationMode::mixed;
    if (s == "conditional") return ReplicationMode::conditional;
    throw ValidationError("unknown replication mode '" + std::string(s) + "'");
}

namespace {

// Flat-arm view of a study plus the state-dependent part of its predictors.
struct StudyView {
    std::size_t first = 0;  // flat index of the first arm
    std::size_t arms = 0;
    std::size_t base = 0;   // arm index of the baseline
    std::vector<double> offset;  // mu + theta contrast, no delta
    std::vector<int> slot;
    std::vector<int> totals;
};

std::vector<std::size_t> arm_offsets(const NetworkDataset& ds) {
    std::vector<std::size_t> off(ds.num_studies() + 1, 0);
    for (std::size_t i = 0; i < ds.num_studies(); ++i) off[i + 1] = off[i] + ds.study(i).num_arms();
    return off;
}

StudyView study_view(const NetworkDataset& ds, std::size_t i, const ParameterState& st, std::size_t first) {
    const auto& s = ds.study(i);
    StudyView v;
    v.first = first;
    v.arms = s.num_arms();
    v.base = s.baseline_arm();
    for (std::size_t a = 0; a < s.num_arms(); ++a) {
        const auto& arm = s.arms()[a];
        v.slot.push_back(delta_slot(s, a));
        v.offset.push_back(st.mu.at(i) + (a == v.base ? 0.0 : contrast(st.theta, s.baseline(), arm.treatment)));
        v.totals.push_back(arm.total);
    }
    return v;
}

double binom_logpmf(int r, int n, double lin) {
    return stats::log_binomial_coefficient(n, r) + stats::binomial_kernel_logit(r, n, lin);
}

const stats::GaussHermiteRule& gh_rule(std::size_t order) {
    static const stats::GaussHermiteRule r9 = stats::gauss_hermite(9);
    static const stats::GaussHermiteRule r7 = stats::gauss_hermite(7);
    static const stats::GaussHermiteRule r5 = stats::gauss_hermite(5);
    static const stats::GaussHermiteRule r3 = stats::gauss_hermite(3);
    switch (order) {
        case 9: return r9;
        case 7: return r7;
        case 5: return r5;
        default: return r3;
    }
}

std::size_t gh_order(std::size_t d) {
    if (d <= 1) return 9;
    if (d == 2) return 7;
    if (d <= 4) return 5;
    return 3;
}

// log of  prod_a Bin(r_a | n_a, expit(offset_a + delta_slot(a)))  integrated
// against N(delta; 0, Psi(tau2)).
double marginal_log_lik(const StudyView& v, std::span<const int> events, double tau2) {
    const std::size_t d = v.arms - 1;
    double coef = 0.0;
    for (std::size_t a = 0; a < v.arms; ++a) coef += stats::log_binomial_coefficient(v.totals[a], events[v.first + a]);
    auto arm_ll = [&](std::span<const double> delta) {
        double s = coef;
        for (std::size_t a = 0; a < v.arms; ++a) {
            const double lin = v.offset[a] + (v.slot[a] < 0 ? 0.0 : delta[static_cast<std::size_t>(v.slot[a])]);
            s += stats::binomial_kernel_logit(events[v.first + a], v.totals[a], lin);
        }
        return s;
    };
    std::vector<double> delta(d, 0.0);
    if (!(tau2 > 1e-12)) return arm_ll(delta);

    auto g = [&](std::span<const double> x) { return arm_ll(x) + stats::compound_symmetry_logpdf(x, tau2); };
    const double c = 2.0 / tau2;
    const double dd = static_cast<double>(d);
    std::vector<double> grad(d), hess(d * d), L(d * d), step(d), trial(d);

    auto derivatives = [&](std::span<const double> x) {
        double sum = 0.0;
        for (double e : x) sum += e;
        for (std::size_t j = 0; j < d; ++j) grad[j] = -c * (x[j] - sum / (dd + 1.0));
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = 0; k < d; ++k) hess[j * d + k] = c * ((j == k ? 1.0 : 0.0) - 1.0 / (dd + 1.0));
        }
        for (std::size_t a = 0; a < v.arms; ++a) {
            if (v.slot[a] < 0) continue;
            const auto j = static_cast<std::size_t>(v.slot[a]);
            const double p = stats::inv_logit(v.offset[a] + x[j]);
            grad[j] += events[v.first + a] - v.totals[a] * p;
            hess[j * d + j] += v.totals[a] * p * (1.0 - p);  // negative Hessian
        }
    };

    double gx = g(delta);
    for (int iter = 0; iter < 100; ++iter) {
        derivatives(delta);
        if (!stats::cholesky(hess, d, L)) break;
        // Solve (L L') step = grad.
        step = grad;
        for (std::size_t i = 0; i < d; ++i) {
            double s = step[i];
            for (std::size_t k = 0; k < i; ++k) s -= L[i * d + k] * step[k];
            step[i] = s / L[i * d + i];
        }
        for (std::size_t ii = d; ii-- > 0;) {
            double s = step[ii];
            for (std::size_t k = ii + 1; k < d; ++k) s -= L[k * d + ii] * step[k];
            step[ii] = s / L[ii * d + ii];
        }
        double scale = 1.0;
        double g_new = gx;
        for (int halving = 0; halving < 30; ++halving) {
            for (std::size_t j = 0; j < d; ++j) trial[j] = delta[j] + scale * step[j];
            g_new = g(trial);
            if (g_new >= gx - 1e-12) break;
            scale *= 0.5;
        }
        double moved = 0.0;
        for (std::size_t j = 0; j < d; ++j) moved = std::max(moved, std::abs(trial[j] - delta[j]));
        delta = trial;
        gx = g_new;
        if (moved < 1e-10) break;
    }
    derivatives(delta);
    if (!stats::cholesky(hess, d, L)) throw SamplerError("quadrature Hessian is not positive definite");

    double log_det_l = 0.0;
    for (std::size_t i = 0; i < d; ++i) log_det_l += std::log(L[i * d + i]);
    const auto& rule = gh_rule(gh_order(d));
    const std::size_t q = rule.nodes.size();
    std::size_t total = 1;
    for (std::size_t j = 0; j < d; ++j) total *= q;

    std::vector<double> terms;
    terms.reserve(total);
    std::vector<std::size_t> idx(d, 0);
    std::vector<double> z(d), y(d);
    for (std::size_t t = 0; t < total; ++t) {
        double logw = 0.0, zz = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            z[j] = rule.nodes[idx[j]];
            logw += std::log(rule.weights[idx[j]]);
            zz += z[j] * z[j];
        }
        // delta = mode + sqrt(2) L^{-T} z
        for (std::size_t ii = d; ii-- > 0;) {
            double s = z[ii];
            for (std::size_t k = ii + 1; k < d; ++k) s -= L[k * d + ii] * y[k];
            y[ii] = s / L[ii * d + ii];
        }
        for (std::size_t j = 0; j < d; ++j) trial[j] = delta[j] + std::sqrt(2.0) * y[j];
        terms.push_back(logw + g(trial) + zz);
        for (std::size_t j = 0; j < d; ++j) {
            if (++idx[j] < q) break;
            idx[j] = 0;
        }
    }
    const double m = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double x : terms) s += std::exp(x - m);
    return m + std::log(s) + 0.5 * dd * std::log(2.0) - log_det_l;
}

// E[expit(offset + delta)] for delta ~ N(0, tau2).
double mean_probability(double offset, double tau2) {
    if (!(tau2 > 0.0)) return stats::inv_logit(offset);
    const auto& rule = gh_rule(9);
    const double sd = std::sqrt(2.0 * tau2);
    double s = 0.0;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) s += rule.weights[q] * stats::inv_logit(offset + sd * rule.nodes[q]);
    return s / std::sqrt(M_PI);
}

double gelman(std::span<const int> events, std::span<const int> totals, std::span<const double> probs) {
    double s = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
        const double p = probs[a];
        if (!(p > 0.0 && p < 1.0)) throw ValidationError("chi-square discrepancy needs probabilities inside (0,1)");
        const double e = totals[a] * p;
        const double r = events[a] - e;
        s += r * r / (e * (1.0 - p));
    }
    return s;
}

struct PoolStats {
    double med = 0.0;
    double mad = 0.0;
};

PoolStats pool_stats(std::span<const double> pool) {
    PoolStats p;
    p.med = stats::median(std::vector<double>(pool.begin(), pool.end()));
    p.mad = stats::median_absolute_deviation(pool, p.med);
    if (!(p.mad > 0.0)) throw ValidationError("degenerate proportion pool");
    return p;
}

double sdo_sum(std::span<const double> values, const PoolStats& p) {
    double s = 0.0;
    for (double x : values) s += std::abs(x - p.med) / p.mad;
    return s;
}

}  // namespace

std::vector<int> observed_events(const NetworkDataset& ds) {
    std::vector<int> ev;
    ev.reserve(ds.num_arms());
    for (const auto& s : ds.studies()) {
        for (const auto& a : s.arms()) ev.push_back(a.events);
    }
    return ev;
}

Discrepancy f_likelihood(const NetworkDataset& ds, std::span<const int> events, std::size_t study,
                         const ParameterState& state) {
    const auto off = arm_offsets(ds);
    const auto& s = ds.study(study);
    double ll = 0.0;
    for (std::size_t a = 0; a < s.num_arms(); ++a) {
        double lin = state.mu.at(study);
        const int slot = delta_slot(s, a);
        if (slot >= 0) {
            lin += contrast(state.theta, s.baseline(), s.arms()[a].treatment) +
                   state.delta.at(study).at(static_cast<std::size_t>(slot));
        }
        ll += binom_logpmf(events[off[study] + a], s.arms()[a].total, lin);
    }
    return {DiscrepancyKind::likelihood, ll};
}

Discrepancy f_likelihood(const NetworkDataset& ds, std::size_t study, const ParameterState& state) {
    return f_likelihood(ds, observed_events(ds), study, state);
}

Discrepancy f_likelihood_marginal(const NetworkDataset& ds, std::span<const int> events, std::size_t study,
                                  const ParameterState& state) {
    const auto off = arm_offsets(ds);
    const auto v = study_view(ds, study, state, off[study]);
    return {DiscrepancyKind::likelihood, marginal_log_lik(v, events, state.tau2)};
}

Discrepancy f_sdo(std::span<const double> pool, std::span<const double> values) {
    return {DiscrepancyKind::sdo, sdo_sum(values, pool_stats(pool))};
}

Discrepancy f_sdo(const ObservedProportions& x, std::string_view study) {
    std::vector<double> values;
    for (const auto& e : x.values) {
        if (e.study == study) values.push_back(e.x);
    }
    if (values.empty()) throw ValidationError("no proportions for study '" + std::string(study) + "'");
    return f_sdo(x.pool(), values);
}

Discrepancy f_gelman_chi2(std::span<const int> events, std::span<const int> totals, std::span<const double> probs) {
    if (events.size() != probs.size() || totals.size() != probs.size()) {
        throw ValidationError("chi-square inputs differ in length");
    }
    return {DiscrepancyKind::gelman_chi2, gelman(events, totals, probs)};
}

Discrepancy f_gelman_chi2(const NetworkDataset& ds, std::span<const int> events, std::size_t study,
                          const ParameterState& state) {
    const auto off = arm_offsets(ds);
    const auto& s = ds.study(study);
    std::vector<int> r, n;
    std::vector<double> p;
    for (std::size_t a = 0; a < s.num_arms(); ++a) {
        double lin = state.mu.at(study);
        const int slot = delta_slot(s, a);
        if (slot >= 0) {
            lin += contrast(state.theta, s.baseline(), s.arms()[a].treatment) +
                   state.delta.at(study).at(static_cast<std::size_t>(slot));
        }
        r.push_back(events[off[study] + a]);
        n.push_back(s.arms()[a].total);
        p.push_back(stats::inv_logit(lin));
    }
    return f_gelman_chi2(r, n, p);
}

std::vector<double> marginal_probabilities(const NetworkDataset& ds, std::size_t study, const ParameterState& state) {
    const auto v = study_view(ds, study, state, 0);
    std::vector<double> p(v.arms);
    for (std::size_t a = 0; a < v.arms; ++a) {
        p[a] = a == v.base ? stats::inv_logit(v.offset[a]) : mean_probability(v.offset[a], state.tau2);
    }
    return p;
}

ReplicateDataset replicate(const NetworkDataset& ds, const PosteriorSamples& samples, std::size_t g,
                           std::uint64_t seed, ReplicationMode mode) {
    if (g >= samples.total_draws()) throw ValidationError("draw index out of range");
    const auto [chain, s] = samples.locate(g);
    const auto st = samples.state(chain, s);
    Rng rng = make_stream(seed, {tag(StreamTag::replicate), g});
    std::normal_distribution<double> normal(0.0, 1.0);

    ReplicateDataset rep;
    rep.events.reserve(ds.num_arms());
    std::vector<double> dstar;
    for (std::size_t i = 0; i < ds.num_studies(); ++i) {
        const auto& study = ds.study(i);
        const std::size_t d = study.num_arms() - 1;
        if (mode == ReplicationMode::mixed) {
            // Psi = tau2/2 (I + 11'): delta = sqrt(tau2/2) (z + z0 1).
            const double scale = std::sqrt(0.5 * st.tau2);
            const double z0 = normal(rng);
            dstar.assign(d, 0.0);
            for (std::size_t j = 0; j < d; ++j) dstar[j] = scale * (normal(rng) + z0);
        } else {
            dstar = st.delta[i];
        }
        for (std::size_t a = 0; a < study.num_arms(); ++a) {
            const auto& arm = study.arms()[a];
            double lin = st.mu[i];
            const int slot = delta_slot(study, a);
            if (slot >= 0) {
                lin += contrast(st.theta, study.baseline(), arm.treatment) + dstar[static_cast<std::size_t>(slot)];
            }
            std::binomial_distribution<int> bin(arm.total, stats::inv_logit(lin));
            rep.events.push_back(bin(rng));
        }
    }
    return rep;
}

std::vector<StudyPPP> ppp_values(const NetworkDataset& ds, const PosteriorSamples& samples, const PPPConfig& cfg) {
    const std::size_t S = samples.total_draws();
    if (S < cfg.min_draws) {
        throw ValidationError("posterior predictive p-values need at least " + std::to_string(cfg.min_draws) +
                              " draws, got " + std::to_string(S));
    }
    const std::size_t N = ds.num_studies();
    const auto off = arm_offsets(ds);
    const auto obs_events = observed_events(ds);
    std::vector<double> obs_x(ds.num_arms());
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t a = 0; a < ds.study(i).num_arms(); ++a) {
            obs_x[off[i] + a] = static_cast<double>(ds.study(i).arms()[a].events) / ds.study(i).arms()[a].total;
        }
    }
    const auto obs_pool = pool_stats(obs_x);
    std::vector<double> obs_sdo(N);
    for (std::size_t i = 0; i < N; ++i) {
        obs_sdo[i] = sdo_sum(std::span<const double>(obs_x).subspan(off[i], off[i + 1] - off[i]), obs_pool);
    }

    // hits[g * N * 3 + i * 3 + kind]
    std::vector<unsigned char> hits(S * N * 3, 0);
    parallel_for(S, cfg.threads, [&](std::size_t g) {
        const auto [chain, s] = samples.locate(g);
        const auto st = samples.state(chain, s);
        const auto rep = replicate(ds, samples, g, cfg.seed, cfg.mode);
        std::vector<double> rep_x(ds.num_arms());
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t a = 0; a < ds.study(i).num_arms(); ++a) {
                rep_x[off[i] + a] = static_cast<double>(rep.events[off[i] + a]) / ds.study(i).arms()[a].total;
            }
        }
        const auto rep_pool = cfg.sdo_pool == SdoPool::replicate ? pool_stats(rep_x) : obs_pool;
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t k = off[i + 1] - off[i];
            unsigned char* h = &hits[(g * N + i) * 3];

            double fl_obs, fl_rep, fg_obs, fg_rep;
            if (cfg.mode == ReplicationMode::mixed) {
                const auto v = study_view(ds, i, st, off[i]);
                fl_obs = marginal_log_lik(v, obs_events, st.tau2);
                fl_rep = marginal_log_lik(v, rep.events, st.tau2);
                const auto p = marginal_probabilities(ds, i, st);
                fg_obs = gelman(std::span<const int>(obs_events).subspan(off[i], k), v.totals, p);
                fg_rep = gelman(std::span<const int>(rep.events).subspan(off[i], k), v.totals, p);
            } else {
                fl_obs = f_likelihood(ds, obs_events, i, st).value;
                fl_rep = f_likelihood(ds, rep.events, i, st).value;
                fg_obs = f_gelman_chi2(ds, obs_events, i, st).value;
                fg_rep = f_gelman_chi2(ds, rep.events, i, st).value;
            }
            h[0] = fl_rep <= fl_obs;
            h[1] = sdo_sum(std::span<const double>(rep_x).subspan(off[i], k), rep_pool) >= obs_sdo[i];
            h[2] = fg_rep >= fg_obs;
        }
    });

    std::vector<StudyPPP> out(N);
    for (std::size_t i = 0; i < N; ++i) {
        std::size_t c[3] = {0, 0, 0};
        for (std::size_t g = 0; g < S; ++g) {
            for (std::size_t k = 0; k < 3; ++k) c[k] += hits[(g * N + i) * 3 + k];
        }
        const auto& id = ds.study(i).id();
        const double Sd = static_cast<double>(S);
        out[i].p_L = {id, DiscrepancyKind::likelihood, static_cast<double>(c[0]) / Sd, S};
        out[i].p_SDO = {id, DiscrepancyKind::sdo, static_cast<double>(c[1]) / Sd, S};
        out[i].p_G = {id, DiscrepancyKind::gelman_chi2, static_cast<double>(c[2]) / Sd, S};
    }
    return out;
}

PPPValue ppp_value(const NetworkDataset& ds, const PosteriorSamples& samples, std::size_t study,
                   DiscrepancyKind kind, const PPPConfig& cfg) {
    if (study >= ds.num_studies()) throw ValidationError("study index out of range");
    const auto all = ppp_values(ds, samples, cfg);
    switch (kind) {
        case DiscrepancyKind::likelihood: return all[study].p_L;
        case DiscrepancyKind::sdo: return all[study].p_SDO;
        case DiscrepancyKind::gelman_chi2: return all[study].p_G;
    }
    return {};
}

bool is_flagged(const BayesFactor& bf, const StudyPPP& p, const DetectionThresholds& t) {
    return bf.log_value > std::log(t.bf) || p.p_L.value < t.p || p.p_SDO.value < t.p || p.p_G.value < t.p;
}

std::vector<std::size_t> DetectionReport::flagged_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].flagged) out.push_back(i);
    }
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string DetectionReport::to_csv() const {
    std::string out = "study,bf,bf_class,p_L,p_SDO,p_G,flagged\n";
    for (const auto& r : rows) {
        out += csv_field(r.study) + ',' + fmt(r.bf.value) + ',' + std::string(to_string(r.bf.evidence)) + ',' +
               fmt(r.p_L.value) + ',' + fmt(r.p_SDO.value) + ',' + fmt(r.p_G.value) + ',' +
               (r.flagged ? "true" : "false") + '\n';
    }
    return out;
}

std::string DetectionReport::to_json() const {
    nlohmann::ordered_json j;
    j["thresholds"] = {{"bf", thresholds.bf}, {"p", thresholds.p}};
    j["replication"] = std::string(to_string(mode));
    j["max_rhat"] = max_rhat;
    auto& studies = j["studies"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["study"] = r.study;
        row["bf"] = std::isfinite(r.bf.value) ? nlohmann::ordered_json(r.bf.value) : nlohmann::ordered_json("inf");
        row["log_bf"] = r.bf.log_value;
        row["bf_class"] = std::string(to_string(r.bf.evidence));
        row["bf_estimator"] = std::string(to_string(r.bf.estimator));
        row["bf_mc_error"] = r.bf.mc_error;
        row["bf_lower_bound"] = r.bf.lower_bound;
        row["eta_prior_sd"] = r.bf.eta_sd;
        row["p_L"] = r.p_L.value;
        row["p_SDO"] = r.p_SDO.value;
        row["p_G"] = r.p_G.value;
        row["num_draws"] = r.p_L.num_draws;
        row["flagged"] = r.flagged;
        studies.push_back(std::move(row));
    }
    return j.dump(2) + "\n";
}

DetectionReport detect_with_fit(const NetworkDataset& ds, const PosteriorSamples& fit, const DetectionConfig& cfg) {
    cfg.evidence.validate();
    DetectionReport report;
    report.thresholds = cfg.thresholds;
    report.mode = cfg.mode;
    if (fit.num_chains() >= 2) {
        const auto r = max_rhat(fit);
        report.max_rhat = r.max_rhat;
        if (!(r.max_rhat <= cfg.rhat_limit)) {
            throw SamplerError("convergence check failed: R-hat " + fmt(r.max_rhat) + " for " + r.worst_param +
                               " exceeds " + fmt(cfg.rhat_limit));
        }
    }

    PPPConfig pc;
    pc.seed = cfg.sampler.seed;
    pc.mode = cfg.mode;
    pc.sdo_pool = cfg.sdo_pool;
    pc.min_draws = cfg.min_draws;
    pc.threads = cfg.sampler.threads;
    const auto ppp = ppp_values(ds, fit, pc);

    EvidenceConfig ec;
    ec.sampler = cfg.sampler;
    ec.sampler.threads = 1;
    ec.priors = cfg.priors;
    ec.ladder = cfg.ladder;
    ec.thresholds = cfg.evidence;
    std::vector<BayesFactor> bfs(ds.num_studies());
    parallel_for(ds.num_studies(), cfg.sampler.threads,
                 [&](std::size_t i) { bfs[i] = bayes_factor(ds, i, ec, cfg.estimator); });

    for (std::size_t i = 0; i < ds.num_studies(); ++i) {
        DetectionRow row;
        row.study = ds.study(i).id();
        row.bf = bfs[i];
        row.p_L = ppp[i].p_L;
        row.p_SDO = ppp[i].p_SDO;
        row.p_G = ppp[i].p_G;
        row.flagged = is_flagged(row.bf, ppp[i], cfg.thresholds);
        report.rows.push_back(std::move(row));
    }
    return report;
}

DetectionReport detect(const NetworkDataset& ds, const DetectionConfig& cfg) {
    const auto fit = sample(ds, ModelSpec::standard(cfg.priors), cfg.sampler);
    return detect_with_fit(ds, fit, cfg);
}

}  // namespace nmaout
