#include "nmaout/evidence.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

#include "nmaout/errors.hpp"
#include "nmaout/nma_sampler.hpp"
#include "nmaout/rng.hpp"
#include "nmaout/stats.hpp"

namespace nmaout {

void EvidenceThresholds::validate() const {
    if (!(weak > 0.0 && weak <= moderate && moderate <= strong && strong <= decisive)) {
        throw ValidationError("evidence thresholds must be positive and non-decreasing");
    }
}

EvidenceClass classify(double bf, const EvidenceThresholds& t) {
    if (std::isnan(bf)) throw ValidationError("cannot classify a NaN Bayes factor");
    if (bf <= t.weak) return EvidenceClass::favors_null;
    if (bf <= t.moderate) return EvidenceClass::weak;
    if (bf <= t.strong) return EvidenceClass::moderate;
    if (bf <= t.decisive) return EvidenceClass::strong;
    return EvidenceClass::decisive;
}

EvidenceClass classify_log(double log_bf, const EvidenceThresholds& t) {
    if (std::isnan(log_bf)) throw ValidationError("cannot classify a NaN Bayes factor");
    if (log_bf <= std::log(t.weak)) return EvidenceClass::favors_null;
    if (log_bf <= std::log(t.moderate)) return EvidenceClass::weak;
    if (log_bf <= std::log(t.strong)) return EvidenceClass::moderate;
    if (log_bf <= std::log(t.decisive)) return EvidenceClass::strong;
    return EvidenceClass::decisive;
}

std::string_view to_string(EvidenceClass c) noexcept {
    switch (c) {
        case EvidenceClass::favors_null: return "favors_null";
        case EvidenceClass::weak: return "weak";
        case EvidenceClass::moderate: return "moderate";
        case EvidenceClass::strong: return "strong";
        case EvidenceClass::decisive: return "decisive";
    }
    return "?";
}

std::string_view to_string(BfEstimator e) noexcept {
    return e == BfEstimator::stepping_stone ? "stepping_stone" : "savage_dickey";
}

BfEstimator parse_estimator(std::string_view s) {
    if (s == "stepping_stone" || s == "ss") return BfEstimator::stepping_stone;
    if (s == "savage_dickey" || s == "sd") return BfEstimator::savage_dickey;
    throw ValidationError("unknown Bayes factor estimator '" + std::string(s) + "'");
}

std::vector<double> default_ladder(std::size_t rungs, double power) {
    if (rungs < 2) throw ValidationError("a ladder needs at least two rungs");
    std::vector<double> t(rungs);
    for (std::size_t j = 0; j < rungs; ++j) {
        t[j] = std::pow(static_cast<double>(j) / static_cast<double>(rungs - 1), power);
    }
    t.back() = 1.0;
    return t;
}

namespace {

void check_ladder(std::span<const double> ladder) {
    if (ladder.size() < 2 || ladder.front() != 0.0 || ladder.back() != 1.0) {
        throw ValidationError("ladder must start at 0 and end at 1");
    }
    for (std::size_t j = 1; j < ladder.size(); ++j) {
        if (!(ladder[j] > ladder[j - 1])) throw ValidationError("ladder must be strictly increasing");
    }
}

double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

LogMarginal stepping_stone(const TemperedFactory& factory, const SamplerConfig& cfg, std::span<const double> ladder) {
    check_ladder(ladder);
    LogMarginal out;
    double var_total = 0.0;
    for (std::size_t j = 0; j + 1 < ladder.size(); ++j) {
        SamplerConfig rung = cfg;
        rung.temperature = ladder[j];
        rung.seed = derive_seed(cfg.seed, {tag(StreamTag::ladder), j});
        const double t = ladder[j];
        const auto samples = run_chains([&](std::size_t chain) { return factory(t, chain); }, rung);
        const double dt = ladder[j + 1] - ladder[j];

        std::vector<double> scaled;
        scaled.reserve(samples.total_draws());
        for (std::size_t c = 0; c < samples.num_chains(); ++c) {
            for (double ll : samples.log_likelihoods(c)) scaled.push_back(dt * ll);
        }
        const double n = static_cast<double>(scaled.size());
        const double lse = log_sum_exp(scaled);
        if (!std::isfinite(lse)) throw SamplerError("non-finite stepping-stone ratio at rung " + std::to_string(j));
        const double log_r = lse - std::log(n);
        out.rung_log_ratios.push_back(log_r);
        out.value += log_r;

        // Relative variance of the mean of w = exp(dt*ll - log_r).
        std::vector<std::vector<double>> w(samples.num_chains());
        std::size_t g = 0;
        for (std::size_t c = 0; c < samples.num_chains(); ++c) {
            for (std::size_t s = 0; s < samples.draws_per_chain(); ++s) w[c].push_back(std::exp(scaled[g++] - log_r));
        }
        std::vector<double> flat;
        for (const auto& c : w) flat.insert(flat.end(), c.begin(), c.end());
        const double var_w = stats::variance(flat);
        if (var_w > 0.0) {
            double ess = n;
            try {
                ess = effective_sample_size(std::span<const std::vector<double>>(w));
            } catch (const ValidationError&) {
            }
            var_total += var_w / ess;
        }
    }
    if (!std::isfinite(out.value)) throw SamplerError("non-finite stepping-stone estimate");
    out.mc_error = std::sqrt(var_total);
    return out;
}

LogMarginal log_marginal_stepping_stone(const NetworkDataset& ds, const ModelSpec& spec, const SamplerConfig& cfg,
                                        std::span<const double> ladder) {
    spec.validate(ds);
    return stepping_stone([&](double t, std::size_t) { return make_nma_move_model(ds, spec, t); }, cfg, ladder);
}

namespace {

struct Moments {
    std::vector<double> mean;
    std::vector<double> cov;  // d x d
};

Moments moments(std::span<const std::vector<double>> cols, std::size_t lo, std::size_t hi) {
    const std::size_t d = cols.size();
    const double n = static_cast<double>(hi - lo);
    Moments m{std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t s = lo; s < hi; ++s) m.mean[a] += cols[a][s];
        m.mean[a] /= n;
    }
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
            double acc = 0.0;
            for (std::size_t s = lo; s < hi; ++s) acc += (cols[a][s] - m.mean[a]) * (cols[b][s] - m.mean[b]);
            m.cov[a * d + b] = m.cov[b * d + a] = acc / (n - 1.0);
        }
    }
    return m;
}

// Solves L y = v in place for lower-triangular L.
void forward_solve(std::span<const double> L, std::size_t d, std::span<double> v) {
    for (std::size_t i = 0; i < d; ++i) {
        double s = v[i];
        for (std::size_t k = 0; k < i; ++k) s -= L[i * d + k] * v[k];
        v[i] = s / L[i * d + i];
    }
}

double log_det_from_chol(std::span<const double> L, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += 2.0 * std::log(L[i * d + i]);
    return s;
}

std::vector<double> chol_or_throw(const std::vector<double>& cov, std::size_t d) {
    std::vector<double> L(d * d);
    if (!stats::cholesky(cov, d, L)) throw SamplerError("degenerate posterior draws for density estimation");
    return L;
}

double gaussian_log_density(std::span<const std::vector<double>> cols, std::size_t lo, std::size_t hi,
                            std::span<const double> point) {
    const std::size_t d = cols.size();
    const auto m = moments(cols, lo, hi);
    const auto L = chol_or_throw(m.cov, d);
    std::vector<double> z(d);
    for (std::size_t a = 0; a < d; ++a) z[a] = point[a] - m.mean[a];
    forward_solve(L, d, z);
    double q = 0.0;
    for (double v : z) q += v * v;
    return -0.5 * (static_cast<double>(d) * stats::kLog2Pi + log_det_from_chol(L, d) + q);
}

// Bandwidth and scale always come from the full sample, so batch estimates
// carry the same smoothing as the reported one.
double kde_log_density(std::span<const std::vector<double>> cols, std::size_t lo, std::size_t hi,
                       std::span<const double> point) {
    const std::size_t d = cols.size();
    const double n = static_cast<double>(hi - lo);
    const auto m = moments(cols, 0, cols[0].size());
    const auto L = chol_or_throw(m.cov, d);
    const double dd = static_cast<double>(d);
    const double h = std::pow(4.0 / (dd + 2.0), 1.0 / (dd + 4.0)) *
                     std::pow(static_cast<double>(cols[0].size()), -1.0 / (dd + 4.0));
    std::vector<double> terms;
    terms.reserve(hi - lo);
    std::vector<double> z(d);
    for (std::size_t s = lo; s < hi; ++s) {
        for (std::size_t a = 0; a < d; ++a) z[a] = cols[a][s] - point[a];
        forward_solve(L, d, z);
        double q = 0.0;
        for (double v : z) q += v * v;
        terms.push_back(-0.5 * q / (h * h));
    }
    return log_sum_exp(terms) - std::log(n) - dd * std::log(h) - 0.5 * log_det_from_chol(L, d) -
           0.5 * dd * stats::kLog2Pi;
}

bool needs_kde(std::span<const std::vector<double>> cols, std::span<const double> point) {
    const std::size_t d = cols.size();
    const std::size_t n = cols[0].size();
    bool non_normal = false;
    for (const auto& c : cols) {
        const double mu = stats::mean(c);
        double m2 = 0.0, m3 = 0.0, m4 = 0.0;
        for (double x : c) {
            const double e = x - mu;
            m2 += e * e;
            m3 += e * e * e;
            m4 += e * e * e * e;
        }
        m2 /= static_cast<double>(n);
        m3 /= static_cast<double>(n);
        m4 /= static_cast<double>(n);
        if (!(m2 > 0.0)) return false;
        const double skew = m3 / std::pow(m2, 1.5);
        const double exkurt = m4 / (m2 * m2) - 3.0;
        if (std::abs(skew) > 0.15 || std::abs(exkurt) > 0.5) non_normal = true;
    }
    if (!non_normal) return false;
    // Far in the tail a kernel estimate has no draws to work with.
    const auto m = moments(cols, 0, n);
    const auto L = chol_or_throw(m.cov, d);
    std::vector<double> z(d);
    for (std::size_t a = 0; a < d; ++a) z[a] = point[a] - m.mean[a];
    forward_solve(L, d, z);
    double q = 0.0;
    for (double v : z) q += v * v;
    return std::sqrt(q) <= 3.0;
}

}  // namespace

DensityEstimate log_density_at(std::span<const std::vector<double>> columns, std::span<const double> point,
                               std::size_t batches) {
    if (columns.empty() || columns.size() != point.size()) throw ValidationError("density point has wrong dimension");
    const std::size_t n = columns[0].size();
    for (const auto& c : columns) {
        if (c.size() != n) throw ValidationError("density columns differ in length");
    }
    if (n < 10 * std::max<std::size_t>(batches, 2)) throw ValidationError("too few draws for density estimation");

    DensityEstimate out;
    out.used_kde = needs_kde(columns, point);
    auto estimate = [&](std::size_t lo, std::size_t hi) {
        return out.used_kde ? kde_log_density(columns, lo, hi, point) : gaussian_log_density(columns, lo, hi, point);
    };
    out.log_density = estimate(0, n);
    out.underflow = !(out.log_density >= std::log(DBL_MIN));

    if (batches >= 2) {
        std::vector<double> est;
        const std::size_t size = n / batches;
        for (std::size_t b = 0; b < batches; ++b) est.push_back(estimate(b * size, (b + 1) * size));
        out.mc_error = std::sqrt(stats::variance(est) / static_cast<double>(batches));
    }
    return out;
}

namespace {

SamplerConfig study_stream(const SamplerConfig& cfg, std::size_t study, std::uint64_t salt) {
    SamplerConfig c = cfg;
    c.seed = derive_seed(cfg.seed, {tag(StreamTag::study_test), study, salt});
    return c;
}

BayesFactor finish(BayesFactor bf, const EvidenceConfig& cfg) {
    bf.value = std::exp(bf.log_value);
    bf.evidence = classify_log(bf.log_value, cfg.thresholds);
    bf.eta_sd = cfg.priors.shift_sd();
    return bf;
}

}  // namespace

double log_shift_conditional_at_zero(double a, int r, int n, double sd) {
    const double inv_var = 1.0 / (sd * sd);
    auto g = [&](double e) { return r * (a + e) - n * stats::softplus(a + e) - 0.5 * e * e * inv_var; };
    auto dg = [&](double e) { return r - n * stats::inv_logit(a + e) - e * inv_var; };

    // g is strictly concave: safeguarded Newton on the decreasing g'.
    double lo = -(n / inv_var + std::abs(a) + 1.0);
    double hi = -lo;
    double e = std::clamp(stats::logit((r + 0.5) / (n + 1.0)) - a, lo, hi);
    for (int it = 0; it < 200; ++it) {
        const double d = dg(e);
        if (d > 0.0) lo = e; else hi = e;
        const double p = stats::inv_logit(a + e);
        double next = e + d / (n * p * (1.0 - p) + inv_var);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - e) < 1e-10 * (1.0 + std::abs(e))) {
            e = next;
            break;
        }
        e = next;
    }
    const double p = stats::inv_logit(a + e);
    const double h = std::min(0.5, 0.5 / std::sqrt(n * p * (1.0 - p) + inv_var));
    const double gmax = g(e);

    // Trapezoid on a grid through the mode, walked outwards until the
    // integrand has dropped by exp(-40); log-concavity makes this exhaustive.
    double sum = 1.0;
    for (int dir : {-1, 1}) {
        for (int j = 1; j < 100000; ++j) {
            const double v = g(e + dir * j * h) - gmax;
            sum += std::exp(v);
            if (v < -40.0) break;
        }
    }
    return g(0.0) - gmax - std::log(h * sum);
}

namespace {

DensityEstimate conditional_density_at_zero(const NetworkDataset& ds, const ModelSpec& spec,
                                            const PosteriorSamples& samples, std::size_t study,
                                            std::size_t batches) {
    const auto& layout = *samples.layout();
    const auto& st = ds.study(study);
    const double sd = spec.priors.shift_sd();
    auto theta_col = [&](TreatmentId k) -> long {
        return k == 1 ? -1 : static_cast<long>(layout.num_studies) + k - 2;
    };
    struct ArmCols {
        long theta_k, theta_b;
        std::size_t delta;
        int r, n;
    };
    std::vector<ArmCols> arms;
    for (std::size_t a = 0; a < st.num_arms(); ++a) {
        const int slot = delta_slot(st, a);
        if (slot < 0) continue;
        const auto& arm = st.arms()[a];
        arms.push_back({theta_col(arm.treatment), theta_col(st.baseline()),
                        layout.delta_offset[study] + static_cast<std::size_t>(slot), arm.events, arm.total});
    }
    const std::size_t S = samples.total_draws();
    std::vector<double> v(S);
    for (std::size_t g = 0; g < S; ++g) {
        const auto [c, s] = samples.locate(g);
        const auto row = samples.row(c, s);
        double acc = 0.0;
        for (const auto& a : arms) {
            double lin = row[study] + row[a.delta];
            if (a.theta_k >= 0) lin += row[static_cast<std::size_t>(a.theta_k)];
            if (a.theta_b >= 0) lin -= row[static_cast<std::size_t>(a.theta_b)];
            acc += log_shift_conditional_at_zero(lin, a.r, a.n, sd);
        }
        v[g] = acc;
    }
    DensityEstimate out;
    out.log_density = log_sum_exp(v) - std::log(static_cast<double>(S));
    batches = std::clamp<std::size_t>(batches, 2, S);
    std::vector<double> rel;
    const std::size_t len = S / batches;
    for (std::size_t b = 0; b < batches; ++b) {
        std::span<const double> part(v.data() + b * len, len);
        rel.push_back(std::exp(log_sum_exp(part) - std::log(static_cast<double>(len)) - out.log_density));
    }
    out.mc_error = std::sqrt(stats::variance(rel) / static_cast<double>(batches));
    out.underflow = out.log_density < std::log(DBL_MIN);
    return out;
}

}  // namespace

BayesFactor bayes_factor_savage_dickey(const NetworkDataset& ds, std::size_t study, const EvidenceConfig& cfg) {
    const auto spec = ModelSpec::mean_shift(study, cfg.priors);
    spec.validate(ds);
    const auto samples = sample(ds, spec, study_stream(cfg.sampler, study, 0));
    const auto& layout = *samples.layout();
    const std::size_t dim = layout.eta_size;

    DensityEstimate dens;
    if (cfg.sd_density == SdDensity::conditional) {
        dens = conditional_density_at_zero(ds, spec, samples, study, 20);
    } else {
        std::vector<std::vector<double>> cols;
        for (std::size_t j = 0; j < dim; ++j) cols.push_back(samples.pooled(layout.eta_offset + j));
        const std::vector<double> zero(dim, 0.0);
        dens = log_density_at(cols, zero);
    }

    const double log_prior0 = static_cast<double>(dim) * stats::normal_logpdf(0.0, 0.0, cfg.priors.shift_sd());
    BayesFactor bf;
    bf.estimator = BfEstimator::savage_dickey;
    bf.study = ds.study(study).id();
    bf.used_kde = dens.used_kde;
    if (dens.underflow) {
        bf.lower_bound = true;
        bf.log_value = log_prior0 - std::log(DBL_MIN);
        bf.mc_error = 0.0;
    } else {
        bf.log_value = log_prior0 - dens.log_density;
        bf.mc_error = dens.mc_error;
    }
    return finish(bf, cfg);
}

BayesFactor bayes_factor_stepping_stone(const NetworkDataset& ds, std::size_t study, const EvidenceConfig& cfg) {
    const auto shifted = log_marginal_stepping_stone(ds, ModelSpec::mean_shift(study, cfg.priors),
                                                     study_stream(cfg.sampler, study, 1), cfg.ladder);
    const auto standard = log_marginal_stepping_stone(ds, ModelSpec::standard(cfg.priors),
                                                      study_stream(cfg.sampler, study, 2), cfg.ladder);
    BayesFactor bf;
    bf.estimator = BfEstimator::stepping_stone;
    bf.study = ds.study(study).id();
    bf.log_value = shifted.value - standard.value;
    bf.mc_error = std::hypot(shifted.mc_error, standard.mc_error);
    return finish(bf, cfg);
}

BayesFactor bayes_factor(const NetworkDataset& ds, std::size_t study, const EvidenceConfig& cfg, BfEstimator method) {
    cfg.thresholds.validate();
    if (study >= ds.num_studies()) throw ValidationError("study index out of range");
    return method == BfEstimator::stepping_stone ? bayes_factor_stepping_stone(ds, study, cfg)
                                                 : bayes_factor_savage_dickey(ds, study, cfg);
}

}  // namespace nmaout
