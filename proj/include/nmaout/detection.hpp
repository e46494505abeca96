#pragma once

// Posterior predictive checks and the per-study outlier report.
//
// Replication defaults to the "mixed" scheme: for posterior draw s a fresh
// study effect delta* ~ N(0, Psi(tau2_s)) is drawn for every study before the
// binomial counts, and f_L integrates the study likelihood over delta. Using
// the fitted delta_i instead ("conditional") lets delta_i absorb a shifted
// study and the check loses its power, so that mode is opt-in.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nmaout/evidence.hpp"
#include "nmaout/mcmc.hpp"
#include "nmaout/model.hpp"

namespace nmaout {

enum class DiscrepancyKind { likelihood, sdo, gelman_chi2 };
std::string_view to_string(DiscrepancyKind k) noexcept;

struct Discrepancy {
    DiscrepancyKind kind = DiscrepancyKind::likelihood;
    double value = 0.0;
};

enum class ReplicationMode { mixed, conditional };
std::string_view to_string(ReplicationMode m) noexcept;
ReplicationMode parse_replication_mode(std::string_view s);

// Whether replicate-side f_SDO uses the replicate's own median/MAD or the
// observed ones.
enum class SdoPool { replicate, observed };

// Replicated event counts, flat in dataset arm order.
struct ReplicateDataset {
    std::vector<int> events;
};

// Sum over the study's arms of the binomial log-pmf (coefficient included) at
// the state's linear predictors, for the given event counts.
Discrepancy f_likelihood(const NetworkDataset& ds, std::size_t study, const ParameterState& state);
Discrepancy f_likelihood(const NetworkDataset& ds, std::span<const int> events, std::size_t study,
                         const ParameterState& state);

// log of the study likelihood integrated over delta_i ~ N(0, Psi(tau2)), by
// adaptive Gauss-Hermite quadrature around the mode. Only mu_i, theta and
// tau2 are read from the state.
Discrepancy f_likelihood_marginal(const NetworkDataset& ds, std::span<const int> events, std::size_t study,
                                  const ParameterState& state);

// Sum of |x - med(pool)| / MAD(pool) over `values`. Throws ValidationError
// "degenerate proportion pool" when MAD is zero.
Discrepancy f_sdo(std::span<const double> pool, std::span<const double> values);
Discrepancy f_sdo(const ObservedProportions& x, std::string_view study);

// Sum over arms of (r - n p)^2 / (n p (1 - p)); p must lie strictly inside (0,1).
Discrepancy f_gelman_chi2(std::span<const int> events, std::span<const int> totals, std::span<const double> probs);
Discrepancy f_gelman_chi2(const NetworkDataset& ds, std::span<const int> events, std::size_t study,
                          const ParameterState& state);

// Arm probabilities averaged over delta ~ N(0, Psi(tau2)).
std::vector<double> marginal_probabilities(const NetworkDataset& ds, std::size_t study, const ParameterState& state);

std::vector<int> observed_events(const NetworkDataset& ds);

// Replicate for pooled draw g; deterministic in (seed, g).
ReplicateDataset replicate(const NetworkDataset& ds, const PosteriorSamples& samples, std::size_t g,
                           std::uint64_t seed, ReplicationMode mode = ReplicationMode::mixed);

struct PPPValue {
    std::string study;
    DiscrepancyKind kind = DiscrepancyKind::likelihood;
    double value = 0.0;
    std::size_t num_draws = 0;
};

struct PPPConfig {
    std::uint64_t seed = 1;
    ReplicationMode mode = ReplicationMode::mixed;
    SdoPool sdo_pool = SdoPool::replicate;
    std::size_t min_draws = 1000;
    std::size_t threads = 1;
};

// One row per study: p_L, p_SDO, p_G over every pooled posterior draw.
struct StudyPPP {
    PPPValue p_L;
    PPPValue p_SDO;
    PPPValue p_G;
};
std::vector<StudyPPP> ppp_values(const NetworkDataset& ds, const PosteriorSamples& samples, const PPPConfig& cfg);

PPPValue ppp_value(const NetworkDataset& ds, const PosteriorSamples& samples, std::size_t study,
                   DiscrepancyKind kind, const PPPConfig& cfg);

struct DetectionThresholds {
    double bf = 3.2;
    double p = 0.05;
};

struct DetectionConfig {
    SamplerConfig sampler;
    PriorConfig priors;
    EvidenceThresholds evidence;
    DetectionThresholds thresholds;
    BfEstimator estimator = BfEstimator::savage_dickey;
    std::vector<double> ladder = default_ladder();
    ReplicationMode mode = ReplicationMode::mixed;
    SdoPool sdo_pool = SdoPool::replicate;
    std::size_t min_draws = 1000;
    double rhat_limit = 1.1;
};

struct DetectionRow {
    std::string study;
    BayesFactor bf;
    PPPValue p_L;
    PPPValue p_SDO;
    PPPValue p_G;
    bool flagged = false;
};

struct DetectionReport {
    std::vector<DetectionRow> rows;
    DetectionThresholds thresholds;
    ReplicationMode mode = ReplicationMode::mixed;
    double max_rhat = 1.0;

    std::vector<std::size_t> flagged_indices() const;
    std::string to_json() const;
    std::string to_csv() const;
};

bool is_flagged(const BayesFactor& bf, const StudyPPP& p, const DetectionThresholds& t);

// Fits the standard model, checks R-hat, computes every p-value from that one
// fit and runs a Bayes-factor test per study.
DetectionReport detect(const NetworkDataset& ds, const DetectionConfig& cfg);
// Same, reusing an existing standard-model fit.
DetectionReport detect_with_fit(const NetworkDataset& ds, const PosteriorSamples& standard_fit,
                                const DetectionConfig& cfg);

}  // namespace nmaout
