#pragma once

// Second-stage analyses: power-prior down-weighting of flagged studies,
// exclusion of them, and the summaries used to compare the fits.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nmaout/mcmc.hpp"
#include "nmaout/model.hpp"

namespace nmaout {

// "moderate" = Beta(3,3), "severe" = Beta(2,5), or "a:b".
BetaPrior parse_beta_prior(std::string_view text);

struct DownweightPlan {
    std::vector<std::pair<std::string, BetaPrior>> entries;  // study id -> prior

    void validate(const NetworkDataset& ds) const;
    ModelSpec model_spec(const NetworkDataset& ds, const PriorConfig& priors) const;
};

// Items like "3=moderate", "study3=severe" or "3=2:5". A bare id uses `fallback`.
DownweightPlan parse_plan(std::span<const std::string> items, BetaPrior fallback = {});

struct IntervalSummary {
    double median = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct ContrastSummary {
    TreatmentId h = 1;  // comparator
    TreatmentId k = 2;  // treatment; OR is k versus h
    std::string label;
    double log_or_median = 0.0;
    IntervalSummary odds_ratio;
};

struct ComparisonSummary {
    std::string analysis;
    std::vector<ContrastSummary> contrasts;  // every ordered pair h != k
    IntervalSummary tau2;
    std::vector<std::pair<std::string, IntervalSummary>> weights;

    const ContrastSummary& contrast(TreatmentId h, TreatmentId k) const;
};

// Posterior medians and 95% equal-tailed intervals. Odds ratios are
// summarised on the log scale and exponentiated, so OR(h,k) OR(k,h) = 1.
ComparisonSummary summarize(const NetworkDataset& ds, const PosteriorSamples& samples, std::string analysis);

struct FitResult {
    PosteriorSamples samples;
    ComparisonSummary summary;
};

FitResult standard_fit(const NetworkDataset& ds, const SamplerConfig& cfg, const PriorConfig& priors = {});
FitResult downweighted_fit(const NetworkDataset& ds, const DownweightPlan& plan, const SamplerConfig& cfg,
                           const PriorConfig& priors = {});
// Standard fit without the named studies; throws ValidationError if the
// reduced network is disconnected.
FitResult exclusion_fit(const NetworkDataset& ds, std::span<const std::string> excluded, const SamplerConfig& cfg,
                        const PriorConfig& priors = {});

// CSV `contrast,analysis,or_median,ci_low,ci_high`; contrasts h < k only,
// followed by tau2 and weight rows (those values are on their natural scale).
std::string comparisons_to_csv(std::span<const ComparisonSummary> summaries);
std::string comparisons_to_json(std::span<const ComparisonSummary> summaries);

struct BiasEntry {
    TreatmentId h = 1;
    TreatmentId k = 2;
    double value = 0.0;
    bool absolute = false;  // true contrast is zero, so this is estimate - truth
};

// (estimate - truth) / truth on the log-odds scale for every pair h < k, with
// truth_hk = theta_1k - theta_1h from `truth` (theta_12 .. theta_1K).
std::vector<BiasEntry> relative_bias(const ComparisonSummary& estimates, std::span<const double> truth);

}  // namespace nmaout
