#pragma once

// Marginal likelihoods and Bayes factors for the mean-shift test: stepping-
// stone over a power-posterior ladder, and the Savage-Dickey density ratio.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nmaout/mcmc.hpp"
#include "nmaout/model.hpp"

namespace nmaout {

enum class EvidenceClass { favors_null, weak, moderate, strong, decisive };

// BF <= weak -> favors_null; (weak, moderate] -> weak; ... ; > decisive -> decisive.
struct EvidenceThresholds {
    double weak = 3.2;
    double moderate = 10.0;
    double strong = 30.0;
    double decisive = 100.0;

    void validate() const;
};

EvidenceClass classify(double bf, const EvidenceThresholds& t = {});
EvidenceClass classify_log(double log_bf, const EvidenceThresholds& t = {});
std::string_view to_string(EvidenceClass c) noexcept;

enum class BfEstimator { stepping_stone, savage_dickey };
std::string_view to_string(BfEstimator e) noexcept;
BfEstimator parse_estimator(std::string_view s);

struct BayesFactor {
    double value = 1.0;      // BF_{1:0}, mean-shift over standard; may be +inf
    double log_value = 0.0;
    BfEstimator estimator = BfEstimator::savage_dickey;
    double mc_error = 0.0;   // Monte Carlo standard error of log_value
    std::string study;
    EvidenceClass evidence = EvidenceClass::favors_null;
    double eta_sd = 0.0;     // prior sd of the shift parameters
    bool lower_bound = false;  // posterior density at 0 below the representable range
    bool used_kde = false;
};

// t_j = (j / (rungs - 1))^power, j = 0..rungs-1.
std::vector<double> default_ladder(std::size_t rungs = 16, double power = 3.0);

struct LogMarginal {
    double value = 0.0;
    double mc_error = 0.0;
    std::vector<double> rung_log_ratios;
};

using TemperedFactory = std::function<std::unique_ptr<MoveModel>(double temperature, std::size_t chain)>;

// Generic stepping-stone: rung j is sampled at temperature ladder[j] with its
// own stream (seed, ladder, j). mc_error is the delta-method standard error
// summed over rungs, using the ESS of the importance weights.
LogMarginal stepping_stone(const TemperedFactory& factory, const SamplerConfig& cfg, std::span<const double> ladder);

LogMarginal log_marginal_stepping_stone(const NetworkDataset& ds, const ModelSpec& spec, const SamplerConfig& cfg,
                                        std::span<const double> ladder);

struct DensityEstimate {
    double log_density = 0.0;
    double mc_error = 0.0;  // standard error of log_density from batch means
    bool used_kde = false;
    bool underflow = false;
};

// Log posterior density at `point` from draws (one vector per dimension,
// equal lengths, pooled over chains). Moment-matched Gaussian, or a Gaussian
// kernel estimate in log space when the marginals fail a skew/kurtosis screen
// and the point lies inside the bulk of the draws.
DensityEstimate log_density_at(std::span<const std::vector<double>> columns, std::span<const double> point,
                               std::size_t batches = 20);

// Density-at-zero estimator for the Savage-Dickey ratio. `conditional`
// averages the exact full conditional of eta at 0 over the posterior draws
// (the conditional factorises over arms and each factor is normalised by 1-D
// quadrature); `moment` uses log_density_at on the eta draws.
enum class SdDensity { conditional, moment };

// log p(eta = 0 | a, r, n) where p(eta) is proportional to
// Bin(r | n, expit(a + eta)) N(eta; 0, sd^2).
double log_shift_conditional_at_zero(double a, int r, int n, double sd);

struct EvidenceConfig {
    SamplerConfig sampler;
    PriorConfig priors;
    std::vector<double> ladder = default_ladder();
    EvidenceThresholds thresholds;
    SdDensity sd_density = SdDensity::conditional;
};

// Fits the mean-shift model for study `study` (index) and returns BF_{1:0}
// = prior density of eta at 0 / posterior density of eta at 0.
BayesFactor bayes_factor_savage_dickey(const NetworkDataset& ds, std::size_t study, const EvidenceConfig& cfg);

// Ratio of stepping-stone marginals, mean-shift over standard.
BayesFactor bayes_factor_stepping_stone(const NetworkDataset& ds, std::size_t study, const EvidenceConfig& cfg);

BayesFactor bayes_factor(const NetworkDataset& ds, std::size_t study, const EvidenceConfig& cfg, BfEstimator method);

}  // namespace nmaout
