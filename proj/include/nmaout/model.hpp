#pragma once

// Random-effects network meta-analysis on the logit scale:
//
//   r_ik ~ Binomial(n_ik, p_ik)
//   logit(p_ik) = mu_i                                   (baseline arm b)
//   logit(p_ik) = mu_i + theta_bk + delta_i,bk [+ eta_bk] (other arms)
//   theta_bk = theta_1k - theta_1b,  theta_11 = 0
//   delta_i ~ N(0, Psi(tau2)),  Psi = tau2 on the diagonal, tau2/2 off it
//
// Three variants share this core: the standard model, the mean-shift model
// (eta on one tested study) and the power-prior model that raises the
// likelihood of selected studies to w_j ~ Beta(a_j, b_j).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nmaout/data.hpp"

namespace nmaout {

enum class TauScale { on_tau, on_tau2 };

struct PriorConfig {
    double normal_sd = std::sqrt(1000.0);  // mu, theta and (by default) eta
    double tau_upper = 5.0;
    TauScale tau_prior_scale = TauScale::on_tau2;
    std::optional<double> eta_sd;  // overrides normal_sd for the shift parameters

    double shift_sd() const noexcept { return eta_sd.value_or(normal_sd); }
    void validate() const;
};

struct BetaPrior {
    double a = 3.0;
    double b = 3.0;

    double mean() const noexcept { return a / (a + b); }
    friend bool operator==(const BetaPrior&, const BetaPrior&) = default;
};

struct StandardModel {};

struct MeanShiftModel {
    std::size_t study = 0;  // index into the dataset
};

struct DownweightedModel {
    std::vector<std::size_t> studies;  // indices of the down-weighted studies
    std::vector<BetaPrior> priors;     // one per entry of `studies`
};

using ModelVariant = std::variant<StandardModel, MeanShiftModel, DownweightedModel>;

struct ModelSpec {
    ModelVariant variant = StandardModel{};
    PriorConfig priors{};

    static ModelSpec standard(PriorConfig p = {}) { return {StandardModel{}, p}; }
    static ModelSpec mean_shift(std::size_t study, PriorConfig p = {}) { return {MeanShiftModel{study}, p}; }
    static ModelSpec downweighted(std::vector<std::size_t> studies, std::vector<BetaPrior> priors, PriorConfig p = {}) {
        return {DownweightedModel{std::move(studies), std::move(priors)}, p};
    }

    const MeanShiftModel* shift() const noexcept { return std::get_if<MeanShiftModel>(&variant); }
    const DownweightedModel* downweighting() const noexcept { return std::get_if<DownweightedModel>(&variant); }

    void validate(const NetworkDataset& ds) const;
};

// One point of the joint parameter space. delta[i] holds the k_i - 1 study
// effects of study i against its own baseline, in arm order with the baseline
// arm skipped. eta (mean-shift) follows the same layout for the tested study.
struct ParameterState {
    std::vector<double> mu;
    std::vector<double> theta;  // theta[k - 2] = theta_1k for k = 2..K
    std::vector<std::vector<double>> delta;
    double tau2 = 0.0;
    std::optional<std::vector<double>> eta;
    std::optional<std::vector<double>> weights;

    // All-zero state shaped for (ds, spec); tau2 = 0 and weights at 1.
    static ParameterState zeros(const NetworkDataset& ds, const ModelSpec& spec);
};

// theta_1k with theta_11 = 0.
inline double basic_effect(std::span<const double> theta, TreatmentId k) noexcept {
    return k == 1 ? 0.0 : theta[static_cast<std::size_t>(k - 2)];
}

// Consistency: theta_hk = theta_1k - theta_1h.
inline double contrast(std::span<const double> theta, TreatmentId h, TreatmentId k) noexcept {
    return basic_effect(theta, k) - basic_effect(theta, h);
}

// Position of `arm` in the study's delta vector, or -1 for the baseline arm.
int delta_slot(const Study& study, std::size_t arm) noexcept;

struct RandomEffectsCovariance {
    double tau2 = 0.0;
    std::size_t dimension = 1;

    std::vector<double> matrix() const;  // dense row-major
    double log_density(std::span<const double> delta) const noexcept;
};

// Binds a dataset and a model variant; caches the binomial constants.
class NmaModel {
public:
    NmaModel(const NetworkDataset& ds, ModelSpec spec);

    const NetworkDataset& dataset() const noexcept { return *ds_; }
    const ModelSpec& spec() const noexcept { return spec_; }

    double linear_predictor(const ParameterState& state, std::size_t study, std::size_t arm) const;
    // Log-likelihood of one study without any power weight.
    double study_log_likelihood(const ParameterState& state, std::size_t study) const;
    double log_likelihood(const ParameterState& state) const;
    double log_prior(const ParameterState& state) const;
    double log_posterior_unnorm(const ParameterState& state) const;

    double log_binomial_coefficient(std::size_t study, std::size_t arm) const noexcept {
        return log_coef_[study][arm];
    }
    // Power applied to a study's likelihood: w_j for down-weighted studies, else 1.
    double study_weight(const ParameterState& state, std::size_t study) const;

    void check_shape(const ParameterState& state) const;

private:
    const NetworkDataset* ds_;
    ModelSpec spec_;
    std::vector<std::vector<double>> log_coef_;
};

double linear_predictor(const ParameterState& state, const NetworkDataset& ds, std::size_t study, std::size_t arm,
                        const ModelSpec& spec);
double log_likelihood(const ParameterState& state, const NetworkDataset& ds, const ModelSpec& spec);
double log_prior(const ParameterState& state, const ModelSpec& spec);
double log_posterior_unnorm(const ParameterState& state, const NetworkDataset& ds, const ModelSpec& spec);

// Log-density of the heterogeneity prior at tau2, on the scale selected by
// tau_prior_scale. -inf outside the support.
double heterogeneity_log_prior(double tau2, const PriorConfig& priors) noexcept;

}  // namespace nmaout
