#include "nmaout/model.hpp"

#include <algorithm>

#include "nmaout/errors.hpp"
#include "nmaout/stats.hpp"

namespace nmaout {

void PriorConfig::validate() const {
    if (!(normal_sd > 0.0)) throw ValidationError("normal prior sd must be positive");
    if (!(tau_upper > 0.0)) throw ValidationError("heterogeneity prior upper bound must be positive");
    if (eta_sd && !(*eta_sd > 0.0)) throw ValidationError("shift prior sd must be positive");
}

void ModelSpec::validate(const NetworkDataset& ds) const {
    priors.validate();
    if (const auto* ms = shift()) {
        if (ms->study >= ds.num_studies()) throw ValidationError("mean-shift study index out of range");
    }
    if (const auto* dw = downweighting()) {
        if (dw->studies.empty()) throw ValidationError("down-weighting needs at least one study");
        if (dw->studies.size() != dw->priors.size()) throw ValidationError("one beta prior per down-weighted study");
        for (std::size_t j = 0; j < dw->studies.size(); ++j) {
            if (dw->studies[j] >= ds.num_studies()) throw ValidationError("down-weighted study index out of range");
            if (std::count(dw->studies.begin(), dw->studies.end(), dw->studies[j]) > 1) {
                throw ValidationError("study listed twice in down-weighting plan");
            }
            if (!(dw->priors[j].a > 0.0) || !(dw->priors[j].b > 0.0)) {
                throw ValidationError("beta hyperparameters must be positive");
            }
        }
    }
}

ParameterState ParameterState::zeros(const NetworkDataset& ds, const ModelSpec& spec) {
    ParameterState s;
    s.mu.assign(ds.num_studies(), 0.0);
    s.theta.assign(static_cast<std::size_t>(ds.num_treatments() - 1), 0.0);
    s.delta.reserve(ds.num_studies());
    for (const auto& study : ds.studies()) s.delta.emplace_back(study.num_arms() - 1, 0.0);
    if (const auto* ms = spec.shift()) s.eta = std::vector<double>(ds.study(ms->study).num_arms() - 1, 0.0);
    if (const auto* dw = spec.downweighting()) s.weights = std::vector<double>(dw->studies.size(), 1.0);
    return s;
}

int delta_slot(const Study& study, std::size_t arm) noexcept {
    const auto b = study.baseline_arm();
    if (arm == b) return -1;
    return static_cast<int>(arm < b ? arm : arm - 1);
}

std::vector<double> RandomEffectsCovariance::matrix() const {
    std::vector<double> m(dimension * dimension, 0.5 * tau2);
    for (std::size_t i = 0; i < dimension; ++i) m[i * dimension + i] = tau2;
    return m;
}

double RandomEffectsCovariance::log_density(std::span<const double> delta) const noexcept {
    return stats::compound_symmetry_logpdf(delta, tau2);
}

double heterogeneity_log_prior(double tau2, const PriorConfig& priors) noexcept {
    if (!(tau2 >= 0.0)) return -INFINITY;
    const double scaled = priors.tau_prior_scale == TauScale::on_tau2 ? tau2 : std::sqrt(tau2);
    if (scaled > priors.tau_upper) return -INFINITY;
    return -std::log(priors.tau_upper);
}

NmaModel::NmaModel(const NetworkDataset& ds, ModelSpec spec) : ds_(&ds), spec_(std::move(spec)) {
    spec_.validate(ds);
    log_coef_.reserve(ds.num_studies());
    for (const auto& s : ds.studies()) {
        std::vector<double> c;
        c.reserve(s.num_arms());
        for (const auto& a : s.arms()) c.push_back(stats::log_binomial_coefficient(a.total, a.events));
        log_coef_.push_back(std::move(c));
    }
}

void NmaModel::check_shape(const ParameterState& state) const {
    const auto& ds = *ds_;
    bool ok = state.mu.size() == ds.num_studies() &&
              state.theta.size() == static_cast<std::size_t>(ds.num_treatments() - 1) &&
              state.delta.size() == ds.num_studies();
    for (std::size_t i = 0; ok && i < ds.num_studies(); ++i) ok = state.delta[i].size() == ds.study(i).num_arms() - 1;
    if (const auto* ms = spec_.shift()) {
        ok = ok && state.eta && state.eta->size() == ds.study(ms->study).num_arms() - 1;
    } else {
        ok = ok && !state.eta;
    }
    if (const auto* dw = spec_.downweighting()) {
        ok = ok && state.weights && state.weights->size() == dw->studies.size();
    } else {
        ok = ok && !state.weights;
    }
    if (!ok) throw ValidationError("parameter state dimensions do not match the dataset and model");
}

double NmaModel::linear_predictor(const ParameterState& state, std::size_t study, std::size_t arm) const {
    const auto& s = ds_->study(study);
    const int slot = delta_slot(s, arm);
    double lin = state.mu.at(study);
    if (slot >= 0) {
        const auto j = static_cast<std::size_t>(slot);
        lin += contrast(state.theta, s.baseline(), s.arms()[arm].treatment) + state.delta.at(study).at(j);
        if (const auto* ms = spec_.shift(); ms && ms->study == study) lin += state.eta->at(j);
    }
    return lin;
}

double NmaModel::study_log_likelihood(const ParameterState& state, std::size_t study) const {
    const auto& s = ds_->study(study);
    double ll = 0.0;
    for (std::size_t a = 0; a < s.num_arms(); ++a) {
        const double lin = linear_predictor(state, study, a);
        if (!std::isfinite(lin)) throw ValidationError("non-finite linear predictor in study '" + s.id() + "'");
        ll += log_coef_[study][a] + stats::binomial_kernel_logit(s.arms()[a].events, s.arms()[a].total, lin);
    }
    return ll;
}

double NmaModel::study_weight(const ParameterState& state, std::size_t study) const {
    if (const auto* dw = spec_.downweighting()) {
        for (std::size_t j = 0; j < dw->studies.size(); ++j) {
            if (dw->studies[j] == study) return state.weights->at(j);
        }
    }
    return 1.0;
}

double NmaModel::log_likelihood(const ParameterState& state) const {
    check_shape(state);
    double ll = 0.0;
    for (std::size_t i = 0; i < ds_->num_studies(); ++i) ll += study_weight(state, i) * study_log_likelihood(state, i);
    return ll;
}

double NmaModel::log_prior(const ParameterState& state) const {
    check_shape(state);
    return nmaout::log_prior(state, spec_);
}

double NmaModel::log_posterior_unnorm(const ParameterState& state) const {
    const double lp = log_prior(state);
    if (!std::isfinite(lp)) return lp;
    return lp + log_likelihood(state);
}

double linear_predictor(const ParameterState& state, const NetworkDataset& ds, std::size_t study, std::size_t arm,
                        const ModelSpec& spec) {
    return NmaModel(ds, spec).linear_predictor(state, study, arm);
}

double log_likelihood(const ParameterState& state, const NetworkDataset& ds, const ModelSpec& spec) {
    return NmaModel(ds, spec).log_likelihood(state);
}

double log_prior(const ParameterState& state, const ModelSpec& spec) {
    const auto& p = spec.priors;
    double lp = heterogeneity_log_prior(state.tau2, p);
    if (!std::isfinite(lp)) return lp;
    for (double m : state.mu) lp += stats::normal_logpdf(m, 0.0, p.normal_sd);
    for (double t : state.theta) lp += stats::normal_logpdf(t, 0.0, p.normal_sd);
    for (const auto& d : state.delta) lp += stats::compound_symmetry_logpdf(d, state.tau2);
    if (state.eta) {
        for (double e : *state.eta) lp += stats::normal_logpdf(e, 0.0, p.shift_sd());
    }
    if (state.weights) {
        const auto* dw = spec.downweighting();
        if (!dw || dw->priors.size() != state.weights->size()) {
            throw ValidationError("weights present without a matching down-weighting plan");
        }
        for (std::size_t j = 0; j < state.weights->size(); ++j) {
            lp += stats::beta_logpdf((*state.weights)[j], dw->priors[j].a, dw->priors[j].b);
        }
    }
    return lp;
}

double log_posterior_unnorm(const ParameterState& state, const NetworkDataset& ds, const ModelSpec& spec) {
    return NmaModel(ds, spec).log_posterior_unnorm(state);
}

}  // namespace nmaout
