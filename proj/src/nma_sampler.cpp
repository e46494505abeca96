#include "nmaout/nma_sampler.hpp"

#include <cmath>

#include "nmaout/errors.hpp"
#include "nmaout/stats.hpp"

namespace nmaout {

ParameterState initial_state(const NetworkDataset& ds, const ModelSpec& spec) {
    auto s = ParameterState::zeros(ds, spec);
    for (std::size_t i = 0; i < ds.num_studies(); ++i) {
        const auto& arm = ds.study(i).arms()[ds.study(i).baseline_arm()];
        s.mu[i] = stats::logit((arm.events + 0.5) / (arm.total + 1.0));
    }
    s.tau2 = 0.01;
    if (const auto* dw = spec.downweighting()) {
        for (std::size_t j = 0; j < dw->priors.size(); ++j) (*s.weights)[j] = dw->priors[j].mean();
    }
    return s;
}

namespace {

enum class MoveKind { mu, theta, theta_centred, delta, tau, tau_scale, eta, eta_exchange, weight };

struct Move {
    MoveKind kind;
    std::size_t index;  // study, treatment, flat parameter or weight slot
};

class NmaMoveModel final : public MoveModel {
public:
    NmaMoveModel(const NetworkDataset& ds, const ModelSpec& spec, double temperature)
        : ds_(ds), spec_(spec), beta_(temperature), layout_(StateLayout::build(ds, spec)) {
        spec_.validate(ds);
        const std::size_t n = ds.num_studies();
        const int K = ds.num_treatments();
        arm_offset_.resize(n + 1, 0);
        studies_with_.assign(static_cast<std::size_t>(K + 1), {});
        for (std::size_t i = 0; i < n; ++i) {
            const auto& s = ds.study(i);
            arm_offset_[i + 1] = arm_offset_[i] + s.num_arms();
            for (std::size_t a = 0; a < s.num_arms(); ++a) {
                const auto& arm = s.arms()[a];
                events_.push_back(arm.events);
                totals_.push_back(arm.total);
                treat_.push_back(arm.treatment);
                log_coef_.push_back(stats::log_binomial_coefficient(arm.total, arm.events));
                slot_.push_back(delta_slot(s, a));
                studies_with_[static_cast<std::size_t>(arm.treatment)].push_back(i);
            }
            baseline_.push_back(s.baseline());
        }
        weight_slot_.assign(n, -1);
        if (const auto* dw = spec_.downweighting()) {
            for (std::size_t j = 0; j < dw->studies.size(); ++j) weight_slot_[dw->studies[j]] = static_cast<int>(j);
        }
        tested_ = spec_.shift() ? static_cast<long>(spec_.shift()->study) : -1;
        normal_var_ = spec_.priors.normal_sd * spec_.priors.normal_sd;
        eta_var_ = spec_.priors.shift_sd() * spec_.priors.shift_sd();

        x_.resize(layout_.size);
        layout_.pack(initial_state(ds, spec_), x_);

        for (std::size_t i = 0; i < n; ++i) moves_.push_back({MoveKind::mu, i});
        for (int k = 2; k <= K; ++k) moves_.push_back({MoveKind::theta, static_cast<std::size_t>(k)});
        for (int k = 2; k <= K; ++k) moves_.push_back({MoveKind::theta_centred, static_cast<std::size_t>(k)});
        for (std::size_t p = layout_.delta_offset.empty() ? 0 : layout_.delta_offset.front(); p < layout_.tau2_index; ++p) {
            moves_.push_back({MoveKind::delta, p});
        }
        moves_.push_back({MoveKind::tau, layout_.tau2_index});
        moves_.push_back({MoveKind::tau_scale, layout_.tau2_index});
        for (std::size_t j = 0; j < layout_.eta_size; ++j) moves_.push_back({MoveKind::eta, j});
        for (std::size_t j = 0; j < layout_.eta_size; ++j) moves_.push_back({MoveKind::eta_exchange, j});
        for (std::size_t j = 0; j < layout_.weights_size; ++j) moves_.push_back({MoveKind::weight, j});

        // Map every delta parameter back to its study.
        delta_study_.assign(layout_.size, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < layout_.delta_size[i]; ++j) delta_study_[layout_.delta_offset[i] + j] = i;
        }

        lin_.resize(events_.size());
        arm_ll_.resize(events_.size());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = arm_offset_[i]; f < arm_offset_[i + 1]; ++f) {
                lin_[f] = compute_lin(i, f);
                arm_ll_[f] = arm_log_lik(f, lin_[f]);
            }
        }
        std::size_t max_dim = 0;
        for (std::size_t i = 0; i < n; ++i) max_dim = std::max(max_dim, layout_.delta_size[i]);
        for (std::size_t m = 0; m <= max_dim; ++m) log_dim_.push_back(std::log(static_cast<double>(m) + 1.0));
        dp_.resize(n);
        for (std::size_t i = 0; i < n; ++i) dp_[i] = delta_prior(i, tau2());
    }

    std::size_t num_moves() const override { return moves_.size(); }
    std::size_t move_group(std::size_t m) const override { return static_cast<std::size_t>(moves_[m].kind); }
    std::vector<std::string> group_names() const override {
        return {"mu", "theta", "theta_centred", "delta", "tau", "tau_scale", "eta", "eta_exchange", "weight"};
    }
    double initial_step(std::size_t m) const override {
        switch (moves_[m].kind) {
            case MoveKind::mu: return 0.3;
            case MoveKind::theta: return 0.1;
            case MoveKind::theta_centred: return 0.2;
            case MoveKind::delta: return 0.3;
            case MoveKind::tau: return 0.5;
            case MoveKind::tau_scale: return 0.2;
            case MoveKind::eta: return 0.5;
            case MoveKind::eta_exchange: return 0.3;
            case MoveKind::weight: return 1.0;
        }
        return 0.1;
    }

    double propose(std::size_t m, double eps) override {
        undo_.clear();
        pending_arms_.clear();
        pending_dp_.clear();
        const Move mv = moves_[m];
        switch (mv.kind) {
            case MoveKind::mu: return propose_mu(mv.index, eps);
            case MoveKind::theta: return propose_theta(static_cast<TreatmentId>(mv.index), eps);
            case MoveKind::theta_centred: return propose_theta_centred(static_cast<TreatmentId>(mv.index), eps);
            case MoveKind::delta: return propose_delta(mv.index, eps);
            case MoveKind::tau: return propose_tau(eps);
            case MoveKind::tau_scale: return propose_tau_scale(eps);
            case MoveKind::eta: return propose_eta(mv.index, eps);
            case MoveKind::eta_exchange: return propose_eta_exchange(mv.index, eps);
            case MoveKind::weight: return propose_weight(mv.index, eps);
        }
        return -INFINITY;
    }

    void accept() override {
        for (const auto& p : pending_arms_) {
            lin_[p.arm] = p.lin;
            arm_ll_[p.arm] = p.ll;
        }
        for (const auto& [i, v] : pending_dp_) dp_[i] = v;
    }

    void reject() override {
        for (auto it = undo_.rbegin(); it != undo_.rend(); ++it) x_[it->first] = it->second;
    }

    double log_target() const override {
        const auto st = layout_.unpack(x_);
        return beta_ * log_likelihood() + log_prior(st, spec_);
    }

    double log_likelihood() const override {
        double ll = 0.0;
        for (std::size_t i = 0; i < ds_.num_studies(); ++i) ll += weight(i) * study_ll(i);
        return ll;
    }

    std::vector<std::string> parameter_names() const override { return layout_.names(ds_, spec_); }
    void record(std::span<double> out) const override { std::copy(x_.begin(), x_.end(), out.begin()); }

private:
    struct ArmUpdate {
        std::size_t arm;
        double lin;
        double ll;
    };

    double tau2() const { return x_[layout_.tau2_index]; }
    double theta1(TreatmentId k) const { return k == 1 ? 0.0 : x_[layout_.num_studies + static_cast<std::size_t>(k - 2)]; }
    double weight(std::size_t i) const {
        return weight_slot_[i] < 0 ? 1.0 : x_[layout_.weights_offset + static_cast<std::size_t>(weight_slot_[i])];
    }

    double compute_lin(std::size_t i, std::size_t f) const {
        double lin = x_[i];
        const int slot = slot_[f];
        if (slot < 0) return lin;
        const auto j = static_cast<std::size_t>(slot);
        lin += theta1(treat_[f]) - theta1(baseline_[i]) + x_[layout_.delta_offset[i] + j];
        if (static_cast<long>(i) == tested_) lin += x_[layout_.eta_offset + j];
        return lin;
    }

    double arm_log_lik(std::size_t f, double lin) const {
        return log_coef_[f] + stats::binomial_kernel_logit(events_[f], totals_[f], lin);
    }

    double study_ll(std::size_t i) const {
        double s = 0.0;
        for (std::size_t f = arm_offset_[i]; f < arm_offset_[i + 1]; ++f) s += arm_ll_[f];
        return s;
    }

    // Same value as stats::compound_symmetry_logpdf with the logs cached;
    // this sits on the hot path of every delta and tau move.
    double delta_prior(std::size_t i, double t2) const {
        const std::size_t m = layout_.delta_size[i];
        if (m == 0) return 0.0;
        if (!(t2 > 0.0)) return -INFINITY;
        if (t2 != cached_t2_) {
            cached_t2_ = t2;
            cached_log_half_t2_ = std::log(0.5 * t2);
        }
        const double* d = x_.data() + layout_.delta_offset[i];
        double sum = 0.0;
        double sum_sq = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            sum += d[j];
            sum_sq += d[j] * d[j];
        }
        const double md = static_cast<double>(m);
        const double quad = (2.0 / t2) * (sum_sq - sum * sum / (md + 1.0));
        return -0.5 * (md * (stats::kLog2Pi + cached_log_half_t2_) + log_dim_[m] + quad);
    }

    void set(std::size_t p, double v) {
        undo_.emplace_back(p, x_[p]);
        x_[p] = v;
    }

    // Re-evaluates the given arms of study i; returns the weighted, tempered change.
    double refresh_arm(std::size_t i, std::size_t f) {
        const double lin = compute_lin(i, f);
        const double ll = arm_log_lik(f, lin);
        pending_arms_.push_back({f, lin, ll});
        return beta_ * weight(i) * (ll - arm_ll_[f]);
    }

    double refresh_study(std::size_t i) {
        double d = 0.0;
        for (std::size_t f = arm_offset_[i]; f < arm_offset_[i + 1]; ++f) d += refresh_arm(i, f);
        return d;
    }

    double refresh_dp(std::size_t i) {
        const double v = delta_prior(i, tau2());
        pending_dp_.emplace_back(i, v);
        return v - dp_[i];
    }

    static double normal_diff(double before, double after, double var) {
        return -(after * after - before * before) / (2.0 * var);
    }

    double propose_mu(std::size_t i, double eps) {
        const double old = x_[i];
        set(i, old + eps);
        return refresh_study(i) + normal_diff(old, old + eps, normal_var_);
    }

    double propose_theta(TreatmentId k, double eps) {
        const std::size_t p = layout_.num_studies + static_cast<std::size_t>(k - 2);
        const double old = x_[p];
        set(p, old + eps);
        double d = normal_diff(old, old + eps, normal_var_);
        for (std::size_t i : studies_with_[static_cast<std::size_t>(k)]) d += refresh_study(i);
        return d;
    }

    // theta_1k moves while the deltas of every study containing k absorb the
    // change, so all linear predictors stay fixed and only priors change.
    double propose_theta_centred(TreatmentId k, double eps) {
        const std::size_t p = layout_.num_studies + static_cast<std::size_t>(k - 2);
        const double old = x_[p];
        set(p, old + eps);
        double d = normal_diff(old, old + eps, normal_var_);
        for (std::size_t i : studies_with_[static_cast<std::size_t>(k)]) {
            for (std::size_t f = arm_offset_[i]; f < arm_offset_[i + 1]; ++f) {
                if (slot_[f] < 0) continue;
                const std::size_t q = layout_.delta_offset[i] + static_cast<std::size_t>(slot_[f]);
                if (treat_[f] == k) {
                    set(q, x_[q] - eps);
                } else if (baseline_[i] == k) {
                    set(q, x_[q] + eps);
                }
            }
            d += refresh_dp(i);
        }
        return d;
    }

    double propose_delta(std::size_t p, double eps) {
        const std::size_t i = delta_study_[p];
        set(p, x_[p] + eps);
        const std::size_t j = p - layout_.delta_offset[i];
        double d = refresh_dp(i);
        for (std::size_t f = arm_offset_[i]; f < arm_offset_[i + 1]; ++f) {
            if (slot_[f] == static_cast<int>(j)) d += refresh_arm(i, f);
        }
        return d;
    }

    // Support scale u (tau2 or tau), mapped to z = logit(u / upper).
    double support_value(double t2) const {
        return spec_.priors.tau_prior_scale == TauScale::on_tau2 ? t2 : std::sqrt(t2);
    }
    double tau2_from_support(double u) const {
        return spec_.priors.tau_prior_scale == TauScale::on_tau2 ? u : u * u;
    }

    double propose_tau(double eps) {
        const double upper = spec_.priors.tau_upper;
        const double s = support_value(tau2()) / upper;
        const double s_new = stats::inv_logit(stats::logit(s) + eps);
        if (!(s_new > 0.0 && s_new < 1.0)) return -INFINITY;
        set(layout_.tau2_index, tau2_from_support(s_new * upper));
        double d = std::log(s_new) + std::log1p(-s_new) - std::log(s) - std::log1p(-s);
        for (std::size_t i = 0; i < ds_.num_studies(); ++i) d += refresh_dp(i);
        return d;
    }

    // tau -> tau e^eps with every delta scaled by e^eps. The Gaussian
    // determinant and the Jacobian of the delta map cancel; what remains is
    // the likelihood change and the Jacobian of log tau under the uniform prior.
    double propose_tau_scale(double eps) {
        const double factor = std::exp(eps);
        const double t2 = tau2() * factor * factor;
        if (support_value(t2) > spec_.priors.tau_upper || !(t2 > 0.0)) return -INFINITY;
        set(layout_.tau2_index, t2);
        for (std::size_t p = layout_.num_studies + layout_.num_theta; p < layout_.tau2_index; ++p) set(p, x_[p] * factor);
        double d = spec_.priors.tau_prior_scale == TauScale::on_tau2 ? 2.0 * eps : eps;
        for (std::size_t i = 0; i < ds_.num_studies(); ++i) {
            d += refresh_study(i);
            pending_dp_.emplace_back(i, delta_prior(i, t2));
        }
        return d;
    }

    double propose_eta(std::size_t j, double eps) {
        const std::size_t p = layout_.eta_offset + j;
        const double old = x_[p];
        set(p, old + eps);
        const auto i = static_cast<std::size_t>(tested_);
        double d = normal_diff(old, old + eps, eta_var_);
        for (std::size_t f = arm_offset_[i]; f < arm_offset_[i + 1]; ++f) {
            if (slot_[f] == static_cast<int>(j)) d += refresh_arm(i, f);
        }
        return d;
    }

    // eta and delta of the tested study trade places along their ridge.
    double propose_eta_exchange(std::size_t j, double eps) {
        const std::size_t p = layout_.eta_offset + j;
        const auto i = static_cast<std::size_t>(tested_);
        const std::size_t q = layout_.delta_offset[i] + j;
        const double old = x_[p];
        set(p, old + eps);
        set(q, x_[q] - eps);
        return normal_diff(old, old + eps, eta_var_) + refresh_dp(i);
    }

    double propose_weight(std::size_t j, double eps) {
        const std::size_t p = layout_.weights_offset + j;
        const double w = x_[p];
        const double w_new = stats::inv_logit(stats::logit(w) + eps);
        if (!(w_new > 0.0 && w_new < 1.0)) return -INFINITY;
        set(p, w_new);
        const auto& prior = spec_.downweighting()->priors[j];
        const std::size_t i = spec_.downweighting()->studies[j];
        // Beta(a,b) on w with the logit Jacobian w(1-w) gives exponents a and b.
        const double prior_diff = prior.a * (std::log(w_new) - std::log(w)) +
                                  prior.b * (std::log1p(-w_new) - std::log1p(-w));
        return prior_diff + beta_ * (w_new - w) * study_ll(i);
    }

    const NetworkDataset& ds_;
    ModelSpec spec_;
    double beta_;
    StateLayout layout_;
    std::vector<double> x_;

    std::vector<std::size_t> arm_offset_;
    std::vector<int> events_;
    std::vector<int> totals_;
    std::vector<TreatmentId> treat_;
    std::vector<double> log_coef_;
    std::vector<int> slot_;
    std::vector<TreatmentId> baseline_;
    std::vector<std::vector<std::size_t>> studies_with_;
    std::vector<int> weight_slot_;
    std::vector<std::size_t> delta_study_;
    long tested_ = -1;
    double normal_var_ = 1000.0;
    double eta_var_ = 1000.0;

    std::vector<Move> moves_;
    std::vector<double> lin_;
    std::vector<double> arm_ll_;
    std::vector<double> dp_;
    std::vector<double> log_dim_;  // log(m + 1) by delta dimension m
    mutable double cached_t2_ = -1.0;
    mutable double cached_log_half_t2_ = 0.0;

    std::vector<std::pair<std::size_t, double>> undo_;
    std::vector<ArmUpdate> pending_arms_;
    std::vector<std::pair<std::size_t, double>> pending_dp_;
};

}  // namespace

std::unique_ptr<MoveModel> make_nma_move_model(const NetworkDataset& ds, const ModelSpec& spec, double temperature) {
    return std::make_unique<NmaMoveModel>(ds, spec, temperature);
}

PosteriorSamples sample(const NetworkDataset& ds, const ModelSpec& spec, const SamplerConfig& cfg) {
    cfg.validate();
    spec.validate(ds);
    auto samples = run_chains([&](std::size_t) { return make_nma_move_model(ds, spec, cfg.temperature); }, cfg);
    samples.set_layout(StateLayout::build(ds, spec));
    return samples;
}

}  // namespace nmaout
