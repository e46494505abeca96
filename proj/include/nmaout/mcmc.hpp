#pragma once

// Adaptive Metropolis-within-Gibbs engine. A target exposes a list of scalar
// moves; the engine draws the increments, accepts or rejects, tunes one step
// size per move during burn-in and freezes them afterwards.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmaout/model.hpp"

namespace nmaout {

struct SamplerConfig {
    std::size_t iterations = 50000;
    std::size_t burn_in = 10000;
    std::size_t chains = 2;
    std::size_t thin = 1;
    std::uint64_t seed = 1;
    std::size_t adapt_window = 50;
    double target_accept = 0.44;
    std::size_t threads = 1;
    // Power on the likelihood; 1 is the posterior, 0 the prior.
    double temperature = 1.0;
    // Keep the step-size trajectory at every adaptation window boundary.
    bool trace_steps = false;

    std::size_t draws_per_chain() const noexcept { return (iterations - burn_in) / thin; }
    void validate() const;
};

// One target for the engine. propose() applies a tentative change of size
// `increment` and returns the log acceptance ratio; the engine follows with
// exactly one of accept() / reject().
class MoveModel {
public:
    virtual ~MoveModel() = default;

    virtual std::size_t num_moves() const = 0;
    // Moves sharing a group are pooled for acceptance reporting and for the
    // zero-acceptance check.
    virtual std::size_t move_group(std::size_t move) const = 0;
    virtual std::vector<std::string> group_names() const = 0;
    virtual double initial_step(std::size_t move) const = 0;

    virtual double propose(std::size_t move, double increment) = 0;
    virtual void accept() = 0;
    virtual void reject() = 0;

    // Current tempered log target (for the initial finiteness check).
    virtual double log_target() const = 0;
    // Current untempered log-likelihood, stored with every draw.
    virtual double log_likelihood() const = 0;

    virtual std::vector<std::string> parameter_names() const = 0;
    virtual void record(std::span<double> out) const = 0;
};

using MoveModelFactory = std::function<std::unique_ptr<MoveModel>(std::size_t chain)>;

// Flattened layout of a ParameterState, so draws can be stored as rows.
struct StateLayout {
    std::size_t num_studies = 0;
    std::size_t num_theta = 0;
    std::vector<std::size_t> delta_offset;  // per study
    std::vector<std::size_t> delta_size;
    std::size_t tau2_index = 0;
    std::size_t eta_offset = 0;
    std::size_t eta_size = 0;  // 0 when absent
    bool has_eta = false;
    std::size_t weights_offset = 0;
    std::size_t weights_size = 0;
    bool has_weights = false;
    std::size_t size = 0;

    static StateLayout build(const NetworkDataset& ds, const ModelSpec& spec);
    std::vector<std::string> names(const NetworkDataset& ds, const ModelSpec& spec) const;
    void pack(const ParameterState& s, std::span<double> out) const;
    ParameterState unpack(std::span<const double> row) const;
};

class PosteriorSamples {
public:
    PosteriorSamples() = default;
    PosteriorSamples(std::vector<std::string> names, std::vector<std::vector<double>> draws,
                     std::vector<std::vector<double>> loglik, std::size_t draws_per_chain);

    std::size_t num_chains() const noexcept { return draws_.size(); }
    std::size_t draws_per_chain() const noexcept { return per_chain_; }
    std::size_t total_draws() const noexcept { return per_chain_ * draws_.size(); }
    std::size_t num_params() const noexcept { return names_.size(); }
    std::span<const std::string> names() const noexcept { return names_; }

    std::size_t param_index(std::string_view name) const;  // throws ValidationError
    std::span<const double> row(std::size_t chain, std::size_t s) const;
    double value(std::size_t chain, std::size_t s, std::size_t param) const {
        return draws_[chain][s * names_.size() + param];
    }
    std::vector<double> chain_series(std::size_t chain, std::size_t param) const;
    std::vector<std::vector<double>> series(std::size_t param) const;  // one vector per chain
    std::vector<double> pooled(std::size_t param) const;               // chains concatenated
    std::span<const double> log_likelihoods(std::size_t chain) const { return loglik_[chain]; }
    std::vector<double> pooled_log_likelihood() const;

    // Pooled draw index g in [0, total_draws()) -> (chain, s).
    std::pair<std::size_t, std::size_t> locate(std::size_t g) const noexcept {
        return {g / per_chain_, g % per_chain_};
    }

    const std::optional<StateLayout>& layout() const noexcept { return layout_; }
    void set_layout(StateLayout layout) { layout_ = std::move(layout); }
    ParameterState state(std::size_t chain, std::size_t s) const;  // needs a layout

    // Acceptance fraction per move group over the post-burn-in iterations.
    struct GroupAcceptance {
        std::string group;
        std::vector<double> per_chain;
    };
    std::vector<GroupAcceptance> accept_rates;
    // Final (frozen) step size per move and chain.
    std::vector<std::vector<double>> step_sizes;
    // Step sizes at each adaptation window boundary, when traced.
    std::vector<std::vector<std::vector<double>>> step_trace;

private:
    std::vector<std::string> names_;
    std::vector<std::vector<double>> draws_;  // per chain, row-major (s, param)
    std::vector<std::vector<double>> loglik_;
    std::size_t per_chain_ = 0;
    std::optional<StateLayout> layout_;
};

// Runs cfg.chains independent chains; chain c uses the stream (seed, chain, c).
PosteriorSamples run_chains(const MoveModelFactory& factory, const SamplerConfig& cfg);

// Split-chain potential scale reduction. Needs >= 2 chains and >= 4 draws each.
double rhat(std::span<const std::vector<double>> chains);
double rhat(const PosteriorSamples& samples, std::size_t param);
double rhat(const PosteriorSamples& samples, std::string_view param);

// Multi-chain ESS with Geyer's initial monotone sequence; at most the draw count.
double effective_sample_size(std::span<const std::vector<double>> chains);
double effective_sample_size(const PosteriorSamples& samples, std::size_t param);
double effective_sample_size(const PosteriorSamples& samples, std::string_view param);

struct RhatSummary {
    double max_rhat = 1.0;
    std::string worst_param;
};
// Largest split-R-hat over all parameters; constant parameters are skipped.
RhatSummary max_rhat(const PosteriorSamples& samples);

// `chain,iter,param,value` with iter counting from the first kept draw.
void write_draws_csv(const PosteriorSamples& samples, std::ostream& out);

}  // namespace nmaout
