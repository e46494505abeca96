#pragma once

// Metropolis-within-Gibbs moves for the three NMA model variants.

#include <memory>

#include "nmaout/mcmc.hpp"
#include "nmaout/model.hpp"

namespace nmaout {

// mu at the empirical baseline logit (0.5 continuity shift), theta, delta and
// eta at 0, tau at 0.1, weights at their prior means.
ParameterState initial_state(const NetworkDataset& ds, const ModelSpec& spec);

// Move model over the joint posterior with the likelihood raised to
// `temperature`. The dataset must outlive the returned object.
std::unique_ptr<MoveModel> make_nma_move_model(const NetworkDataset& ds, const ModelSpec& spec, double temperature);

// Draws from the (tempered, per cfg.temperature) posterior. The result carries
// a StateLayout so samples.state(chain, s) rebuilds full ParameterStates.
PosteriorSamples sample(const NetworkDataset& ds, const ModelSpec& spec, const SamplerConfig& cfg);

}  // namespace nmaout
