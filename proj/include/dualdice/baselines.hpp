#pragma once

#include "dualdice/function_approx.hpp"
#include "dualdice/mdp.hpp"
#include "dualdice/saddle_optimizer.hpp"
#include "dualdice/tabular_exact.hpp"

#include <optional>

namespace dualdice {

/**
 * Weighted step-wise importance sampling over fixed-horizon trajectories.
 *
 * With cumulative ratios w_{i,t} = prod_{k<=t} pi(a_k|s_k) / mu(a_k|s_k),
 * returns (sum_t gamma^t sum_i w_{i,t} r_{i,t} / sum_i w_{i,t}) / sum_t gamma^t.
 * Steps where every trajectory has zero weight contribute nothing to the
 * numerator but still count in the normalizer.
 */
double weighted_stepwise_is(const TrajectoryDataset& trajectories, const StochasticPolicy& target,
                            const StochasticPolicy& behavior, double gamma);

/// Tabular maximum likelihood with add-one smoothing: (n(s,a) + 1) / (n(s) + |A|).
StochasticPolicy behavior_cloning(const TransitionDataset& data, Index num_states,
                                  Index num_actions);

struct TdConfig {
    Index batch_size = 512;
    double learning_rate = 1e-2;
    Index num_steps = 5000;
    OptimizerKind optimizer = OptimizerKind::kAdam;
    /// Step t uses lr / (1 + t / lr_decay_steps); 0 keeps the rate constant.
    double lr_decay_steps = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TdResult {
    /// w(s), one output per state (the model's action dimension is 1).
    FunctionApprox state_model;
    /// w(s) lifted to pairs by pi/mu on the observed support.
    CorrectionTable corrections;
    /// Mean of sum w(s,a) r over the logged transitions.
    double estimate = 0.0;
    /// Average over steps of the in-batch variance of gamma * pi/mu * w(s),
    /// the ratio-weighted term that carries the flow forward.
    double update_variance = 0.0;
};

/// Tabular state-correction model initialized to w = 1.
FunctionApprox make_td_tabular_model(Index num_states);

/**
 * Stochastic semi-gradient method for the flow equation in state corrections.
 * Each step averages over a batch of transitions and initial states
 *   theta += lr * grad[(1-gamma) w(s0) - 1/2 w(s)^2 + gamma rho sg(w(s)) w(s')],
 * rho = pi(a|s) / mu(a|s); the expected update vanishes exactly at the flow
 * fixed point. Tabular outputs are projected onto w >= 0 after each step;
 * other parametrizations are clipped at zero when read out.
 */
TdResult td_corrections_stochastic(const TransitionDataset& data, const StochasticPolicy& target,
                                   const StochasticPolicy& behavior, FunctionApprox state_model,
                                   const TdConfig& config);

}  // namespace dualdice
