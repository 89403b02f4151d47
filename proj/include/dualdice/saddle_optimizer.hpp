#pragma once

#include "dualdice/function_approx.hpp"
#include "dualdice/mdp.hpp"
#include "dualdice/penalty.hpp"
#include "dualdice/tabular_exact.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dualdice {

/**
 * One stochastic evaluation of the saddle objective.
 *
 * `next_pairs[k]` belongs to transition `next_owner[k]` with weight
 * `next_weights[k]`; a sampled a' has a single entry of weight 1, the exact
 * expectation has one entry per action weighted by pi(a'|s'). Initial pairs
 * work the same way, normalized by `num_initial_samples`.
 */
struct Minibatch {
    std::vector<StateAction> pairs;
    std::vector<StateAction> next_pairs;
    std::vector<double> next_weights;
    std::vector<std::size_t> next_owner;
    std::vector<StateAction> initial_pairs;
    std::vector<double> initial_weights;
    std::size_t num_initial_samples = 0;

    void validate() const;
};

/// Builds a batch with one target action per s' and per s0 already chosen.
Minibatch make_sampled_batch(std::span<const Transition> transitions,
                             std::span<const int> next_actions, std::span<const int> initial_states,
                             std::span<const int> initial_actions);

/**
 * J = 1/B sum_i [(nu(s,a) - gamma nu(s',a')) zeta(s,a) - f*(zeta(s,a))]
 *     - (1-gamma) 1/B0 sum_j nu(s0_j, a0_j).
 */
double minibatch_loss(const Minibatch& batch, const CorrectionModel& model,
                      const PenaltyFunction& penalty, double gamma);

struct LossGradient {
    double loss = 0.0;
    Vector nu;
    Vector zeta;
};

LossGradient minibatch_gradient(const Minibatch& batch, const CorrectionModel& model,
                                const PenaltyFunction& penalty, double gamma);

enum class OptimizerKind { kSgd, kAdam };

/// Bias-corrected Adam moments for one parameter vector.
class AdamState {
   public:
    AdamState(Index num_params, double beta1, double beta2, double epsilon);
    /// Advances the moments with `grad` and returns the normalized step direction.
    Vector direction(const Vector& grad);

   private:
    Vector m_;
    Vector v_;
    double beta1_;
    double beta2_;
    double epsilon_;
    Index t_ = 0;
};

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct TrainConfig {
    Index batch_size = 512;
    double lr_nu = 1e-3;
    double lr_zeta = 1e-4;
    Index num_steps = 10000;
    OptimizerKind optimizer = OptimizerKind::kAdam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// Step t uses lr / (1 + t / lr_decay_steps); 0 keeps the rate constant.
    double lr_decay_steps = 0.0;
    double penalty_p = 1.5;
    std::uint64_t seed = 0;
    /// Optional bound C; corrections are projected onto [0, C] when reading them out.
    std::optional<double> zeta_clip;
    /// Record loss (and the running estimate) every this many steps; 0 disables.
    Index eval_every = 0;
    /// Use E_{a'~pi}[nu(s',a')] instead of one sampled a'. Off by default.
    bool exact_target_expectation = false;

    void validate() const;
};

struct TracePoint {
    Index step = 0;
    double loss = 0.0;
    double estimate = 0.0;
    /// Ground truth when the caller supplied one, NaN otherwise.
    double truth = 0.0;
};

struct TrainResult {
    CorrectionModel model;
    std::vector<TracePoint> trace;
};

/// Raised when the loss or parameters stop being finite.
class TrainingDiverged : public NumericalError {
   public:
    TrainingDiverged(Index step, double nu_norm, double zeta_norm);
    Index step() const { return step_; }

   private:
    Index step_;
};

/**
 * Stochastic descent on nu / ascent on zeta. Each step draws a batch of
 * transitions and a batch of initial states with replacement and samples
 * a' ~ pi(s'), a0 ~ pi(s0). There is deliberately no behavior-policy input.
 */
TrainResult train(const TransitionDataset& data, const StochasticPolicy& target,
                  CorrectionModel model, const TrainConfig& config,
                  std::optional<double> true_value = std::nullopt);

/// zeta at the given pairs, projected onto [0, C] when a clip is given.
Vector corrections_from_model(const CorrectionModel& model, std::span<const StateAction> pairs,
                              std::optional<double> zeta_clip = std::nullopt);

/// zeta on every observed pair of the model as a correction table.
CorrectionTable correction_table(const CorrectionModel& model, const EmpiricalModel& empirical,
                                 std::optional<double> zeta_clip = std::nullopt);

/// Mean over logged transitions of zeta(s,a) * r.
double estimate_policy_value(const CorrectionModel& model, const TransitionDataset& data,
                             std::optional<double> zeta_clip = std::nullopt);

/**
 * Primal objective sum_D d(s,a) f((nu - B nu)(s,a)) - (1-gamma) E_{beta, pi}[nu]
 * on an empirical model, for a table of nu values over pairs.
 */
double primal_objective(const Vector& nu_table, const EmpiricalModel& model,
                        const StochasticPolicy& target, double gamma, const PenaltyFunction& penalty);

/**
 * d^D-weighted mean of |f*'(zeta(s,a)) - (nu(s,a) - gamma E[nu(s',a')])| over
 * observed pairs, where the backup averages the logged next states and pi.
 */
double kkt_residual(const CorrectionModel& model, const EmpiricalModel& empirical,
                    const StochasticPolicy& target, double gamma, const PenaltyFunction& penalty);

}  // namespace dualdice
