#include "dualdice/baselines.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace dualdice {

namespace {

void check_policy_shape(const StochasticPolicy& policy, Index num_states, Index num_actions,
                        const char* what) {
    if (policy.num_states() != num_states || policy.num_actions() != num_actions) {
        std::ostringstream msg;
        msg << what << " policy is " << policy.num_states() << "x" << policy.num_actions()
            << " but the data is " << num_states << "x" << num_actions;
        throw InvalidArgument(msg.str());
    }
}

double behavior_ratio(const StochasticPolicy& target, const StochasticPolicy& behavior, int s, int a,
                      const char* where) {
    const double mu = behavior.prob(s, a);
    if (!(mu > 0.0)) {
        std::ostringstream msg;
        msg << where << ": behavior probability is zero for logged action (s=" << s << ", a=" << a
            << ")";
        throw InvalidArgument(msg.str());
    }
    return target.prob(s, a) / mu;
}

}  // namespace

double weighted_stepwise_is(const TrajectoryDataset& trajectories, const StochasticPolicy& target,
                            const StochasticPolicy& behavior, double gamma) {
    trajectories.validate();
    if (trajectories.trajectories.empty()) {
        throw InvalidArgument("weighted_stepwise_is: no trajectories");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("weighted_stepwise_is: gamma must be in [0, 1)");
    check_policy_shape(target, trajectories.num_states, trajectories.num_actions, "target");
    check_policy_shape(behavior, trajectories.num_states, trajectories.num_actions, "behavior");

    const std::size_t n = trajectories.trajectories.size();
    std::vector<double> weights(n, 1.0);
    double numerator = 0.0;
    double normalizer = 0.0;
    double discount = 1.0;
    for (Index t = 0; t < trajectories.horizon; ++t) {
        double weight_sum = 0.0;
        double weighted_reward = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Trajectory& traj = trajectories.trajectories[i];
            const auto k = static_cast<std::size_t>(t);
            const int s = traj.states[k];
            const int a = traj.actions[k];
            if (!(behavior.prob(s, a) > 0.0)) {
                std::ostringstream msg;
                msg << "weighted_stepwise_is: behavior probability is zero at trajectory " << i
                    << ", step " << t << " (s=" << s << ", a=" << a << ")";
                throw InvalidArgument(msg.str());
            }
            weights[i] *= target.prob(s, a) / behavior.prob(s, a);
            weight_sum += weights[i];
            weighted_reward += weights[i] * traj.rewards[k];
        }
        if (weight_sum > 0.0) numerator += discount * weighted_reward / weight_sum;
        normalizer += discount;
        discount *= gamma;
    }
    return numerator / normalizer;
}

StochasticPolicy behavior_cloning(const TransitionDataset& data, Index num_states,
                                  Index num_actions) {
    if (num_states < 1 || num_actions < 1) {
        throw InvalidArgument("behavior_cloning: dimensions must be positive");
    }
    Matrix counts = Matrix::Ones(num_states, num_actions);
    for (const auto& t : data.transitions) {
        if (t.state < 0 || t.state >= num_states || t.action < 0 || t.action >= num_actions) {
            throw InvalidArgument("behavior_cloning: transition index out of range");
        }
        counts(t.state, t.action) += 1.0;
    }
    for (Index s = 0; s < num_states; ++s) counts.row(s) /= counts.row(s).sum();
    return StochasticPolicy(std::move(counts));
}

void TdConfig::validate() const {
    if (batch_size < 1) throw InvalidArgument("TdConfig: batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("TdConfig: learning_rate must be positive");
    if (num_steps < 0) throw InvalidArgument("TdConfig: num_steps must be non-negative");
    if (lr_decay_steps < 0.0) throw InvalidArgument("TdConfig: lr_decay_steps must be non-negative");
}

FunctionApprox make_td_tabular_model(Index num_states) {
    FunctionApprox model = FunctionApprox::tabular(num_states, 1);
    model.params().setOnes();
    return model;
}

TdResult td_corrections_stochastic(const TransitionDataset& data, const StochasticPolicy& target,
                                   const StochasticPolicy& behavior, FunctionApprox state_model,
                                   const TdConfig& config) {
    config.validate();
    data.validate();
    if (data.transitions.empty()) throw InvalidArgument("td_corrections_stochastic: empty dataset");
    check_policy_shape(target, data.num_states, data.num_actions, "target");
    check_policy_shape(behavior, data.num_states, data.num_actions, "behavior");
    if (state_model.num_states() != data.num_states || state_model.num_actions() != 1) {
        throw InvalidArgument("td_corrections_stochastic: model must have one output per state");
    }
    const double gamma = data.gamma;
    std::vector<double> ratios;
    ratios.reserve(data.transitions.size());
    for (const auto& t : data.transitions) {
        ratios.push_back(behavior_ratio(target, behavior, t.state, t.action, "td_corrections_stochastic"));
    }

    const bool tabular = state_model.kind() == ApproxKind::kTabular;
    Rng rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick_transition(0, data.transitions.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_initial(0, data.initial_states.size() - 1);
    AdamState adam(state_model.num_params(), 0.9, 0.999, 1e-8);
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    const double inv_b = 1.0 / static_cast<double>(batch_size);

    std::vector<StateAction> current(batch_size);
    std::vector<StateAction> next(batch_size);
    std::vector<StateAction> initial(batch_size);
    std::vector<double> rho(batch_size);
    double variance_sum = 0.0;
    for (Index step = 1; step <= config.num_steps; ++step) {
        for (std::size_t i = 0; i < batch_size; ++i) {
            const std::size_t k = pick_transition(rng);
            const Transition& t = data.transitions[k];
            current[i] = {t.state, 0};
            next[i] = {t.next_state, 0};
            rho[i] = ratios[k];
        }
        for (std::size_t j = 0; j < batch_size; ++j) {
            initial[j] = {data.initial_states[pick_initial(rng)], 0};
        }
        const Vector w = state_model.evaluate(current);
        Vector forward(static_cast<Index>(batch_size));
        double mean = 0.0;
        double mean_sq = 0.0;
        for (std::size_t i = 0; i < batch_size; ++i) {
            const double c = gamma * rho[i] * std::max(w(static_cast<Index>(i)), 0.0);
            forward(static_cast<Index>(i)) = c * inv_b;
            mean += c * inv_b;
            mean_sq += c * c * inv_b;
        }
        variance_sum += std::max(mean_sq - mean * mean, 0.0);

        Vector grad = Vector::Zero(state_model.num_params());
        state_model.backward(initial, Vector::Constant(static_cast<Index>(batch_size), (1.0 - gamma) * inv_b), grad);
        state_model.backward(current, -w * inv_b, grad);
        state_model.backward(next, forward, grad);
        if (!grad.allFinite()) {
            std::ostringstream msg;
            msg << "td_corrections_stochastic: non-finite update at step " << step
                << " (|w params| = " << state_model.params().norm() << ")";
            throw NumericalError(msg.str());
        }
        double lr = config.learning_rate;
        if (config.lr_decay_steps > 0.0) lr /= 1.0 + static_cast<double>(step - 1) / config.lr_decay_steps;
        if (config.optimizer == OptimizerKind::kAdam) {
            state_model.params() += lr * adam.direction(grad);
        } else {
            state_model.params() += lr * grad;
        }
        if (tabular) state_model.params() = state_model.params().cwiseMax(0.0);
    }

    TdResult result{std::move(state_model), {}, 0.0, 0.0};
    result.update_variance =
        config.num_steps > 0 ? variance_sum / static_cast<double>(config.num_steps) : 0.0;
    const Vector w_state = result.state_model.table().cwiseMax(0.0);
    const Index nA = data.num_actions;
    CorrectionTable& table = result.corrections;
    table.values = Vector::Constant(data.num_states * nA, std::numeric_limits<double>::quiet_NaN());
    table.defined.assign(static_cast<std::size_t>(data.num_states * nA), false);
    table.state_values = w_state;
    double total = 0.0;
    for (std::size_t k = 0; k < data.transitions.size(); ++k) {
        const Transition& t = data.transitions[k];
        const Index pair = t.state * nA + t.action;
        const double w = w_state(t.state) * ratios[k];
        table.values(pair) = w;
        table.defined[static_cast<std::size_t>(pair)] = true;
        total += w * t.reward;
    }
    result.estimate = total / static_cast<double>(data.transitions.size());
    return result;
}

}  // namespace dualdice
