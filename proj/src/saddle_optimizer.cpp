#include "dualdice/saddle_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dualdice {

namespace {

double clip_value(double w, std::optional<double> zeta_clip) {
    if (!zeta_clip) return w;
    return std::clamp(w, 0.0, *zeta_clip);
}

void append_target_actions(const StochasticPolicy& target, int state, std::size_t owner, bool exact,
                           Rng& rng, std::vector<StateAction>& pairs, std::vector<double>& weights,
                           std::vector<std::size_t>* owners) {
    if (exact) {
        for (Index a = 0; a < target.num_actions(); ++a) {
            const double p = target.prob(state, a);
            if (p <= 0.0) continue;
            pairs.push_back({state, static_cast<int>(a)});
            weights.push_back(p);
            if (owners) owners->push_back(owner);
        }
    } else {
        pairs.push_back({state, target.sample(state, rng)});
        weights.push_back(1.0);
        if (owners) owners->push_back(owner);
    }
}

}  // namespace

AdamState::AdamState(Index num_params, double beta1, double beta2, double epsilon)
    : m_(Vector::Zero(num_params)),
      v_(Vector::Zero(num_params)),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {}

Vector AdamState::direction(const Vector& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double m_scale = 1.0 / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const double v_scale = 1.0 / (1.0 - std::pow(beta2_, static_cast<double>(t_)));
    return ((m_ * m_scale).array() / ((v_ * v_scale).array().sqrt() + epsilon_)).matrix();
}

void Minibatch::validate() const {
    if (pairs.empty()) throw InvalidArgument("minibatch: empty batch");
    if (num_initial_samples == 0 || initial_pairs.empty()) {
        throw InvalidArgument("minibatch: no initial samples");
    }
    if (next_pairs.size() != next_weights.size() || next_pairs.size() != next_owner.size() ||
        initial_pairs.size() != initial_weights.size()) {
        throw InvalidArgument("minibatch: inconsistent sizes");
    }
    for (std::size_t owner : next_owner) {
        if (owner >= pairs.size()) throw InvalidArgument("minibatch: next owner out of range");
    }
}

Minibatch make_sampled_batch(std::span<const Transition> transitions,
                             std::span<const int> next_actions, std::span<const int> initial_states,
                             std::span<const int> initial_actions) {
    if (transitions.size() != next_actions.size() || initial_states.size() != initial_actions.size()) {
        throw InvalidArgument("make_sampled_batch: one action per state is required");
    }
    Minibatch batch;
    for (std::size_t i = 0; i < transitions.size(); ++i) {
        batch.pairs.push_back({transitions[i].state, transitions[i].action});
        batch.next_pairs.push_back({transitions[i].next_state, next_actions[i]});
        batch.next_weights.push_back(1.0);
        batch.next_owner.push_back(i);
    }
    for (std::size_t j = 0; j < initial_states.size(); ++j) {
        batch.initial_pairs.push_back({initial_states[j], initial_actions[j]});
        batch.initial_weights.push_back(1.0);
    }
    batch.num_initial_samples = initial_states.size();
    return batch;
}

LossGradient minibatch_gradient(const Minibatch& batch, const CorrectionModel& model,
                                const PenaltyFunction& penalty, double gamma) {
    batch.validate();
    const auto n = static_cast<Index>(batch.pairs.size());
    const auto n_next = static_cast<Index>(batch.next_pairs.size());
    const auto n_init = static_cast<Index>(batch.initial_pairs.size());
    const double inv_b = 1.0 / static_cast<double>(n);
    const double inv_b0 = 1.0 / static_cast<double>(batch.num_initial_samples);

    // nu is evaluated and differentiated in one pass over all of its inputs.
    std::vector<StateAction> nu_pairs;
    nu_pairs.reserve(static_cast<std::size_t>(n + n_next + n_init));
    nu_pairs.insert(nu_pairs.end(), batch.pairs.begin(), batch.pairs.end());
    nu_pairs.insert(nu_pairs.end(), batch.next_pairs.begin(), batch.next_pairs.end());
    nu_pairs.insert(nu_pairs.end(), batch.initial_pairs.begin(), batch.initial_pairs.end());
    const Vector nu_all = model.nu.evaluate(nu_pairs);
    const Vector zeta = model.zeta.evaluate(batch.pairs);

    Vector backup = Vector::Zero(n);
    for (Index k = 0; k < n_next; ++k) {
        backup(static_cast<Index>(batch.next_owner[static_cast<std::size_t>(k)])) +=
            batch.next_weights[static_cast<std::size_t>(k)] * nu_all(n + k);
    }
    const Vector residual = nu_all.head(n) - gamma * backup;

    LossGradient out;
    double loss = 0.0;
    Vector d_zeta(n);
    Vector d_nu(n + n_next + n_init);
    for (Index i = 0; i < n; ++i) {
        loss += residual(i) * zeta(i) - penalty.conjugate(zeta(i));
        d_zeta(i) = (residual(i) - penalty.conjugate_derivative(zeta(i))) * inv_b;
        d_nu(i) = zeta(i) * inv_b;
    }
    for (Index k = 0; k < n_next; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        d_nu(n + k) = -gamma * batch.next_weights[ks] * zeta(static_cast<Index>(batch.next_owner[ks])) * inv_b;
    }
    double init_term = 0.0;
    for (Index j = 0; j < n_init; ++j) {
        const double w = batch.initial_weights[static_cast<std::size_t>(j)];
        init_term += w * nu_all(n + n_next + j);
        d_nu(n + n_next + j) = -(1.0 - gamma) * w * inv_b0;
    }
    out.loss = loss * inv_b - (1.0 - gamma) * init_term * inv_b0;

    out.nu = Vector::Zero(model.nu.num_params());
    out.zeta = Vector::Zero(model.zeta.num_params());
    model.nu.backward(nu_pairs, d_nu, out.nu);
    model.zeta.backward(batch.pairs, d_zeta, out.zeta);
    return out;
}

double minibatch_loss(const Minibatch& batch, const CorrectionModel& model,
                      const PenaltyFunction& penalty, double gamma) {
    batch.validate();
    const Vector nu_sa = model.nu.evaluate(batch.pairs);
    const Vector zeta = model.zeta.evaluate(batch.pairs);
    const Vector nu_next = model.nu.evaluate(batch.next_pairs);
    const Vector nu_init = model.nu.evaluate(batch.initial_pairs);
    Vector backup = Vector::Zero(nu_sa.size());
    for (std::size_t k = 0; k < batch.next_pairs.size(); ++k) {
        backup(static_cast<Index>(batch.next_owner[k])) += batch.next_weights[k] * nu_next(static_cast<Index>(k));
    }
    double loss = 0.0;
    for (Index i = 0; i < nu_sa.size(); ++i) {
        loss += (nu_sa(i) - gamma * backup(i)) * zeta(i) - penalty.conjugate(zeta(i));
    }
    loss /= static_cast<double>(nu_sa.size());
    double init_term = 0.0;
    for (Index j = 0; j < nu_init.size(); ++j) {
        init_term += batch.initial_weights[static_cast<std::size_t>(j)] * nu_init(j);
    }
    return loss - (1.0 - gamma) * init_term / static_cast<double>(batch.num_initial_samples);
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "sgd") return OptimizerKind::kSgd;
    if (name == "adam") return OptimizerKind::kAdam;
    throw InvalidArgument("unknown optimizer '" + name + "' (sgd, adam)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be at least 1");
    if (!(lr_nu > 0.0) || !(lr_zeta > 0.0)) {
        throw InvalidArgument("TrainConfig: learning rates must be positive");
    }
    if (num_steps < 0) throw InvalidArgument("TrainConfig: num_steps must be non-negative");
    if (!(penalty_p > 1.0)) throw InvalidArgument("TrainConfig: penalty_p must exceed 1");
    if (lr_decay_steps < 0.0) throw InvalidArgument("TrainConfig: lr_decay_steps must be non-negative");
    if (zeta_clip && !(*zeta_clip > 0.0)) throw InvalidArgument("TrainConfig: zeta_clip must be positive");
    if (eval_every < 0) throw InvalidArgument("TrainConfig: eval_every must be non-negative");
}

TrainingDiverged::TrainingDiverged(Index step, double nu_norm, double zeta_norm)
    : NumericalError([&] {
          std::ostringstream msg;
          msg << "training diverged at step " << step << " (|nu| = " << nu_norm
              << ", |zeta| = " << zeta_norm << ")";
          return msg.str();
      }()),
      step_(step) {}

TrainResult train(const TransitionDataset& data, const StochasticPolicy& target,
                  CorrectionModel model, const TrainConfig& config,
                  std::optional<double> true_value) {
    config.validate();
    data.validate();
    if (data.transitions.empty()) throw InvalidArgument("train: empty dataset");
    if (target.num_states() != data.num_states || target.num_actions() != data.num_actions) {
        throw InvalidArgument("train: target policy does not match the dataset");
    }
    if (model.nu.num_states() != data.num_states || model.nu.num_actions() != data.num_actions) {
        throw InvalidArgument("train: model does not match the dataset");
    }
    const PenaltyFunction f = penalty(config.penalty_p);
    const double gamma = data.gamma;
    Rng rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick_transition(0, data.transitions.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_initial(0, data.initial_states.size() - 1);
    AdamState adam_nu(model.nu.num_params(), config.adam_beta1, config.adam_beta2, config.adam_epsilon);
    AdamState adam_zeta(model.zeta.num_params(), config.adam_beta1, config.adam_beta2,
                        config.adam_epsilon);

    std::vector<TracePoint> trace;
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    Minibatch batch;
    for (Index step = 1; step <= config.num_steps; ++step) {
        batch.pairs.clear();
        batch.next_pairs.clear();
        batch.next_weights.clear();
        batch.next_owner.clear();
        batch.initial_pairs.clear();
        batch.initial_weights.clear();
        for (std::size_t i = 0; i < batch_size; ++i) {
            const Transition& t = data.transitions[pick_transition(rng)];
            batch.pairs.push_back({t.state, t.action});
            append_target_actions(target, t.next_state, i, config.exact_target_expectation, rng,
                                  batch.next_pairs, batch.next_weights, &batch.next_owner);
        }
        for (std::size_t j = 0; j < batch_size; ++j) {
            const int s0 = data.initial_states[pick_initial(rng)];
            append_target_actions(target, s0, j, config.exact_target_expectation, rng,
                                  batch.initial_pairs, batch.initial_weights, nullptr);
        }
        batch.num_initial_samples = batch_size;

        const LossGradient g = minibatch_gradient(batch, model, f, gamma);
        if (!std::isfinite(g.loss) || !g.nu.allFinite() || !g.zeta.allFinite()) {
            throw TrainingDiverged(step, model.nu.params().norm(), model.zeta.params().norm());
        }
        double lr_nu = config.lr_nu;
        double lr_zeta = config.lr_zeta;
        if (config.lr_decay_steps > 0.0) {
            const double decay = 1.0 + static_cast<double>(step - 1) / config.lr_decay_steps;
            lr_nu /= decay;
            lr_zeta /= decay;
        }
        if (config.optimizer == OptimizerKind::kAdam) {
            model.nu.params() -= lr_nu * adam_nu.direction(g.nu);
            model.zeta.params() += lr_zeta * adam_zeta.direction(g.zeta);
        } else {
            model.nu.params() -= lr_nu * g.nu;
            model.zeta.params() += lr_zeta * g.zeta;
        }
        if (!model.nu.params().allFinite() || !model.zeta.params().allFinite()) {
            throw TrainingDiverged(step, model.nu.params().norm(), model.zeta.params().norm());
        }
        if (config.eval_every > 0 && step % config.eval_every == 0) {
            trace.push_back({step, g.loss, estimate_policy_value(model, data, config.zeta_clip),
                                    true_value.value_or(std::numeric_limits<double>::quiet_NaN())});
        }
    }
    return TrainResult{std::move(model), std::move(trace)};
}

Vector corrections_from_model(const CorrectionModel& model, std::span<const StateAction> pairs,
                              std::optional<double> zeta_clip) {
    Vector w = model.zeta.evaluate(pairs);
    for (Index i = 0; i < w.size(); ++i) w(i) = clip_value(w(i), zeta_clip);
    return w;
}

CorrectionTable correction_table(const CorrectionModel& model, const EmpiricalModel& empirical,
                                 std::optional<double> zeta_clip) {
    const Vector zeta = model.zeta.table();
    CorrectionTable table;
    table.values = Vector::Constant(empirical.num_pairs(), std::numeric_limits<double>::quiet_NaN());
    table.defined.assign(static_cast<std::size_t>(empirical.num_pairs()), false);
    for (Index p = 0; p < empirical.num_pairs(); ++p) {
        if (!empirical.observed(p)) continue;
        table.values(p) = clip_value(zeta(p), zeta_clip);
        table.defined[static_cast<std::size_t>(p)] = true;
    }
    return table;
}

double estimate_policy_value(const CorrectionModel& model, const TransitionDataset& data,
                             std::optional<double> zeta_clip) {
    if (data.transitions.empty()) throw InvalidArgument("estimate_policy_value: empty dataset");
    const Vector zeta = model.zeta.table();
    const Index nA = data.num_actions;
    double total = 0.0;
    for (const auto& t : data.transitions) {
        total += clip_value(zeta(t.state * nA + t.action), zeta_clip) * t.reward;
    }
    return total / static_cast<double>(data.transitions.size());
}

namespace {

/// nu(s,a) - gamma sum_{s'} P(s'|s,a) sum_{a'} pi(a'|s') nu(s',a') over pairs.
Vector bellman_residual(const Vector& nu, const EmpiricalModel& model,
                        const StochasticPolicy& target, double gamma) {
    const Index nA = model.num_actions;
    Vector next_value(model.num_states);
    for (Index s = 0; s < model.num_states; ++s) {
        next_value(s) = target.probs().row(s).dot(nu.segment(s * nA, nA));
    }
    return nu - gamma * (model.cond_next * next_value);
}

}  // namespace

double primal_objective(const Vector& nu_table, const EmpiricalModel& model,
                        const StochasticPolicy& target, double gamma, const PenaltyFunction& penalty) {
    if (nu_table.size() != model.num_pairs()) {
        throw InvalidArgument("primal_objective: nu table does not match the model");
    }
    const Vector residual = bellman_residual(nu_table, model, target, gamma);
    double total = 0.0;
    for (Index p = 0; p < model.num_pairs(); ++p) {
        if (model.observed(p)) total += model.weight(p) * penalty.value(residual(p));
    }
    const Vector init_pairs = initial_pair_distribution(model.init_weight, target);
    return total - (1.0 - gamma) * init_pairs.dot(nu_table);
}

double kkt_residual(const CorrectionModel& model, const EmpiricalModel& empirical,
                    const StochasticPolicy& target, double gamma, const PenaltyFunction& penalty) {
    const Vector residual = bellman_residual(model.nu.table(), empirical, target, gamma);
    const Vector zeta = model.zeta.table();
    double total = 0.0;
    for (Index p = 0; p < empirical.num_pairs(); ++p) {
        if (!empirical.observed(p)) continue;
        total += empirical.weight(p) * std::abs(penalty.conjugate_derivative(zeta(p)) - residual(p));
    }
    return total;
}

}  // namespace dualdice
