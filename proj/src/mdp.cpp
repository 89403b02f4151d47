#include "dualdice/mdp.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dualdice {

namespace {

constexpr double kProbTolerance = 1e-10;

std::string pair_name(Index s, Index a) {
    std::ostringstream out;
    out << "(s=" << s << ", a=" << a << ")";
    return out.str();
}

SparseMatrix identity(Index n) {
    SparseMatrix eye(n, n);
    eye.setIdentity();
    return eye;
}

Vector lu_solve(const SparseMatrix& system, const Vector& rhs, const char* what) {
    Eigen::SparseMatrix<double> col_major = system;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(col_major);
    lu.factorize(col_major);
    if (lu.info() != Eigen::Success) {
        throw NumericalError(std::string(what) + ": LU factorization failed");
    }
    Vector x = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !x.allFinite()) {
        throw NumericalError(std::string(what) + ": LU solve failed");
    }
    return x;
}

Vector dirichlet_ones(Index n, Rng& rng) {
    std::exponential_distribution<double> expo(1.0);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = expo(rng);
    return v / v.sum();
}

}  // namespace

TabularMdp::TabularMdp(Index num_states, Index num_actions, SparseMatrix transition,
                       Matrix reward_mean, Matrix reward_noise, Vector initial_dist, double gamma)
    : num_states_(num_states),
      num_actions_(num_actions),
      transition_(std::move(transition)),
      reward_mean_(std::move(reward_mean)),
      reward_noise_(std::move(reward_noise)),
      initial_dist_(std::move(initial_dist)),
      gamma_(gamma) {
    if (num_states_ < 1 || num_actions_ < 1) {
        throw InvalidArgument("TabularMdp: need at least one state and one action");
    }
    if (transition_.rows() != num_pairs() || transition_.cols() != num_states_) {
        throw InvalidArgument("TabularMdp: transition must be (|S|*|A|) x |S|");
    }
    if (reward_mean_.rows() != num_states_ || reward_mean_.cols() != num_actions_ ||
        reward_noise_.rows() != num_states_ || reward_noise_.cols() != num_actions_) {
        throw InvalidArgument("TabularMdp: reward tables must be |S| x |A|");
    }
    if (initial_dist_.size() != num_states_) {
        throw InvalidArgument("TabularMdp: initial distribution must have |S| entries");
    }
    if (!(gamma_ >= 0.0 && gamma_ < 1.0)) {
        throw InvalidArgument("TabularMdp: gamma must lie in [0, 1)");
    }
    transition_.makeCompressed();
    for (Index row = 0; row < num_pairs(); ++row) {
        double total = 0.0;
        for (SparseMatrix::InnerIterator it(transition_, row); it; ++it) {
            if (it.value() < 0.0) {
                throw InvalidArgument("TabularMdp: negative transition probability at " +
                                      pair_name(row / num_actions_, row % num_actions_));
            }
            total += it.value();
        }
        if (std::abs(total - 1.0) > kProbTolerance) {
            throw InvalidArgument("TabularMdp: transition row " +
                                  pair_name(row / num_actions_, row % num_actions_) +
                                  " does not sum to 1");
        }
    }
    if ((initial_dist_.array() < 0.0).any() ||
        std::abs(initial_dist_.sum() - 1.0) > kProbTolerance) {
        throw InvalidArgument("TabularMdp: initial distribution is not a probability vector");
    }
    if ((reward_noise_.array() < 0.0).any()) {
        throw InvalidArgument("TabularMdp: reward noise must be non-negative");
    }
}

Vector TabularMdp::reward_vector() const {
    Vector r(num_pairs());
    for (Index s = 0; s < num_states_; ++s)
        for (Index a = 0; a < num_actions_; ++a) r(pair_index(s, a)) = reward_mean_(s, a);
    return r;
}

TabularMdp TabularMdp::with_gamma(double gamma) const {
    return TabularMdp(num_states_, num_actions_, transition_, reward_mean_, reward_noise_,
                      initial_dist_, gamma);
}

StochasticPolicy::StochasticPolicy(Matrix probs) : probs_(std::move(probs)) {
    if (probs_.rows() < 1 || probs_.cols() < 1) {
        throw InvalidArgument("StochasticPolicy: empty table");
    }
    for (Index s = 0; s < probs_.rows(); ++s) {
        if ((probs_.row(s).array() < 0.0).any() ||
            std::abs(probs_.row(s).sum() - 1.0) > kProbTolerance) {
            throw InvalidArgument("StochasticPolicy: row " + std::to_string(s) +
                                  " is not a distribution");
        }
    }
}

StochasticPolicy StochasticPolicy::uniform(Index num_states, Index num_actions) {
    return StochasticPolicy(Matrix::Constant(num_states, num_actions, 1.0 / num_actions));
}

StochasticPolicy StochasticPolicy::deterministic(std::span<const int> actions,
                                                 Index num_actions) {
    Matrix probs = Matrix::Zero(static_cast<Index>(actions.size()), num_actions);
    for (std::size_t s = 0; s < actions.size(); ++s) {
        if (actions[s] < 0 || actions[s] >= num_actions) {
            throw InvalidArgument("StochasticPolicy: action out of range");
        }
        probs(static_cast<Index>(s), actions[s]) = 1.0;
    }
    return StochasticPolicy(std::move(probs));
}

int StochasticPolicy::sample(Index s, Rng& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng);
    const Index n = probs_.cols();
    int last_positive = 0;
    for (Index a = 0; a < n; ++a) {
        const double p = probs_(s, a);
        if (p <= 0.0) continue;
        last_positive = static_cast<int>(a);
        if (u < p) return static_cast<int>(a);
        u -= p;
    }
    return last_positive;
}

void TransitionDataset::validate() const {
    if (num_states < 1 || num_actions < 1) {
        throw InvalidArgument("TransitionDataset: dimensions must be positive");
    }
    auto in_range = [&](int s, int a) { return s >= 0 && s < num_states && a >= 0 && a < num_actions; };
    for (std::size_t i = 0; i < transitions.size(); ++i) {
        const auto& t = transitions[i];
        if (!in_range(t.state, t.action) || !in_range(t.next_state, 0)) {
            throw InvalidArgument("TransitionDataset: transition " + std::to_string(i) +
                                  " has an out-of-range index");
        }
        if (!std::isfinite(t.reward)) {
            throw InvalidArgument("TransitionDataset: transition " + std::to_string(i) +
                                  " has a non-finite reward");
        }
    }
    for (int s : initial_states) {
        if (!in_range(s, 0)) throw InvalidArgument("TransitionDataset: initial state out of range");
    }
    if (!transitions.empty() && initial_states.empty()) {
        throw InvalidArgument("TransitionDataset: transitions without initial states");
    }
}

void TrajectoryDataset::validate() const {
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& tr = trajectories[i];
        if (static_cast<Index>(tr.actions.size()) != horizon ||
            static_cast<Index>(tr.rewards.size()) != horizon ||
            static_cast<Index>(tr.states.size()) != horizon + 1) {
            throw InvalidArgument("TrajectoryDataset: trajectory " + std::to_string(i) +
                                  " does not have horizon " + std::to_string(horizon));
        }
        for (int s : tr.states)
            if (s < 0 || s >= num_states) throw InvalidArgument("TrajectoryDataset: state out of range");
        for (int a : tr.actions)
            if (a < 0 || a >= num_actions) throw InvalidArgument("TrajectoryDataset: action out of range");
    }
}

TransitionDataset TrajectoryDataset::to_transitions() const {
    TransitionDataset data;
    data.num_states = num_states;
    data.num_actions = num_actions;
    data.gamma = gamma;
    data.transitions.reserve(trajectories.size() * static_cast<std::size_t>(horizon));
    data.initial_states.reserve(trajectories.size());
    for (const auto& tr : trajectories) {
        data.initial_states.push_back(tr.states.front());
        for (Index t = 0; t < horizon; ++t) {
            data.transitions.push_back({tr.states[t], tr.actions[t], tr.rewards[t], tr.states[t + 1]});
        }
    }
    return data;
}

TrajectoryDataset TrajectoryDataset::prefix(std::size_t count) const {
    TrajectoryDataset out = *this;
    out.trajectories.resize(std::min(count, trajectories.size()));
    return out;
}

void check_compatible(const TabularMdp& mdp, const StochasticPolicy& policy) {
    if (policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions()) {
        throw InvalidArgument("policy shape does not match the MDP");
    }
}

SparseMatrix pair_transition_matrix(const TabularMdp& mdp, const StochasticPolicy& policy) {
    check_compatible(mdp, policy);
    const Index nA = mdp.num_actions();
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(static_cast<std::size_t>(mdp.transition().nonZeros() * nA));
    for (Index row = 0; row < mdp.num_pairs(); ++row) {
        for (SparseMatrix::InnerIterator it(mdp.transition(), row); it; ++it) {
            const Index next = it.col();
            for (Index a = 0; a < nA; ++a) {
                const double p = policy.prob(next, a);
                if (p > 0.0) entries.emplace_back(row, next * nA + a, it.value() * p);
            }
        }
    }
    SparseMatrix out(mdp.num_pairs(), mdp.num_pairs());
    out.setFromTriplets(entries.begin(), entries.end());
    return out;
}

SparseMatrix state_transition_matrix(const TabularMdp& mdp, const StochasticPolicy& policy) {
    check_compatible(mdp, policy);
    std::vector<Eigen::Triplet<double>> entries;
    for (Index s = 0; s < mdp.num_states(); ++s) {
        for (Index a = 0; a < mdp.num_actions(); ++a) {
            const double p = policy.prob(s, a);
            if (p <= 0.0) continue;
            for (SparseMatrix::InnerIterator it(mdp.transition(), mdp.pair_index(s, a)); it; ++it) {
                entries.emplace_back(s, it.col(), p * it.value());
            }
        }
    }
    SparseMatrix out(mdp.num_states(), mdp.num_states());
    out.setFromTriplets(entries.begin(), entries.end());  // duplicates are summed
    return out;
}

Vector initial_pair_distribution(const Vector& initial_dist, const StochasticPolicy& policy) {
    const Index nA = policy.num_actions();
    Vector out(initial_dist.size() * nA);
    for (Index s = 0; s < initial_dist.size(); ++s)
        for (Index a = 0; a < nA; ++a) out(s * nA + a) = initial_dist(s) * policy.prob(s, a);
    return out;
}

StateActionDistribution stationary_distribution(const TabularMdp& mdp,
                                                const StochasticPolicy& policy) {
    const double gamma = mdp.gamma();
    const SparseMatrix p_pi = pair_transition_matrix(mdp, policy);
    const SparseMatrix system = identity(mdp.num_pairs()) - gamma * SparseMatrix(p_pi.transpose());
    const Vector rhs = (1.0 - gamma) * initial_pair_distribution(mdp.initial_dist(), policy);
    return {lu_solve(system, rhs, "stationary_distribution")};
}

double policy_value_exact(const TabularMdp& mdp, const StochasticPolicy& policy) {
    return stationary_distribution(mdp, policy).probs.dot(mdp.reward_vector());
}

double policy_value_via_q(const TabularMdp& mdp, const StochasticPolicy& policy) {
    const SparseMatrix p_pi = pair_transition_matrix(mdp, policy);
    const SparseMatrix system = identity(mdp.num_pairs()) - mdp.gamma() * p_pi;
    const Vector q = lu_solve(system, mdp.reward_vector(), "policy_value_via_q");
    return (1.0 - mdp.gamma()) * initial_pair_distribution(mdp.initial_dist(), policy).dot(q);
}

double flow_residual(const TabularMdp& mdp, const StochasticPolicy& policy,
                     const StateActionDistribution& dist) {
    const SparseMatrix p_pi = pair_transition_matrix(mdp, policy);
    const Vector rhs = (1.0 - mdp.gamma()) * initial_pair_distribution(mdp.initial_dist(), policy) +
                       mdp.gamma() * (p_pi.transpose() * dist.probs);
    return (dist.probs - rhs).lpNorm<Eigen::Infinity>();
}

StateActionDistribution rollout_occupancy(const TabularMdp& mdp, const StochasticPolicy& policy,
                                          Index horizon) {
    if (horizon < 1) throw InvalidArgument("rollout_occupancy: horizon must be positive");
    const SparseMatrix p_pi = pair_transition_matrix(mdp, policy);
    const SparseMatrix p_pi_t = p_pi.transpose();
    Vector marginal = initial_pair_distribution(mdp.initial_dist(), policy);
    Vector total = Vector::Zero(mdp.num_pairs());
    for (Index t = 0; t < horizon; ++t) {
        total += marginal;
        marginal = p_pi_t * marginal;
    }
    return {total / static_cast<double>(horizon)};
}

double sample_reward(const TabularMdp& mdp, Index s, Index a, Rng& rng) {
    const double mean = mdp.reward_mean()(s, a);
    const double noise = mdp.reward_noise()(s, a);
    if (noise <= 0.0) return mean;
    std::uniform_real_distribution<double> u(-noise, noise);
    return mean + u(rng);
}

int sample_next_state(const TabularMdp& mdp, Index s, Index a, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng);
    int last = 0;
    for (SparseMatrix::InnerIterator it(mdp.transition(), mdp.pair_index(s, a)); it; ++it) {
        if (it.value() <= 0.0) continue;
        last = static_cast<int>(it.col());
        if (u < it.value()) return last;
        u -= it.value();
    }
    return last;
}

int sample_initial_state(const TabularMdp& mdp, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng);
    const Vector& beta = mdp.initial_dist();
    int last = 0;
    for (Index s = 0; s < beta.size(); ++s) {
        if (beta(s) <= 0.0) continue;
        last = static_cast<int>(s);
        if (u < beta(s)) return last;
        u -= beta(s);
    }
    return last;
}

TrajectoryDataset sample_trajectories(const TabularMdp& mdp, const StochasticPolicy& policy,
                                      Index num_trajectories, Index horizon, std::uint64_t seed) {
    check_compatible(mdp, policy);
    if (num_trajectories < 1 || horizon < 1) {
        throw InvalidArgument("sample_trajectories: need at least one trajectory and one step");
    }
    TrajectoryDataset out;
    out.num_states = mdp.num_states();
    out.num_actions = mdp.num_actions();
    out.gamma = mdp.gamma();
    out.horizon = horizon;
    out.trajectories.resize(static_cast<std::size_t>(num_trajectories));
    for (Index i = 0; i < num_trajectories; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(i)};
        Rng rng(seq);
        Trajectory& tr = out.trajectories[static_cast<std::size_t>(i)];
        tr.states.reserve(static_cast<std::size_t>(horizon + 1));
        tr.actions.reserve(static_cast<std::size_t>(horizon));
        tr.rewards.reserve(static_cast<std::size_t>(horizon));
        int s = sample_initial_state(mdp, rng);
        tr.states.push_back(s);
        for (Index t = 0; t < horizon; ++t) {
            const int a = policy.sample(s, rng);
            const double r = sample_reward(mdp, s, a, rng);
            s = sample_next_state(mdp, s, a, rng);
            tr.actions.push_back(a);
            tr.rewards.push_back(r);
            tr.states.push_back(s);
        }
    }
    return out;
}

TransitionDataset sample_dataset(const TabularMdp& mdp, const StochasticPolicy& policy,
                                 Index num_trajectories, Index horizon, std::uint64_t seed) {
    TransitionDataset data =
        sample_trajectories(mdp, policy, num_trajectories, horizon, seed).to_transitions();
    std::ostringstream meta;
    meta << "rollouts=" << num_trajectories << " horizon=" << horizon << " seed=" << seed;
    data.metadata = meta.str();
    return data;
}

StochasticPolicy mixture_policy(const StochasticPolicy& base, double uniform_weight) {
    if (!(uniform_weight >= 0.0 && uniform_weight <= 1.0)) {
        throw InvalidArgument("mixture_policy: uniform weight must lie in [0, 1]");
    }
    const double uniform_mass = uniform_weight / static_cast<double>(base.num_actions());
    Matrix probs = ((1.0 - uniform_weight) * base.probs()).array() + uniform_mass;
    return StochasticPolicy(std::move(probs));
}

namespace {

Matrix q_from_values(const TabularMdp& mdp, const Vector& values) {
    const Vector backup = mdp.transition() * values;
    Matrix q(mdp.num_states(), mdp.num_actions());
    for (Index s = 0; s < mdp.num_states(); ++s)
        for (Index a = 0; a < mdp.num_actions(); ++a)
            q(s, a) = mdp.reward_mean()(s, a) + mdp.gamma() * backup(mdp.pair_index(s, a));
    return q;
}

std::vector<int> greedy_actions(const Matrix& q) {
    std::vector<int> actions(static_cast<std::size_t>(q.rows()));
    for (Index s = 0; s < q.rows(); ++s) {
        const double best = q.row(s).maxCoeff();
        const double tie = 1e-9 * std::max(1.0, std::abs(best));
        Index a = 0;
        while (q(s, a) < best - tie) ++a;
        actions[static_cast<std::size_t>(s)] = static_cast<int>(a);
    }
    return actions;
}

}  // namespace

Vector optimal_values(const TabularMdp& mdp) {
    // Policy iteration to get close, then value iteration to certify the residual.
    const Index nS = mdp.num_states();
    Vector values = Vector::Zero(nS);
    std::vector<int> policy(static_cast<std::size_t>(nS), 0);
    for (int iter = 0; iter < 200; ++iter) {
        const StochasticPolicy pi = StochasticPolicy::deterministic(policy, mdp.num_actions());
        const SparseMatrix p = state_transition_matrix(mdp, pi);
        Vector r(nS);
        for (Index s = 0; s < nS; ++s) r(s) = mdp.reward_mean()(s, policy[static_cast<std::size_t>(s)]);
        values = lu_solve(identity(nS) - mdp.gamma() * p, r, "optimal_values");
        const Matrix q = q_from_values(mdp, values);
        const std::vector<int> greedy = greedy_actions(q);
        bool stable = true;
        for (Index s = 0; s < nS; ++s) {
            const auto i = static_cast<std::size_t>(s);
            // Only switch on strict improvement to avoid cycling between ties.
            if (q(s, greedy[i]) > q(s, policy[i]) + 1e-12) {
                policy[i] = greedy[i];
                stable = false;
            }
        }
        if (stable) break;
    }
    for (int iter = 0; iter < 100000; ++iter) {
        const Vector next = q_from_values(mdp, values).rowwise().maxCoeff();
        const double residual = (next - values).lpNorm<Eigen::Infinity>();
        values = next;
        if (residual < 1e-10) return values;
    }
    throw NumericalError("optimal_values: value iteration did not converge");
}

StochasticPolicy optimal_policy(const TabularMdp& mdp) {
    const Vector values = optimal_values(mdp);
    return StochasticPolicy::deterministic(greedy_actions(q_from_values(mdp, values)),
                                           mdp.num_actions());
}

TabularMdp random_mdp(Index num_states, Index num_actions, double gamma, std::uint64_t seed) {
    Rng rng(seed);
    const Index n_pairs = num_states * num_actions;
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(static_cast<std::size_t>(n_pairs * num_states));
    for (Index row = 0; row < n_pairs; ++row) {
        const Vector p = dirichlet_ones(num_states, rng);
        for (Index s = 0; s < num_states; ++s) entries.emplace_back(row, s, p(s));
    }
    SparseMatrix transition(n_pairs, num_states);
    transition.setFromTriplets(entries.begin(), entries.end());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix reward(num_states, num_actions);
    for (Index s = 0; s < num_states; ++s)
        for (Index a = 0; a < num_actions; ++a) reward(s, a) = unit(rng);
    Vector beta = dirichlet_ones(num_states, rng);
    return TabularMdp(num_states, num_actions, std::move(transition), std::move(reward),
                      Matrix::Zero(num_states, num_actions), std::move(beta), gamma);
}

StochasticPolicy random_policy(Index num_states, Index num_actions, std::uint64_t seed,
                               double floor) {
    Rng rng(seed);
    Matrix probs(num_states, num_actions);
    for (Index s = 0; s < num_states; ++s) {
        const Vector row = dirichlet_ones(num_actions, rng);
        probs.row(s) = ((1.0 - floor) * row.array() + floor / num_actions).matrix().transpose();
    }
    return StochasticPolicy(std::move(probs));
}

}  // namespace dualdice
