#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualdice {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Row-major so that a (state, action) row can be walked when sampling.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// Thrown on malformed inputs: shape mismatches, invalid probabilities,
/// out-of-range indices.
class InvalidArgument : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical routine cannot produce an answer.
class NumericalError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct StateAction {
    int state = 0;
    int action = 0;
    friend bool operator==(const StateAction&, const StateAction&) = default;
};

/**
 * Finite discounted MDP.
 *
 * Transitions are stored as a sparse (|S|*|A|) x |S| matrix whose row
 * `s * |A| + a` holds T(. | s, a). Pair-indexed vectors throughout the
 * library use the same flattening.
 */
class TabularMdp {
   public:
    TabularMdp(Index num_states, Index num_actions, SparseMatrix transition, Matrix reward_mean,
               Matrix reward_noise, Vector initial_dist, double gamma);

    Index num_states() const { return num_states_; }
    Index num_actions() const { return num_actions_; }
    Index num_pairs() const { return num_states_ * num_actions_; }
    Index pair_index(Index s, Index a) const { return s * num_actions_ + a; }

    const SparseMatrix& transition() const { return transition_; }
    /// |S| x |A|
    const Matrix& reward_mean() const { return reward_mean_; }
    /// Half-width of the uniform reward noise, |S| x |A|.
    const Matrix& reward_noise() const { return reward_noise_; }
    const Vector& initial_dist() const { return initial_dist_; }
    double gamma() const { return gamma_; }

    /// Mean rewards flattened over pairs.
    Vector reward_vector() const;

    /// Copy with a different discount.
    TabularMdp with_gamma(double gamma) const;

   private:
    Index num_states_;
    Index num_actions_;
    SparseMatrix transition_;
    Matrix reward_mean_;
    Matrix reward_noise_;
    Vector initial_dist_;
    double gamma_;
};

/// pi(a|s) as an |S| x |A| table.
class StochasticPolicy {
   public:
    explicit StochasticPolicy(Matrix probs);

    static StochasticPolicy uniform(Index num_states, Index num_actions);
    static StochasticPolicy deterministic(std::span<const int> actions, Index num_actions);

    Index num_states() const { return probs_.rows(); }
    Index num_actions() const { return probs_.cols(); }
    double prob(Index s, Index a) const { return probs_(s, a); }
    const Matrix& probs() const { return probs_; }

    int sample(Index s, Rng& rng) const;

   private:
    Matrix probs_;
};

/// Discounted occupancy over pairs, flattened with the TabularMdp layout.
struct StateActionDistribution {
    Vector probs;
};

struct Transition {
    int state = 0;
    int action = 0;
    double reward = 0.0;
    int next_state = 0;
};

/**
 * Logged transitions plus sampled initial states. This is everything an
 * estimator gets to see; `metadata` is free text for humans.
 */
struct TransitionDataset {
    Index num_states = 0;
    Index num_actions = 0;
    double gamma = 0.0;
    std::vector<Transition> transitions;
    std::vector<int> initial_states;
    std::string metadata;

    void validate() const;
};

/// Fixed-horizon rollouts. states has H+1 entries, actions and rewards H.
struct Trajectory {
    std::vector<int> states;
    std::vector<int> actions;
    std::vector<double> rewards;
};

struct TrajectoryDataset {
    Index num_states = 0;
    Index num_actions = 0;
    double gamma = 0.0;
    Index horizon = 0;
    std::vector<Trajectory> trajectories;

    void validate() const;
    TransitionDataset to_transitions() const;
    /// The first `count` trajectories.
    TrajectoryDataset prefix(std::size_t count) const;
};

void check_compatible(const TabularMdp& mdp, const StochasticPolicy& policy);

/// P^pi over pairs: row (s,a), column (s',a') holds T(s'|s,a) pi(a'|s').
SparseMatrix pair_transition_matrix(const TabularMdp& mdp, const StochasticPolicy& policy);

/// P_pi over states: row s, column s' holds sum_a pi(a|s) T(s'|s,a).
SparseMatrix state_transition_matrix(const TabularMdp& mdp, const StochasticPolicy& policy);

/// beta(s) pi(a|s) flattened over pairs.
Vector initial_pair_distribution(const Vector& initial_dist, const StochasticPolicy& policy);

/**
 * Normalized discounted occupancy d^pi(s,a), the solution of
 * d = (1-gamma) beta_pi + gamma (P^pi)^T d.
 */
StateActionDistribution stationary_distribution(const TabularMdp& mdp,
                                                const StochasticPolicy& policy);

/// Per-step normalized value (1-gamma) E[sum_t gamma^t r_t] = sum d^pi R.
double policy_value_exact(const TabularMdp& mdp, const StochasticPolicy& policy);

/// Same quantity through Q^pi = (I - gamma P^pi)^{-1} r and the initial pairs.
double policy_value_via_q(const TabularMdp& mdp, const StochasticPolicy& policy);

/// Sup-norm residual of the flow equation for a candidate occupancy.
double flow_residual(const TabularMdp& mdp, const StochasticPolicy& policy,
                     const StateActionDistribution& dist);

/// Occupancy of the logged pairs under fixed-horizon rollouts:
/// the average over t < horizon of the time-t pair marginals.
StateActionDistribution rollout_occupancy(const TabularMdp& mdp, const StochasticPolicy& policy,
                                          Index horizon);

/// Draws r ~ R(s,a) (mean plus uniform noise).
double sample_reward(const TabularMdp& mdp, Index s, Index a, Rng& rng);
int sample_next_state(const TabularMdp& mdp, Index s, Index a, Rng& rng);
int sample_initial_state(const TabularMdp& mdp, Rng& rng);

/**
 * Rolls out `num_trajectories` fixed-horizon trajectories. Trajectory i is
 * driven by its own generator seeded from (seed, i), so datasets with the
 * same seed are prefixes of each other in both count and horizon.
 */
TrajectoryDataset sample_trajectories(const TabularMdp& mdp, const StochasticPolicy& policy,
                                      Index num_trajectories, Index horizon, std::uint64_t seed);

TransitionDataset sample_dataset(const TabularMdp& mdp, const StochasticPolicy& policy,
                                 Index num_trajectories, Index horizon, std::uint64_t seed);

/// (1-w) base + w uniform.
StochasticPolicy mixture_policy(const StochasticPolicy& base, double uniform_weight);

/// Greedy deterministic policy; ties go to the lowest action index.
StochasticPolicy optimal_policy(const TabularMdp& mdp);

/// Optimal state values, converged until the Bellman residual is below 1e-10.
Vector optimal_values(const TabularMdp& mdp);

/// Dense random MDP: Dirichlet(1) transitions, U[0,1] rewards, Dirichlet(1) beta.
TabularMdp random_mdp(Index num_states, Index num_actions, double gamma, std::uint64_t seed);

/// Random policy with Dirichlet(1) rows, floored so every action has positive mass.
StochasticPolicy random_policy(Index num_states, Index num_actions, std::uint64_t seed,
                               double floor = 0.05);

}  // namespace dualdice
