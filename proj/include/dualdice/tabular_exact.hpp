#pragma once

#include "dualdice/mdp.hpp"

#include <string>
#include <vector>

namespace dualdice {

/**
 * Count-based model of a transition dataset. Pair-indexed quantities follow
 * the `s * |A| + a` layout; rows of `cond_next` for unobserved pairs are empty.
 */
struct EmpiricalModel {
    Index num_states = 0;
    Index num_actions = 0;
    /// d^D over pairs, sums to 1.
    Vector weight;
    /// P(s'|s,a); (|S|*|A|) x |S|.
    SparseMatrix cond_next;
    /// Mean observed reward per pair, 0 where unobserved.
    Vector avg_reward;
    /// Empirical initial-state distribution.
    Vector init_weight;
    std::vector<bool> support_mask;

    Index num_pairs() const { return num_states * num_actions; }
    bool observed(Index pair) const { return support_mask[static_cast<std::size_t>(pair)]; }
    /// d^D marginalized over actions.
    Vector state_weight() const;
};

EmpiricalModel build_empirical_model(const TransitionDataset& data);
/// Checks the dataset against explicit dimensions first.
EmpiricalModel build_empirical_model(const TransitionDataset& data, Index num_states,
                                     Index num_actions);

/// Infinite-data model: true dynamics and rewards weighted by `data_dist`.
EmpiricalModel population_model(const TabularMdp& mdp, const StateActionDistribution& data_dist);

struct SolveDiagnostics {
    /// Backup targets (pairs or states) that never occur as observed rows.
    Index unobserved_backup_targets = 0;
    /// Initial mass on targets outside the system, dropped from the right-hand side.
    double dropped_initial_mass = 0.0;
    /// A dense least-squares fallback was needed.
    bool rank_deficient = false;
    std::vector<std::string> notes;
};

/**
 * Estimated w(s,a). Entries outside the data support are NaN and flagged
 * undefined. Statewise solvers also fill `state_values` with w(s).
 */
struct CorrectionTable {
    Vector values;
    std::vector<bool> defined;
    Vector state_values;
    SolveDiagnostics diagnostics;

    /// E_{d^D}[w] over the defined entries.
    double mean_under(const EmpiricalModel& model) const;
};

struct ExactSolveOptions {
    /// Diagonal shift applied while factorizing; iterative refinement removes its bias.
    double ridge = 1e-9;
    int refinement_steps = 4;
};

struct DualDiceExactSolution {
    /// Minimum-norm optimal nu over pairs (0 outside the system).
    Vector nu;
    CorrectionTable corrections;
};

/**
 * Exact minimizer of the zero-reward squared Bellman objective
 * J(nu) = 1/2 sum_D d(s,a) ((nu - B nu)(s,a))^2 - (1-gamma) E_{s0, a0~pi}[nu],
 * returning the residuals nu - B nu as corrections. Uses only the data and
 * the target policy.
 */
DualDiceExactSolution solve_dualdice_exact(const EmpiricalModel& model,
                                           const StochasticPolicy& target, double gamma,
                                           const ExactSolveOptions& options = {});

/**
 * State-level variant: solves for nu(s) with pi/mu folded into the backup,
 * then lifts w(s,a) = w(s) pi(a|s)/mu(a|s).
 */
CorrectionTable solve_dualdice_exact_statewise(const EmpiricalModel& model,
                                               const StochasticPolicy& target,
                                               const StochasticPolicy& behavior, double gamma,
                                               const ExactSolveOptions& options = {});

/**
 * Fixed point of the flow equation written in state corrections,
 * D_s w = (1-gamma) beta + gamma G^T D_s w, lifted by pi/mu.
 */
CorrectionTable solve_td_exact(const EmpiricalModel& model, const StochasticPolicy& target,
                               const StochasticPolicy& behavior, double gamma);

/// sum_{observed} d^D(s,a) w(s,a) r(s,a).
double ope_from_corrections(const CorrectionTable& corrections, const EmpiricalModel& model,
                            bool clip_at_zero = false);

/// d^pi / d^D on the support of `data_dist`, NaN elsewhere.
CorrectionTable true_corrections(const TabularMdp& mdp, const StochasticPolicy& target,
                                 const StateActionDistribution& data_dist);

}  // namespace dualdice
