#include "dualdice/tabular_exact.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace dualdice {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using ColMajorSparse = Eigen::SparseMatrix<double>;

void check_policy(const EmpiricalModel& model, const StochasticPolicy& policy, const char* what) {
    if (policy.num_states() != model.num_states || policy.num_actions() != model.num_actions) {
        throw InvalidArgument(std::string(what) + ": policy shape does not match the model");
    }
}

void check_gamma(double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in [0, 1)");
}

/**
 * Underdetermined flow system M x = rhs with M of full row rank
 * (its leading square block is I - gamma P with P substochastic).
 * Solves min ||M^T y - rhs|| through M M^T y = M rhs, and the
 * minimum-norm preimage of a vector through the same factorization.
 */
class FlowLeastSquares {
   public:
    FlowLeastSquares(const ColMajorSparse& m, const ExactSolveOptions& options,
                     SolveDiagnostics& diagnostics)
        : m_(m), options_(options), diagnostics_(diagnostics) {
        gram_ = m_ * ColMajorSparse(m_.transpose());
        ColMajorSparse shifted = gram_;
        for (Index i = 0; i < shifted.rows(); ++i) shifted.coeffRef(i, i) += options_.ridge;
        ldlt_.compute(shifted);
        if (ldlt_.info() != Eigen::Success) {
            dense_fallback_ = true;
            diagnostics_.rank_deficient = true;
            diagnostics_.notes.emplace_back("sparse factorization failed; used dense least squares");
            dense_ = Matrix(gram_).completeOrthogonalDecomposition();
        }
    }

    /// argmin_y ||M^T y - rhs||.
    Vector solve_transposed(const Vector& rhs) const { return solve_gram(m_ * rhs); }

    /// Minimum-norm nu with M nu = x.
    Vector min_norm_preimage(const Vector& x) const {
        return ColMajorSparse(m_.transpose()) * solve_gram(x);
    }

   private:
    Vector solve_gram(const Vector& rhs) const {
        if (dense_fallback_) return dense_.solve(rhs);
        Vector y = ldlt_.solve(rhs);
        for (int k = 0; k < options_.refinement_steps; ++k) {
            const Vector residual = rhs - gram_ * y;
            y += ldlt_.solve(residual);
        }
        if (!y.allFinite()) throw NumericalError("flow least squares produced non-finite values");
        return y;
    }

    ColMajorSparse m_;
    ColMajorSparse gram_;
    ExactSolveOptions options_;
    SolveDiagnostics& diagnostics_;
    Eigen::SimplicialLDLT<ColMajorSparse> ldlt_;
    bool dense_fallback_ = false;
    Eigen::CompleteOrthogonalDecomposition<Matrix> dense_;
};

/// Maps a sparse set of ids onto consecutive columns, rows first.
class IdMap {
   public:
    Index add(Index id) {
        auto [it, inserted] = index_.try_emplace(id, static_cast<Index>(ids_.size()));
        if (inserted) ids_.push_back(id);
        return it->second;
    }
    Index size() const { return static_cast<Index>(ids_.size()); }
    Index id(Index col) const { return ids_[static_cast<std::size_t>(col)]; }
    bool contains(Index id) const { return index_.count(id) > 0; }
    Index at(Index id) const { return index_.at(id); }

   private:
    std::map<Index, Index> index_;
    std::vector<Index> ids_;
};

CorrectionTable empty_table(Index num_pairs) {
    CorrectionTable table;
    table.values = Vector::Constant(num_pairs, kNaN);
    table.defined.assign(static_cast<std::size_t>(num_pairs), false);
    return table;
}

/**
 * Solves the statewise least-squares flow system for the row states with the
 * given backup weights G(s, s'), returning w(s) on rows (NaN elsewhere).
 */
Vector statewise_flow_solve(const EmpiricalModel& model, const SparseMatrix& backup, double gamma,
                            const ExactSolveOptions& options, SolveDiagnostics& diagnostics) {
    const Vector state_w = model.state_weight();
    IdMap cols;
    for (Index s = 0; s < model.num_states; ++s)
        if (state_w(s) > 0.0) cols.add(s);
    const Index n_rows = cols.size();
    std::vector<Eigen::Triplet<double>> entries;
    for (Index r = 0; r < n_rows; ++r) {
        const Index s = cols.id(r);
        entries.emplace_back(r, r, 1.0);
        for (SparseMatrix::InnerIterator it(backup, s); it; ++it) {
            entries.emplace_back(r, cols.add(it.col()), -gamma * it.value());
        }
    }
    diagnostics.unobserved_backup_targets = cols.size() - n_rows;
    ColMajorSparse m(n_rows, cols.size());
    m.setFromTriplets(entries.begin(), entries.end());

    Vector rhs = Vector::Zero(cols.size());
    double dropped = 0.0;
    for (Index s = 0; s < model.num_states; ++s) {
        if (model.init_weight(s) == 0.0) continue;
        if (cols.contains(s)) {
            rhs(cols.at(s)) = (1.0 - gamma) * model.init_weight(s);
        } else {
            dropped += model.init_weight(s);
        }
    }
    diagnostics.dropped_initial_mass = dropped;

    FlowLeastSquares solver(m, options, diagnostics);
    const Vector flow = solver.solve_transposed(rhs);
    Vector w = Vector::Constant(model.num_states, kNaN);
    for (Index r = 0; r < n_rows; ++r) w(cols.id(r)) = flow(r) / state_w(cols.id(r));
    return w;
}

/// G(s, s') = sum_a d(a|s) pi(a|s)/mu(a|s) P(s'|s,a) over observed pairs.
SparseMatrix ratio_weighted_backup(const EmpiricalModel& model, const StochasticPolicy& target,
                                   const StochasticPolicy& behavior) {
    const Vector state_w = model.state_weight();
    std::vector<Eigen::Triplet<double>> entries;
    for (Index s = 0; s < model.num_states; ++s) {
        if (state_w(s) <= 0.0) continue;
        for (Index a = 0; a < model.num_actions; ++a) {
            const double pi = target.prob(s, a);
            const double mu = behavior.prob(s, a);
            if (pi > 0.0 && mu <= 0.0) {
                std::ostringstream msg;
                msg << "behavior policy has zero probability where the target is positive at (s="
                    << s << ", a=" << a << ")";
                throw InvalidArgument(msg.str());
            }
            const Index pair = s * model.num_actions + a;
            if (!model.observed(pair) || pi == 0.0) continue;
            const double scale = model.weight(pair) / state_w(s) * pi / mu;
            for (SparseMatrix::InnerIterator it(model.cond_next, pair); it; ++it) {
                entries.emplace_back(s, it.col(), scale * it.value());
            }
        }
    }
    SparseMatrix g(model.num_states, model.num_states);
    g.setFromTriplets(entries.begin(), entries.end());
    return g;
}

CorrectionTable lift_state_corrections(const EmpiricalModel& model, const Vector& state_w,
                                       const StochasticPolicy& target,
                                       const StochasticPolicy& behavior) {
    CorrectionTable table = empty_table(model.num_pairs());
    table.state_values = state_w;
    for (Index s = 0; s < model.num_states; ++s) {
        for (Index a = 0; a < model.num_actions; ++a) {
            const Index pair = s * model.num_actions + a;
            if (!model.observed(pair) || !std::isfinite(state_w(s))) continue;
            table.values(pair) = state_w(s) * target.prob(s, a) / behavior.prob(s, a);
            table.defined[static_cast<std::size_t>(pair)] = true;
        }
    }
    return table;
}

}  // namespace

Vector EmpiricalModel::state_weight() const {
    return weight.reshaped(num_actions, num_states).colwise().sum().transpose();
}

double CorrectionTable::mean_under(const EmpiricalModel& model) const {
    double total = 0.0;
    for (Index i = 0; i < values.size(); ++i)
        if (defined[static_cast<std::size_t>(i)]) total += model.weight(i) * values(i);
    return total;
}

EmpiricalModel build_empirical_model(const TransitionDataset& data) {
    data.validate();
    if (data.transitions.empty()) throw InvalidArgument("build_empirical_model: empty dataset");
    EmpiricalModel model;
    model.num_states = data.num_states;
    model.num_actions = data.num_actions;
    const Index n_pairs = model.num_pairs();
    Vector counts = Vector::Zero(n_pairs);
    Vector reward_sum = Vector::Zero(n_pairs);
    std::vector<Eigen::Triplet<double>> next_counts;
    next_counts.reserve(data.transitions.size());
    for (const auto& t : data.transitions) {
        const Index pair = t.state * model.num_actions + t.action;
        counts(pair) += 1.0;
        reward_sum(pair) += t.reward;
        next_counts.emplace_back(pair, t.next_state, 1.0);
    }
    SparseMatrix next(n_pairs, model.num_states);
    next.setFromTriplets(next_counts.begin(), next_counts.end());
    model.support_mask.resize(static_cast<std::size_t>(n_pairs));
    model.avg_reward = Vector::Zero(n_pairs);
    for (Index p = 0; p < n_pairs; ++p) {
        const bool seen = counts(p) > 0.0;
        model.support_mask[static_cast<std::size_t>(p)] = seen;
        if (!seen) continue;
        model.avg_reward(p) = reward_sum(p) / counts(p);
        next.row(p) /= counts(p);
    }
    model.cond_next = std::move(next);
    model.weight = counts / counts.sum();
    model.init_weight = Vector::Zero(model.num_states);
    for (int s : data.initial_states) model.init_weight(s) += 1.0;
    model.init_weight /= static_cast<double>(data.initial_states.size());
    return model;
}

EmpiricalModel build_empirical_model(const TransitionDataset& data, Index num_states,
                                     Index num_actions) {
    if (data.num_states != num_states || data.num_actions != num_actions) {
        throw InvalidArgument("build_empirical_model: dataset dimensions do not match");
    }
    return build_empirical_model(data);
}

EmpiricalModel population_model(const TabularMdp& mdp, const StateActionDistribution& data_dist) {
    if (data_dist.probs.size() != mdp.num_pairs()) {
        throw InvalidArgument("population_model: distribution size does not match the MDP");
    }
    EmpiricalModel model;
    model.num_states = mdp.num_states();
    model.num_actions = mdp.num_actions();
    model.weight = data_dist.probs / data_dist.probs.sum();
    model.cond_next = mdp.transition();
    model.avg_reward = mdp.reward_vector();
    model.init_weight = mdp.initial_dist();
    model.support_mask.resize(static_cast<std::size_t>(mdp.num_pairs()));
    for (Index p = 0; p < mdp.num_pairs(); ++p) {
        const bool seen = model.weight(p) > 0.0;
        model.support_mask[static_cast<std::size_t>(p)] = seen;
        if (!seen) {
            model.cond_next.row(p) *= 0.0;
            model.avg_reward(p) = 0.0;
        }
    }
    model.cond_next.prune(0.0);
    return model;
}

DualDiceExactSolution solve_dualdice_exact(const EmpiricalModel& model,
                                           const StochasticPolicy& target, double gamma,
                                           const ExactSolveOptions& options) {
    check_policy(model, target, "solve_dualdice_exact");
    check_gamma(gamma);
    const Index nA = model.num_actions;

    // Rows: observed pairs. Columns: observed pairs first, then backup targets.
    IdMap cols;
    for (Index p = 0; p < model.num_pairs(); ++p)
        if (model.observed(p) && model.weight(p) > 0.0) cols.add(p);
    const Index n_rows = cols.size();
    if (n_rows == 0) throw InvalidArgument("solve_dualdice_exact: model has no observed pairs");

    std::vector<Eigen::Triplet<double>> entries;
    for (Index r = 0; r < n_rows; ++r) {
        const Index pair = cols.id(r);
        entries.emplace_back(r, r, 1.0);
        for (SparseMatrix::InnerIterator it(model.cond_next, pair); it; ++it) {
            const Index next = it.col();
            for (Index a = 0; a < nA; ++a) {
                const double pi = target.prob(next, a);
                if (pi > 0.0) entries.emplace_back(r, cols.add(next * nA + a), -gamma * it.value() * pi);
            }
        }
    }
    ColMajorSparse m(n_rows, cols.size());
    m.setFromTriplets(entries.begin(), entries.end());

    DualDiceExactSolution solution;
    CorrectionTable& table = solution.corrections;
    table = empty_table(model.num_pairs());
    SolveDiagnostics& diag = table.diagnostics;
    diag.unobserved_backup_targets = cols.size() - n_rows;

    Vector rhs = Vector::Zero(cols.size());
    for (Index s = 0; s < model.num_states; ++s) {
        if (model.init_weight(s) == 0.0) continue;
        for (Index a = 0; a < nA; ++a) {
            const double mass = model.init_weight(s) * target.prob(s, a);
            if (mass == 0.0) continue;
            if (cols.contains(s * nA + a)) {
                rhs(cols.at(s * nA + a)) = (1.0 - gamma) * mass;
            } else {
                diag.dropped_initial_mass += mass;
            }
        }
    }
    if (diag.unobserved_backup_targets > 0) {
        diag.notes.emplace_back(std::to_string(diag.unobserved_backup_targets) +
                                " backup targets are unobserved; minimum-norm solution");
    }
    if (diag.dropped_initial_mass > 0.0) {
        diag.notes.emplace_back("initial pairs outside the data support were dropped");
    }

    FlowLeastSquares solver(m, options, diag);
    const Vector flow = solver.solve_transposed(rhs);
    Vector residuals(n_rows);
    for (Index r = 0; r < n_rows; ++r) {
        const Index pair = cols.id(r);
        residuals(r) = flow(r) / model.weight(pair);
        table.values(pair) = residuals(r);
        table.defined[static_cast<std::size_t>(pair)] = true;
    }
    const Vector nu_cols = solver.min_norm_preimage(residuals);
    solution.nu = Vector::Zero(model.num_pairs());
    for (Index c = 0; c < cols.size(); ++c) solution.nu(cols.id(c)) = nu_cols(c);
    return solution;
}

CorrectionTable solve_dualdice_exact_statewise(const EmpiricalModel& model,
                                               const StochasticPolicy& target,
                                               const StochasticPolicy& behavior, double gamma,
                                               const ExactSolveOptions& options) {
    check_policy(model, target, "solve_dualdice_exact_statewise");
    check_policy(model, behavior, "solve_dualdice_exact_statewise");
    check_gamma(gamma);
    const SparseMatrix backup = ratio_weighted_backup(model, target, behavior);
    SolveDiagnostics diag;
    const Vector state_w = statewise_flow_solve(model, backup, gamma, options, diag);
    CorrectionTable table = lift_state_corrections(model, state_w, target, behavior);
    table.diagnostics = std::move(diag);
    return table;
}

CorrectionTable solve_td_exact(const EmpiricalModel& model, const StochasticPolicy& target,
                               const StochasticPolicy& behavior, double gamma) {
    check_policy(model, target, "solve_td_exact");
    check_policy(model, behavior, "solve_td_exact");
    check_gamma(gamma);
    const SparseMatrix backup = ratio_weighted_backup(model, target, behavior);
    const Vector state_w = model.state_weight();
    const Index nS = model.num_states;

    // u = D_s w is the empirical target occupancy: (I - gamma G^T) u = (1-gamma) beta.
    ColMajorSparse system(nS, nS);
    system.setIdentity();
    system -= gamma * ColMajorSparse(backup.transpose());
    const Vector rhs = (1.0 - gamma) * model.init_weight;

    SolveDiagnostics diag;
    Vector occupancy;
    Eigen::SparseLU<ColMajorSparse> lu;
    lu.analyzePattern(system);
    lu.factorize(system);
    if (lu.info() == Eigen::Success) occupancy = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !occupancy.allFinite()) {
        diag.rank_deficient = true;
        diag.notes.emplace_back("singular flow system; minimum-norm solution");
        occupancy = Matrix(system).completeOrthogonalDecomposition().solve(rhs);
    }
    Vector w = Vector::Constant(nS, kNaN);
    for (Index s = 0; s < nS; ++s) {
        if (state_w(s) > 0.0) {
            w(s) = occupancy(s) / state_w(s);
        } else if (occupancy(s) > 0.0) {
            ++diag.unobserved_backup_targets;
        }
    }
    CorrectionTable table = lift_state_corrections(model, w, target, behavior);
    table.diagnostics = std::move(diag);
    return table;
}

double ope_from_corrections(const CorrectionTable& corrections, const EmpiricalModel& model,
                            bool clip_at_zero) {
    if (corrections.values.size() != model.num_pairs()) {
        throw InvalidArgument("ope_from_corrections: correction table does not match the model");
    }
    double total = 0.0;
    for (Index p = 0; p < model.num_pairs(); ++p) {
        if (!corrections.defined[static_cast<std::size_t>(p)] || !model.observed(p)) continue;
        double w = corrections.values(p);
        if (clip_at_zero && w < 0.0) w = 0.0;
        total += model.weight(p) * w * model.avg_reward(p);
    }
    return total;
}

CorrectionTable true_corrections(const TabularMdp& mdp, const StochasticPolicy& target,
                                 const StateActionDistribution& data_dist) {
    const Vector d_pi = stationary_distribution(mdp, target).probs;
    CorrectionTable table = empty_table(mdp.num_pairs());
    const double total = data_dist.probs.sum();
    for (Index p = 0; p < mdp.num_pairs(); ++p) {
        if (data_dist.probs(p) <= 0.0) continue;
        table.values(p) = d_pi(p) / (data_dist.probs(p) / total);
        table.defined[static_cast<std::size_t>(p)] = true;
    }
    return table;
}

}  // namespace dualdice
