#pragma once

#include "dualdice/mdp.hpp"

#include <cmath>
#include <vector>

namespace dualdice::testing {

/// Two states, one action: s0 -> s1 -> s1, starting in s0.
inline TabularMdp two_state_chain(double gamma, double r0 = 0.0, double r1 = 1.0) {
    SparseMatrix t(2, 2);
    t.insert(0, 1) = 1.0;
    t.insert(1, 1) = 1.0;
    Matrix reward(2, 1);
    reward << r0, r1;
    Vector beta(2);
    beta << 1.0, 0.0;
    return TabularMdp(2, 1, t, reward, Matrix::Zero(2, 1), beta, gamma);
}

/**
 * Dense (I - gamma P^pi)^-1 oracle for the discounted occupancy, written
 * independently of the library's sparse solver:
 * d = (1 - gamma) (I - gamma P^T)^-1 beta_pi.
 */
inline Vector dense_occupancy(const TabularMdp& mdp, const StochasticPolicy& pi) {
    const Index n = mdp.num_pairs();
    const Index nA = mdp.num_actions();
    Matrix p = Matrix::Zero(n, n);
    const Matrix t = Matrix(mdp.transition());
    for (Index sa = 0; sa < n; ++sa)
        for (Index s2 = 0; s2 < mdp.num_states(); ++s2)
            for (Index a2 = 0; a2 < nA; ++a2) p(sa, s2 * nA + a2) = t(sa, s2) * pi.prob(s2, a2);
    Vector beta_pi(n);
    for (Index s = 0; s < mdp.num_states(); ++s)
        for (Index a = 0; a < nA; ++a) beta_pi(s * nA + a) = mdp.initial_dist()(s) * pi.prob(s, a);
    const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * p.transpose();
    return (1.0 - mdp.gamma()) * system.fullPivLu().solve(beta_pi);
}

/// Time-t marginal over pairs by explicit matrix powers.
inline Vector pair_marginal_at(const TabularMdp& mdp, const StochasticPolicy& pi, int t) {
    const Index nA = mdp.num_actions();
    const Matrix trans = Matrix(mdp.transition());
    Vector state = mdp.initial_dist();
    for (int k = 0; k < t; ++k) {
        Vector next = Vector::Zero(mdp.num_states());
        for (Index s = 0; s < mdp.num_states(); ++s)
            for (Index a = 0; a < nA; ++a) next += state(s) * pi.prob(s, a) * trans.row(s * nA + a).transpose();
        state = next;
    }
    Vector out(mdp.num_pairs());
    for (Index s = 0; s < mdp.num_states(); ++s)
        for (Index a = 0; a < nA; ++a) out(s * nA + a) = state(s) * pi.prob(s, a);
    return out;
}

inline double max_abs_diff_defined(const Vector& a, const Vector& b) {
    double worst = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        if (std::isnan(a(i)) || std::isnan(b(i))) continue;
        worst = std::max(worst, std::abs(a(i) - b(i)));
    }
    return worst;
}

}  // namespace dualdice::testing
